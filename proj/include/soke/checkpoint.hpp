#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "soke/grad.hpp"

namespace soke::grad {

/// Binary checkpoint: magic "SOKEckpt1", u32 entry count, then per entry
/// u32 name length, name bytes, u32 rank, u32 dims, little-endian f32 payload.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& params);
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& params);

struct CheckpointEntry {
  Shape shape;
  std::vector<float> data;
};
std::map<std::string, CheckpointEntry> read_checkpoint(std::istream& in);
std::map<std::string, CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `params` (names and shapes must match exactly).
void restore_parameters(const std::map<std::string, CheckpointEntry>& entries, const std::vector<NamedTensor>& params);

}  // namespace soke::grad
