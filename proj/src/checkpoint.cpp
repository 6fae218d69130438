#include "soke/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "soke/error.hpp"

namespace soke::grad {

namespace {

constexpr char kMagic[] = "SOKEckpt1";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw InputError("checkpoint: truncated");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& params) {
  out.write(kMagic, kMagicLen);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(out, static_cast<std::uint32_t>(p.tensor.shape().size()));
    for (std::size_t d : p.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (Real v : p.tensor.value()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!out) throw InputError("checkpoint: write failed");
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_checkpoint(out, params);
}

std::map<std::string, CheckpointEntry> read_checkpoint(std::istream& in) {
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw InputError("checkpoint: bad magic header");
  }
  std::map<std::string, CheckpointEntry> out;
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = get_u32(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw InputError("checkpoint: truncated name");
    CheckpointEntry e;
    const std::uint32_t rank = get_u32(in);
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.shape.push_back(get_u32(in));
      n *= e.shape.back();
    }
    e.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.data[i] = std::bit_cast<float>(get_u32(in));
    if (!out.emplace(std::move(name), std::move(e)).second) throw InputError("checkpoint: duplicate entry");
  }
  return out;
}

std::map<std::string, CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  return read_checkpoint(in);
}

void restore_parameters(const std::map<std::string, CheckpointEntry>& entries, const std::vector<NamedTensor>& params) {
  if (entries.size() != params.size()) throw InputError("checkpoint: parameter count mismatch");
  for (auto p : params) {
    auto it = entries.find(p.name);
    if (it == entries.end()) throw InputError("checkpoint: missing parameter " + p.name);
    if (it->second.shape != p.tensor.shape()) throw InputError("checkpoint: shape mismatch for " + p.name);
    auto dst = p.tensor.mutable_value();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = it->second.data[i];
  }
}

}  // namespace soke::grad
