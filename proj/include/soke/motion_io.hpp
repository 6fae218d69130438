#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "soke/synth.hpp"

namespace soke {

/// One JSON object per line: {"text", "lang", "fps", "frames": [[...d] x T]}.
void write_motion_file(const std::filesystem::path& path, const std::vector<SignSample>& samples);
std::vector<SignSample> read_motion_file(const std::filesystem::path& path, const PartLayout& layout);

std::string motion_to_json_line(const SignSample& sample);
SignSample motion_from_json_line(const std::string& line, const PartLayout& layout);

}  // namespace soke
