#include "soke/motion_io.hpp"

#include <fstream>
#include <json.hpp>

#include "soke/error.hpp"

namespace soke {

using nlohmann::json;

std::string motion_to_json_line(const SignSample& sample) {
  const MotionSequence& m = sample.motion;
  json frames = json::array();
  for (std::size_t t = 0; t < m.num_frames(); ++t) {
    auto row = m.frame(t);
    frames.push_back(std::vector<float>(row.begin(), row.end()));
  }
  json j = {{"text", sample.text}, {"lang", m.language()}, {"fps", m.fps()}, {"frames", std::move(frames)}};
  return j.dump();
}

SignSample motion_from_json_line(const std::string& line, const PartLayout& layout) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("motion file: ") + e.what());
  }
  if (!j.is_object() || !j.contains("frames") || !j.contains("text")) {
    throw InputError("motion file: record needs \"text\" and \"frames\"");
  }
  const auto& rows = j.at("frames");
  if (!rows.is_array() || rows.empty()) throw InputError("motion file: \"frames\" must be a non-empty array");
  std::vector<float> data;
  data.reserve(rows.size() * layout.dim());
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != layout.dim()) {
      throw LayoutError("motion file: frame has " + std::to_string(row.size()) + " values, layout expects " +
                        std::to_string(layout.dim()));
    }
    for (const auto& v : row) data.push_back(v.get<float>());
  }
  SignSample s;
  s.text = j.at("text").get<std::string>();
  s.motion = MotionSequence(std::move(data), rows.size(), layout, j.value("fps", 25.0), j.value("lang", "ASL"));
  return s;
}

void write_motion_file(const std::filesystem::path& path, const std::vector<SignSample>& samples) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& s : samples) out << motion_to_json_line(s) << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<SignSample> read_motion_file(const std::filesystem::path& path, const PartLayout& layout) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<SignSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(motion_from_json_line(line, layout));
  }
  return out;
}

}  // namespace soke
