#include "soke/motion.hpp"

#include <cmath>

#include "soke/error.hpp"

namespace soke {

const char* part_name(Part p) {
  switch (p) {
    case Part::kBody:
      return "B";
    case Part::kLeftHand:
      return "LH";
    case Part::kRightHand:
      return "RH";
  }
  return "?";
}

Part part_from_name(const std::string& name) {
  if (name == "B") return Part::kBody;
  if (name == "LH") return Part::kLeftHand;
  if (name == "RH") return Part::kRightHand;
  throw InputError("unknown body part '" + name + "'");
}

Slice PartLayout::part_slice(Part p) const {
  const std::size_t body = body_rotation_dims() + expression_dims;
  switch (p) {
    case Part::kBody:
      return {0, body};
    case Part::kLeftHand:
      return {body, hand_dims()};
    case Part::kRightHand:
      return {body + hand_dims(), hand_dims()};
  }
  return {};
}

MotionSequence::MotionSequence(std::vector<float> frames, std::size_t num_frames, PartLayout layout, double fps,
                               std::string language)
    : frames_(std::move(frames)), num_frames_(num_frames), layout_(layout), fps_(fps), language_(std::move(language)) {
  if (num_frames_ == 0) throw InputError("motion sequence needs at least one frame");
  if (frames_.size() != num_frames_ * layout_.dim()) {
    throw LayoutError("motion has " + std::to_string(frames_.size()) + " values, expected " +
                      std::to_string(num_frames_) + " x " + std::to_string(layout_.dim()));
  }
  for (float v : frames_) {
    if (!std::isfinite(v)) throw InputError("motion sequence contains a non-finite value");
  }
}

MotionSequence MotionSequence::zeros(std::size_t num_frames, PartLayout layout, double fps, std::string language) {
  return MotionSequence(std::vector<float>(num_frames * layout.dim(), 0.0f), num_frames, layout, fps,
                        std::move(language));
}

std::array<PartMotion, 3> split_parts(const MotionSequence& seq) {
  const PartLayout& layout = seq.layout();
  if (seq.data().size() != seq.num_frames() * layout.dim()) throw LayoutError("sequence does not match its layout");
  std::array<PartMotion, 3> out;
  for (Part p : kParts) {
    const Slice s = layout.part_slice(p);
    PartMotion& pm = out[part_index(p)];
    pm.part = p;
    pm.num_frames = seq.num_frames();
    pm.width = s.width;
    pm.frames.resize(seq.num_frames() * s.width);
    for (std::size_t t = 0; t < seq.num_frames(); ++t) {
      auto row = seq.frame(t);
      std::copy(row.begin() + s.offset, row.begin() + s.offset + s.width, pm.frames.begin() + t * s.width);
    }
  }
  return out;
}

MotionSequence merge_parts(const std::array<PartMotion, 3>& parts, const PartLayout& layout, double fps,
                           std::string language) {
  const std::size_t frames = parts[0].num_frames;
  std::vector<float> data(frames * layout.dim());
  for (Part p : kParts) {
    const PartMotion& pm = parts[part_index(p)];
    const Slice s = layout.part_slice(p);
    if (pm.part != p) throw LayoutError("parts are not in layout order");
    if (pm.width != s.width || pm.num_frames != frames || pm.frames.size() != frames * s.width) {
      throw LayoutError(std::string("part ") + part_name(p) + " does not match the layout");
    }
    for (std::size_t t = 0; t < frames; ++t) {
      std::copy(pm.frames.begin() + t * s.width, pm.frames.begin() + (t + 1) * s.width,
                data.begin() + t * layout.dim() + s.offset);
    }
  }
  return MotionSequence(std::move(data), frames, layout, fps, std::move(language));
}

}  // namespace soke
