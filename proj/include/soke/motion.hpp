#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace soke {

/// Body part handled by one tokenizer. Expression parameters ride with kBody.
enum class Part { kBody = 0, kLeftHand = 1, kRightHand = 2 };

inline constexpr std::array<Part, 3> kParts = {Part::kBody, Part::kLeftHand, Part::kRightHand};

constexpr std::size_t part_index(Part p) { return static_cast<std::size_t>(p); }
const char* part_name(Part p);  // "B", "LH", "RH"
Part part_from_name(const std::string& name);

/// Contiguous column range [offset, offset + width).
struct Slice {
  std::size_t offset = 0;
  std::size_t width = 0;
};

/// Parameter layout of one motion frame:
///   [body rotations | expression | left hand rotations | right hand rotations]
/// Rotations are axis-angle, three values per joint.
struct PartLayout {
  std::size_t body_joints = 11;
  std::size_t hand_joints_per_hand = 15;
  std::size_t expression_dims = 10;

  static constexpr std::size_t kRotationDims = 3;

  std::size_t dim() const {
    return kRotationDims * (body_joints + 2 * hand_joints_per_hand) + expression_dims;
  }
  std::size_t body_rotation_dims() const { return kRotationDims * body_joints; }
  std::size_t hand_dims() const { return kRotationDims * hand_joints_per_hand; }

  Slice part_slice(Part p) const;
  Slice body_rotation_slice() const { return {0, body_rotation_dims()}; }
  Slice expression_slice() const { return {body_rotation_dims(), expression_dims}; }

  bool operator==(const PartLayout&) const = default;
};

/// T x d motion, row-major f32 frames.
class MotionSequence {
 public:
  MotionSequence() = default;
  /// Validates T >= 1, row width d and finiteness; throws LayoutError / InputError.
  MotionSequence(std::vector<float> frames, std::size_t num_frames, PartLayout layout, double fps = 25.0,
                 std::string language = "ASL");

  static MotionSequence zeros(std::size_t num_frames, PartLayout layout, double fps = 25.0,
                              std::string language = "ASL");

  std::size_t num_frames() const { return num_frames_; }
  std::size_t dim() const { return layout_.dim(); }
  const PartLayout& layout() const { return layout_; }
  double fps() const { return fps_; }
  const std::string& language() const { return language_; }
  void set_language(std::string lang) { language_ = std::move(lang); }

  std::span<const float> frame(std::size_t t) const { return {frames_.data() + t * dim(), dim()}; }
  std::span<float> frame(std::size_t t) { return {frames_.data() + t * dim(), dim()}; }
  const std::vector<float>& data() const { return frames_; }

  bool operator==(const MotionSequence&) const = default;

 private:
  std::vector<float> frames_;
  std::size_t num_frames_ = 0;
  PartLayout layout_{};
  double fps_ = 25.0;
  std::string language_ = "ASL";
};

/// The columns of one part, T x d_p.
struct PartMotion {
  Part part = Part::kBody;
  std::size_t num_frames = 0;
  std::size_t width = 0;
  std::vector<float> frames;

  std::span<const float> frame(std::size_t t) const { return {frames.data() + t * width, width}; }
};

std::array<PartMotion, 3> split_parts(const MotionSequence& seq);

/// Inverse of split_parts. Throws LayoutError on width or length mismatch.
MotionSequence merge_parts(const std::array<PartMotion, 3>& parts, const PartLayout& layout, double fps = 25.0,
                           std::string language = "ASL");

}  // namespace soke
