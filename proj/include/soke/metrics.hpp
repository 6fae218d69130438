#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "soke/kinematics.hpp"
#include "soke/motion.hpp"

namespace soke::metrics {

struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Points3 apply(const Points3& p) const;
};

struct Alignment {
  Points3 aligned;
  Similarity transform;
  double residual = 0.0;  // sum of squared distances after alignment
};

/// Least-squares similarity (s, R, t) taking `a` onto `b`, det(R) = +1.
/// Throws DegenerateError when `a` has fewer than 3 points or is collinear.
Alignment procrustes_align(const Points3& a, const Points3& b);

/// Mean Euclidean distance between corresponding rows.
double frame_jpe(const Points3& gen, const Points3& ref);
/// frame_jpe after aligning gen onto ref.
double frame_pa_jpe(const Points3& gen, const Points3& ref);

struct DtwResult {
  double total = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> path;
  double normalized = 0.0;  // total / path length
};

/// Dynamic time warping over an n x m grid with steps (1,0), (0,1), (1,1).
/// Backtracking prefers the diagonal, then (1,0), then (0,1) on ties.
DtwResult dtw(std::size_t n, std::size_t m, const std::function<double(std::size_t, std::size_t)>& cost);
DtwResult dtw(const Eigen::MatrixXd& cost);

template <typename Track, typename Cost>
DtwResult dtw_tracks(const Track& gen, const Track& ref, Cost cost) {
  return dtw(gen.size(), ref.size(), [&](std::size_t i, std::size_t j) { return cost(gen[i], ref[j]); });
}

/// Rows of `points` listed in `index`.
Points3 select_points(const Points3& points, const std::vector<int>& index);

/// Procrustes alignment scope for the PA variants: one similarity per aligned
/// frame pair, or one for the whole sequence (fit on the matched frame pairs).
enum class PaScope { kFrame, kSequence };
PaScope pa_scope_from_name(const std::string& name);
std::string pa_scope_name(PaScope scope);

/// Path-normalized DTW joint errors of a generated motion against a reference.
/// PA alignment is solved on body and hand points together; subset errors are
/// read off the aligned points.
struct MotionComparison {
  double dtw_jpe_body = 0.0;
  double dtw_jpe_hand = 0.0;
  double dtw_pa_jpe_body = 0.0;
  double dtw_pa_jpe_hand = 0.0;
  double dtw_pa_jpe_mean() const { return 0.5 * (dtw_pa_jpe_body + dtw_pa_jpe_hand); }
  double dtw_jpe_mean() const { return 0.5 * (dtw_jpe_body + dtw_jpe_hand); }
};

MotionComparison compare_motion(const MotionSequence& gen, const MotionSequence& ref, const KinematicChain& chain,
                                PaScope scope = PaScope::kFrame);
/// Same on precomputed forward-kinematics tracks (all points per frame).
MotionComparison compare_tracks(const std::vector<Points3>& gen, const std::vector<Points3>& ref,
                                const KinematicChain& chain, PaScope scope = PaScope::kFrame);

/// Frame-by-frame Procrustes-aligned mean per-joint error over body and hand
/// points. Sequences must have equal length.
double pa_mpjpe(const MotionSequence& a, const MotionSequence& b, const KinematicChain& chain);

// ---- split evaluation --------------------------------------------------------

struct Generated {
  MotionSequence motion;
  std::size_t step_count = 0;
  std::size_t forward_passes = 0;
  double wall_ms = 0.0;
};

struct SampleRecord {
  std::string text;
  std::string language;
  std::size_t gen_frames = 0;
  std::size_t ref_frames = 0;
  MotionComparison errors;
  std::optional<double> recon_pa_mpjpe;
  std::size_t step_count = 0;
  std::size_t forward_passes = 0;
  double wall_ms = 0.0;
};

struct EvalReport {
  static constexpr int kSchemaVersion = 1;
  std::string split;
  std::string mode;
  PaScope pa_scope = PaScope::kFrame;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<SampleRecord> samples;

  /// Deterministic aggregates (means in sample order). Timing is kept apart.
  nlohmann::json aggregates() const;
  nlohmann::json timing() const;
  nlohmann::json to_json() const;
};

struct EvalSample {
  std::string text;
  MotionSequence reference;
};

using GenerateFn = std::function<Generated(const EvalSample&)>;
using ReconstructFn = std::function<MotionSequence(const MotionSequence&)>;

/// Runs `generate` on every sample (on up to `workers` threads) and scores the
/// outputs. When `reconstruct` is given, the tokenizer round-trip PA-MPJPE of
/// each reference is recorded as well.
EvalReport evaluate_split(const GenerateFn& generate, const std::vector<EvalSample>& split,
                          const KinematicChain& chain, PaScope scope = PaScope::kFrame,
                          const ReconstructFn& reconstruct = nullptr, std::size_t workers = 1);

}  // namespace soke::metrics
