#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "soke/grad.hpp"
#include "soke/kinematics.hpp"
#include "soke/motion.hpp"

namespace soke::posefit {

using grad::Tensor;

/// 2D keypoints of one frame for the observed joint subset, as (x, y, confidence).
struct Observation2D {
  std::size_t frame_idx = 0;
  std::vector<std::array<double, 3>> joints;

  void validate() const;  // finite coordinates, confidences in [0, 1]
};

struct Camera {
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;

  void validate() const;  // scale > 0
};

struct FitConfig {
  double w_rec = 1.0;
  double w_temp = 0.1;
  double w_reg = 1e-3;
  /// Pseudo-Huber width (observation units) applied to each |residual| of the
  /// reprojection term; 0 gives the exact L1 distance.
  double rec_smoothing = 1.0;
  std::size_t max_iterations = 1000;
  double tolerance = 1e-10;  // stop once an accepted step improves the loss by less than this (relative)
  double initial_step = 0.05;  // largest coordinate change of the first (steepest-descent) step
  double shrink = 0.5;         // backtracking factor
  double armijo = 1e-4;
  std::size_t history = 10;    // L-BFGS correction pairs
  std::size_t max_backtracks = 40;
  bool optimize_camera = true;
  std::vector<std::string> observed_joints = {"l_shoulder", "l_elbow", "l_wrist",
                                              "r_shoulder", "r_elbow", "r_wrist"};
  /// Upper-body joints whose rotations are refined. The wrists stay fixed with
  /// the hands: their rotation is the hand orientation.
  std::vector<std::string> refined_joints = {"pelvis",     "spine",   "chest",      "neck",   "head",
                                             "l_shoulder", "l_elbow", "r_shoulder", "r_elbow"};

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static FitConfig from_json(const nlohmann::json& j);
};

/// (x, y) = s * (X, Y) + (tx, ty) for every row.
Eigen::MatrixX2d project_weak(const Points3& points, const Camera& cam);

/// Confidence-weighted L1 distance between observed and projected joints.
/// `observed` lists the FK rows matching obs.joints; `smoothing` as in FitConfig.
double loss_rec(const Points3& points, const Observation2D& obs, const Camera& cam, std::span<const int> observed,
                double smoothing = 0.0);
/// sum_f |X_f - X_{f-1}|_2 + |J_f - J_{f-1}|_2 with X all FK points and J the
/// joints only; 0 for fewer than two frames.
double loss_temp(const std::vector<Points3>& points, const KinematicChain& chain);
/// Euclidean norm of the refined rotation parameters of one frame.
double loss_reg(std::span<const double> theta);

struct LossTerms {
  double total = 0.0, rec = 0.0, temp = 0.0, reg = 0.0;
};

/// The differentiable objective over refined rotations theta [T, 3R] and the
/// camera vector [1, 3] = (s, tx / L, ty / L), L the mean bone length (so all
/// variables share one scale).
class FitObjective {
 public:
  FitObjective(const MotionSequence& init, std::vector<Observation2D> obs, const KinematicChain& chain,
               const FitConfig& config);

  struct Graph {
    Tensor total, rec, temp, reg;
  };
  Graph build(const Tensor& theta, const Tensor& camera) const;

  Tensor initial_theta(bool requires_grad = true) const;
  Tensor camera_tensor(const Camera& cam, bool requires_grad = true) const;
  Camera camera_from(std::span<const double> values) const;
  /// init with the refined columns replaced; every other value is copied bit for bit.
  MotionSequence assemble(std::span<const double> theta) const;

  const std::vector<int>& refined() const { return refined_; }
  const std::vector<int>& observed() const { return observed_; }

 private:
  MotionSequence init_;
  std::vector<Observation2D> obs_;
  const KinematicChain& chain_;
  FitConfig config_;
  std::vector<int> refined_, observed_;
  std::vector<int> refined_slot_;  // per joint: index into refined_ or -1
  std::vector<Tensor> fixed_local_;  // per joint: [T, 9] rotations of the fixed joints
  Tensor obs_points_;
  std::vector<double> obs_weights_;
  double length_unit_ = 1.0;
};

struct FitRecord {
  std::size_t iteration = 0;
  double total = 0.0, rec = 0.0, temp = 0.0, reg = 0.0;
  double step = 0.0;
  std::size_t backtracks = 0;
};

struct FitResult {
  MotionSequence motion;
  Camera camera;
  std::vector<FitRecord> log;  // iteration 0 is the initial state, then one record per accepted step
  std::string stop_reason;     // "budget", "tolerance", "zero-gradient" or "line-search"
};

/// Descent on w_rec L_rec + w_temp L_temp + w_reg L_reg over the refined
/// upper-body rotations (and the camera unless frozen), using L-BFGS
/// directions and Armijo backtracking. Throws InputError when the
/// observations do not line up with the frames and NonFiniteError when the
/// initial loss is not finite.
FitResult fit_sequence(const MotionSequence& init, const std::vector<Observation2D>& obs, const Camera& cam,
                       const FitConfig& config, const KinematicChain& chain);

/// Loss terms of a pose sequence evaluated without autodiff (used as an oracle).
LossTerms evaluate_losses(const MotionSequence& motion, const std::vector<Observation2D>& obs, const Camera& cam,
                          const FitConfig& config, const KinematicChain& chain);

/// Clean observations of `motion` under `cam`, confidence 1.
std::vector<Observation2D> synthesize_observations(const MotionSequence& motion, const Camera& cam,
                                                   const FitConfig& config, const KinematicChain& chain);

/// JSON lines {"frame_idx": f, "joints": [[x, y, conf], ...]}.
std::vector<Observation2D> read_observations(const std::filesystem::path& path);
void write_observations(const std::filesystem::path& path, const std::vector<Observation2D>& obs);

nlohmann::json fit_log_to_json(const FitRecord& r);

}  // namespace soke::posefit
