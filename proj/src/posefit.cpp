#include "soke/posefit.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <optional>
#include <set>

#include "soke/error.hpp"

namespace soke::posefit {

using grad::Real;

namespace {

std::vector<int> joint_indices(const std::vector<std::string>& names, const KinematicChain& chain) {
  std::vector<int> out;
  for (const auto& n : names) out.push_back(chain.joint_index(n));
  return out;
}

Tensor repeat_row(std::span<const double> row, std::size_t rows) {
  std::vector<Real> v;
  v.reserve(rows * row.size());
  for (std::size_t r = 0; r < rows; ++r) v.insert(v.end(), row.begin(), row.end());
  return Tensor::from({rows, row.size()}, std::move(v));
}

}  // namespace

void Observation2D::validate() const {
  for (const auto& j : joints) {
    if (!std::isfinite(j[0]) || !std::isfinite(j[1])) throw InputError("observation: non-finite coordinate");
    if (!(j[2] >= 0.0 && j[2] <= 1.0)) throw InputError("observation: confidence outside [0, 1]");
  }
}

void Camera::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("camera: scale must be positive");
  if (!std::isfinite(tx) || !std::isfinite(ty)) throw ConfigError("camera: non-finite translation");
}

void FitConfig::validate() const {
  if (!(w_rec > 0.0)) throw ConfigError("posefit: w_rec must be positive");
  if (w_temp < 0.0 || w_reg < 0.0) throw ConfigError("posefit: weights must be non-negative");
  if (rec_smoothing < 0.0) throw ConfigError("posefit: rec_smoothing must be non-negative");
  if (tolerance < 0.0) throw ConfigError("posefit: tolerance must be non-negative");
  if (!(initial_step > 0.0)) throw ConfigError("posefit: initial_step must be positive");
  if (!(shrink > 0.0 && shrink < 1.0)) throw ConfigError("posefit: shrink outside (0, 1)");
  if (!(armijo > 0.0 && armijo < 1.0)) throw ConfigError("posefit: armijo constant outside (0, 1)");
  if (observed_joints.empty()) throw ConfigError("posefit: no observed joints");
  if (refined_joints.empty()) throw ConfigError("posefit: no refined joints");
}

nlohmann::json FitConfig::to_json() const {
  return {{"w_rec", w_rec},
          {"w_temp", w_temp},
          {"w_reg", w_reg},
          {"rec_smoothing", rec_smoothing},
          {"max_iterations", max_iterations},
          {"tolerance", tolerance},
          {"initial_step", initial_step},
          {"shrink", shrink},
          {"history", history},
          {"armijo", armijo},
          {"max_backtracks", max_backtracks},
          {"optimize_camera", optimize_camera},
          {"observed_joints", observed_joints},
          {"refined_joints", refined_joints}};
}

FitConfig FitConfig::from_json(const nlohmann::json& j) {
  FitConfig c;
  const nlohmann::json defaults = c.to_json();
  if (!j.is_object()) throw ConfigError("posefit: config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("posefit: unknown key '" + key + "'");
  }
  try {
    c.w_rec = j.value("w_rec", c.w_rec);
    c.w_temp = j.value("w_temp", c.w_temp);
    c.w_reg = j.value("w_reg", c.w_reg);
    c.rec_smoothing = j.value("rec_smoothing", c.rec_smoothing);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.initial_step = j.value("initial_step", c.initial_step);
    c.shrink = j.value("shrink", c.shrink);
    c.history = j.value("history", c.history);
    c.armijo = j.value("armijo", c.armijo);
    c.max_backtracks = j.value("max_backtracks", c.max_backtracks);
    c.optimize_camera = j.value("optimize_camera", c.optimize_camera);
    c.observed_joints = j.value("observed_joints", c.observed_joints);
    c.refined_joints = j.value("refined_joints", c.refined_joints);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("posefit: ") + e.what());
  }
  c.validate();
  return c;
}

Eigen::MatrixX2d project_weak(const Points3& points, const Camera& cam) {
  Eigen::MatrixX2d out = cam.scale * points.leftCols<2>();
  out.col(0).array() += cam.tx;
  out.col(1).array() += cam.ty;
  return out;
}

double loss_rec(const Points3& points, const Observation2D& obs, const Camera& cam, std::span<const int> observed,
                double smoothing) {
  auto rho = [smoothing](double r) {
    return smoothing > 0 ? std::sqrt(r * r + smoothing * smoothing) - smoothing : std::abs(r);
  };
  if (obs.joints.size() != observed.size()) throw InputError("loss_rec: observation/joint count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const auto& o = obs.joints[i];
    const double x = cam.scale * points(observed[i], 0) + cam.tx;
    const double y = cam.scale * points(observed[i], 1) + cam.ty;
    total += o[2] * (rho(o[0] - x) + rho(o[1] - y));
  }
  return total;
}

double loss_temp(const std::vector<Points3>& points, const KinematicChain& chain) {
  double total = 0.0;
  const auto joints = static_cast<Eigen::Index>(chain.num_joints());
  for (std::size_t f = 1; f < points.size(); ++f) {
    const Points3 d = points[f] - points[f - 1];
    total += d.norm() + d.topRows(joints).norm();
  }
  return total;
}

double loss_reg(std::span<const double> theta) {
  double s = 0.0;
  for (double v : theta) s += v * v;
  return std::sqrt(s);
}

// ---- differentiable objective ---------------------------------------------------

FitObjective::FitObjective(const MotionSequence& init, std::vector<Observation2D> obs, const KinematicChain& chain,
                           const FitConfig& config)
    : init_(init), obs_(std::move(obs)), chain_(chain), config_(config) {
  config_.validate();
  const std::size_t t = init_.num_frames();
  if (t == 0) throw InputError("posefit: empty initial sequence");
  std::sort(obs_.begin(), obs_.end(), [](const auto& a, const auto& b) { return a.frame_idx < b.frame_idx; });
  if (obs_.size() != t) {
    throw InputError("posefit: " + std::to_string(obs_.size()) + " observation frames for " + std::to_string(t) +
                     " pose frames");
  }
  refined_ = joint_indices(config_.refined_joints, chain_);
  observed_ = joint_indices(config_.observed_joints, chain_);
  if (std::set<int>(refined_.begin(), refined_.end()).size() != refined_.size())
    throw ConfigError("posefit: duplicate refined joint");
  const Slice body = init_.layout().body_rotation_slice();
  refined_slot_.assign(chain_.num_joints(), -1);
  for (std::size_t r = 0; r < refined_.size(); ++r) {
    if (chain_.param_offsets[refined_[r]] + 3 > body.offset + body.width)
      throw ConfigError("posefit: refined joint '" + config_.refined_joints[r] + "' is not an upper-body joint");
    refined_slot_[refined_[r]] = static_cast<int>(r);
  }

  std::vector<Real> target(t * 2 * observed_.size());
  obs_weights_.assign(target.size(), 0.0);
  for (std::size_t f = 0; f < t; ++f) {
    const auto& o = obs_[f];
    if (o.frame_idx != f) throw InputError("posefit: observation frame indices must be 0..T-1");
    if (o.joints.size() != observed_.size())
      throw InputError("posefit: frame " + std::to_string(f) + " has " + std::to_string(o.joints.size()) +
                       " joints, expected " + std::to_string(observed_.size()));
    o.validate();
    for (std::size_t i = 0; i < observed_.size(); ++i) {
      for (int c = 0; c < 2; ++c) {
        const std::size_t k = f * 2 * observed_.size() + 2 * i + c;
        target[k] = o.joints[i][c];
        obs_weights_[k] = o.joints[i][2];
      }
    }
  }
  obs_points_ = Tensor::from({t, 2 * observed_.size()}, std::move(target));

  fixed_local_.resize(chain_.num_joints());
  for (std::size_t j = 0; j < chain_.num_joints(); ++j) {
    if (refined_slot_[j] >= 0) continue;
    std::vector<Real> rot(t * 9);
    const std::size_t c = chain_.param_offsets[j];
    for (std::size_t f = 0; f < t; ++f) {
      const auto fr = init_.frame(f);
      const Eigen::Matrix3d m = axis_angle_to_matrix(Eigen::Vector3d(fr[c], fr[c + 1], fr[c + 2]));
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) rot[9 * f + 3 * a + b] = m(a, b);
    }
    fixed_local_[j] = Tensor::from({t, 9}, std::move(rot));
  }
  length_unit_ = std::max(chain_.mean_bone_length(), 1e-12);
}

FitObjective::Graph FitObjective::build(const Tensor& theta, const Tensor& camera) const {
  using namespace grad;
  const std::size_t t = init_.num_frames();
  if (theta.rows() != t || theta.cols() != 3 * refined_.size()) throw ShapeError("posefit: theta has the wrong shape");
  if (camera.size() != 3) throw ShapeError("posefit: camera must have 3 entries");

  const std::size_t nj = chain_.num_joints();
  std::vector<Tensor> global(nj), pos(nj);
  for (std::size_t j = 0; j < nj; ++j) {
    const int slot = refined_slot_[j];
    const Tensor local = slot >= 0 ? rodrigues(slice_cols(theta, 3 * slot, 3 * slot + 3)) : fixed_local_[j];
    const Eigen::Vector3d& off = chain_.offsets[j];
    const int parent = chain_.parents[j];
    if (parent < 0) {
      global[j] = local;
      const Eigen::Vector3d p = chain_.root_position + off;
      pos[j] = repeat_row(std::span<const double>(p.data(), 3), t);
    } else {
      global[j] = mat3_mul(global[parent], local);
      pos[j] = add(pos[parent], mat3_vec(global[parent], repeat_row(std::span<const double>(off.data(), 3), t)));
    }
  }
  std::vector<Tensor> points = pos;
  for (const auto& site : chain_.sites) {
    points.push_back(
        add(pos[site.joint], mat3_vec(global[site.joint], repeat_row(std::span<const double>(site.offset.data(), 3), t))));
  }

  const Tensor s = slice_cols(camera, 0, 1);
  const Tensor shift = scale(slice_cols(camera, 1, 3), length_unit_);
  std::vector<Tensor> projected;
  for (int j : observed_) projected.push_back(add_row(mul_scalar(slice_cols(pos[j], 0, 2), s), shift));
  Graph g;
  g.rec = weighted_l1(sub(concat_cols(projected), obs_points_), obs_weights_, config_.rec_smoothing);

  g.temp = Tensor::scalar(0.0);
  if (t >= 2) {
    const Tensor all = concat_cols(points);
    const Tensor joints = concat_cols(pos);
    const Tensor dx = sub(slice_rows(all, 1, t), slice_rows(all, 0, t - 1));
    const Tensor dj = sub(slice_rows(joints, 1, t), slice_rows(joints, 0, t - 1));
    for (std::size_t f = 0; f + 1 < t; ++f) {
      g.temp = add(g.temp, add(l2_norm(slice_rows(dx, f, f + 1)), l2_norm(slice_rows(dj, f, f + 1))));
    }
  }
  g.reg = Tensor::scalar(0.0);
  for (std::size_t f = 0; f < t; ++f) g.reg = add(g.reg, l2_norm(slice_rows(theta, f, f + 1)));

  g.total = add(add(scale(g.rec, config_.w_rec), scale(g.temp, config_.w_temp)), scale(g.reg, config_.w_reg));
  return g;
}

Tensor FitObjective::initial_theta(bool requires_grad) const {
  const std::size_t t = init_.num_frames();
  std::vector<Real> v(t * 3 * refined_.size());
  for (std::size_t f = 0; f < t; ++f) {
    const auto fr = init_.frame(f);
    for (std::size_t r = 0; r < refined_.size(); ++r)
      for (int c = 0; c < 3; ++c) v[f * 3 * refined_.size() + 3 * r + c] = fr[chain_.param_offsets[refined_[r]] + c];
  }
  return Tensor::from({t, 3 * refined_.size()}, std::move(v), requires_grad);
}

Tensor FitObjective::camera_tensor(const Camera& cam, bool requires_grad) const {
  return Tensor::from({1, 3}, {cam.scale, cam.tx / length_unit_, cam.ty / length_unit_}, requires_grad);
}

Camera FitObjective::camera_from(std::span<const double> values) const {
  return {values[0], values[1] * length_unit_, values[2] * length_unit_};
}

MotionSequence FitObjective::assemble(std::span<const double> theta) const {
  MotionSequence out = init_;
  const std::size_t w = 3 * refined_.size();
  for (std::size_t f = 0; f < out.num_frames(); ++f) {
    auto fr = out.frame(f);
    for (std::size_t r = 0; r < refined_.size(); ++r)
      for (int c = 0; c < 3; ++c) fr[chain_.param_offsets[refined_[r]] + c] = static_cast<float>(theta[f * w + 3 * r + c]);
  }
  return out;
}

// ---- optimizer ----------------------------------------------------------------------

FitResult fit_sequence(const MotionSequence& init, const std::vector<Observation2D>& obs, const Camera& cam,
                       const FitConfig& config, const KinematicChain& chain) {
  cam.validate();
  const FitObjective objective(init, obs, chain, config);
  const Tensor theta0 = objective.initial_theta(false), cam0 = objective.camera_tensor(cam, false);
  std::vector<double> theta(theta0.value().begin(), theta0.value().end());
  std::vector<double> camv(cam0.value().begin(), cam0.value().end());
  const std::size_t t = init.num_frames();
  const std::size_t w = 3 * objective.refined().size();

  // Value and gradient at (theta, camv).
  auto evaluate = [&](const std::vector<double>& th, const std::vector<double>& cv, std::vector<double>* gradient) {
    const Tensor tt = Tensor::from({t, w}, th, gradient != nullptr);
    const Tensor ct = Tensor::from({1, 3}, cv, gradient != nullptr && config.optimize_camera);
    std::optional<grad::NoGradGuard> guard;
    if (!gradient) guard.emplace();
    const auto g = objective.build(tt, ct);
    FitRecord r;
    r.total = g.total.item();
    r.rec = g.rec.item();
    r.temp = g.temp.item();
    r.reg = g.reg.item();
    if (gradient) {
      grad::backward(g.total);
      gradient->assign(th.size() + 3, 0.0);
      if (tt.has_grad()) std::copy(tt.grad().begin(), tt.grad().end(), gradient->begin());
      if (ct.requires_grad() && ct.has_grad()) std::copy(ct.grad().begin(), ct.grad().end(), gradient->begin() + th.size());
    }
    return r;
  };

  FitResult result;
  std::vector<double> g;
  FitRecord current;
  try {
    current = evaluate(theta, camv, &g);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string("posefit: non-finite initial loss: ") + e.what());
  }
  if (!std::isfinite(current.total)) throw NonFiniteError("posefit: non-finite initial loss");
  result.log.push_back(current);

  // L-BFGS directions (gradient information only) with Armijo backtracking;
  // a trial is accepted only if it lowers the total loss enough.
  const std::size_t n = theta.size();
  auto join = [&](const std::vector<double>& th, const std::vector<double>& cv) {
    std::vector<double> x(th);
    x.insert(x.end(), cv.begin(), cv.end());
    return x;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  std::vector<double> x = join(theta, camv);
  std::deque<std::pair<std::vector<double>, std::vector<double>>> history;  // (s, y)
  result.stop_reason = "budget";
  for (std::size_t it = 1; it <= config.max_iterations; ++it) {
    if (dot(g, g) == 0.0) {
      result.stop_reason = "zero-gradient";
      break;
    }
    std::vector<double> dir(g);
    std::vector<double> alphas(history.size());
    for (std::size_t k = history.size(); k-- > 0;) {
      const auto& [sk, yk] = history[k];
      alphas[k] = dot(sk, dir) / dot(sk, yk);
      for (std::size_t i = 0; i < dir.size(); ++i) dir[i] -= alphas[k] * yk[i];
    }
    if (!history.empty()) {
      const auto& [sk, yk] = history.back();
      const double gamma = dot(sk, yk) / dot(yk, yk);
      for (double& v : dir) v *= gamma;
    } else {
      // First step: the largest coordinate moves by initial_step.
      double gmax = 0.0;
      for (double v : g) gmax = std::max(gmax, std::abs(v));
      for (double& v : dir) v *= config.initial_step / gmax;
    }
    for (std::size_t k = 0; k < history.size(); ++k) {
      const auto& [sk, yk] = history[k];
      const double beta = dot(yk, dir) / dot(sk, yk);
      for (std::size_t i = 0; i < dir.size(); ++i) dir[i] += (alphas[k] - beta) * sk[i];
    }
    for (double& v : dir) v = -v;
    double slope = dot(g, dir);
    if (!(slope < 0.0)) {
      // Not a descent direction: fall back to scaled steepest descent.
      history.clear();
      double gmax = 0.0;
      for (double v : g) gmax = std::max(gmax, std::abs(v));
      for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = -g[i] * config.initial_step / gmax;
      slope = dot(g, dir);
    }

    bool accepted = false;
    FitRecord trial;
    std::vector<double> th(n), cv(3);
    double alpha = 1.0;
    std::size_t backtracks = 0;
    for (; backtracks <= config.max_backtracks; ++backtracks, alpha *= config.shrink) {
      for (std::size_t i = 0; i < n; ++i) th[i] = x[i] + alpha * dir[i];
      for (std::size_t i = 0; i < 3; ++i) cv[i] = x[n + i] + alpha * dir[n + i];
      if (!(cv[0] > 0.0)) continue;
      try {
        trial = evaluate(th, cv, nullptr);
      } catch (const NonFiniteError&) {
        continue;
      }
      if (trial.total <= current.total + config.armijo * alpha * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      result.stop_reason = "line-search";
      break;
    }
    const double improvement = (current.total - trial.total) / std::max(std::abs(current.total), 1e-300);
    std::vector<double> x_new = join(th, cv), g_new;
    current = evaluate(th, cv, &g_new);
    current.iteration = it;
    current.step = alpha;
    current.backtracks = backtracks;
    result.log.push_back(current);

    std::vector<double> sk(x.size()), yk(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      sk[i] = x_new[i] - x[i];
      yk[i] = g_new[i] - g[i];
    }
    if (dot(sk, yk) > 1e-12 * std::sqrt(dot(sk, sk) * dot(yk, yk))) {
      history.emplace_back(std::move(sk), std::move(yk));
      if (history.size() > config.history) history.pop_front();
    }
    x = std::move(x_new);
    g = std::move(g_new);
    theta = th;
    camv = cv;
    if (improvement < config.tolerance) {
      result.stop_reason = "tolerance";
      break;
    }
  }
  result.motion = objective.assemble(theta);
  result.camera = objective.camera_from(camv);
  return result;
}

LossTerms evaluate_losses(const MotionSequence& motion, const std::vector<Observation2D>& obs, const Camera& cam,
                          const FitConfig& config, const KinematicChain& chain) {
  const auto observed = joint_indices(config.observed_joints, chain);
  const auto refined = joint_indices(config.refined_joints, chain);
  if (obs.size() != motion.num_frames()) throw InputError("posefit: observation/frame count mismatch");
  const auto points = forward_kinematics(motion, chain);
  LossTerms l;
  for (std::size_t f = 0; f < motion.num_frames(); ++f) {
    l.rec += loss_rec(points[f], obs[f], cam, observed, config.rec_smoothing);
    std::vector<double> theta;
    const auto fr = motion.frame(f);
    for (int j : refined)
      for (int c = 0; c < 3; ++c) theta.push_back(fr[chain.param_offsets[j] + c]);
    l.reg += loss_reg(theta);
  }
  l.temp = loss_temp(points, chain);
  l.total = config.w_rec * l.rec + config.w_temp * l.temp + config.w_reg * l.reg;
  return l;
}

std::vector<Observation2D> synthesize_observations(const MotionSequence& motion, const Camera& cam,
                                                   const FitConfig& config, const KinematicChain& chain) {
  const auto observed = joint_indices(config.observed_joints, chain);
  const auto points = forward_kinematics(motion, chain);
  std::vector<Observation2D> out;
  for (std::size_t f = 0; f < points.size(); ++f) {
    const Eigen::MatrixX2d p = project_weak(points[f], cam);
    Observation2D o;
    o.frame_idx = f;
    for (int j : observed) o.joints.push_back({p(j, 0), p(j, 1), 1.0});
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<Observation2D> read_observations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open observation file " + path.string());
  std::vector<Observation2D> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Observation2D o;
      o.frame_idx = j.at("frame_idx").get<std::size_t>();
      for (const auto& p : j.at("joints")) {
        if (p.size() != 3) throw InputError("joint entries must be [x, y, conf]");
        o.joints.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
      }
      o.validate();
      out.push_back(std::move(o));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_observations(const std::filesystem::path& path, const std::vector<Observation2D>& obs) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write observation file " + path.string());
  for (const auto& o : obs) {
    nlohmann::json j;
    j["frame_idx"] = o.frame_idx;
    j["joints"] = nlohmann::json::array();
    for (const auto& p : o.joints) j["joints"].push_back({p[0], p[1], p[2]});
    out << j.dump() << '\n';
  }
}

nlohmann::json fit_log_to_json(const FitRecord& r) {
  return {{"iteration", r.iteration}, {"total", r.total}, {"rec", r.rec},  {"temp", r.temp},
          {"reg", r.reg},             {"step", r.step},   {"backtracks", r.backtracks}};
}

}  // namespace soke::posefit
