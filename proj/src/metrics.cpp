#include "soke/metrics.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "soke/error.hpp"
#include "soke/parallel.hpp"

namespace soke::metrics {

Points3 Similarity::apply(const Points3& p) const {
  Points3 out = (scale * (p * rotation.transpose())).eval();
  out.rowwise() += translation.transpose();
  return out;
}

Alignment procrustes_align(const Points3& a, const Points3& b) {
  if (a.rows() != b.rows()) throw ShapeError("procrustes_align: point counts differ");
  const Eigen::Index n = a.rows();
  if (n < 3) throw DegenerateError("procrustes_align: need at least 3 points");

  const Eigen::RowVector3d mu_a = a.colwise().mean();
  const Eigen::RowVector3d mu_b = b.colwise().mean();
  const Points3 a0 = a.rowwise() - mu_a;
  const Points3 b0 = b.rowwise() - mu_b;

  // Collinear (or coincident) source points leave the rotation undetermined.
  Eigen::JacobiSVD<Eigen::MatrixXd> shape_svd(a0);
  const auto sv = shape_svd.singularValues();
  if (sv(0) <= 0.0 || sv(1) <= 1e-10 * sv(0)) throw DegenerateError("procrustes_align: collinear point set");

  const Eigen::Matrix3d cov = b0.transpose() * a0 / static_cast<double>(n);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2) = -1.0;

  Alignment out;
  out.transform.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  const double var_a = a0.squaredNorm() / static_cast<double>(n);
  out.transform.scale = svd.singularValues().dot(d) / var_a;
  out.transform.translation = mu_b.transpose() - out.transform.scale * out.transform.rotation * mu_a.transpose();
  out.aligned = out.transform.apply(a);
  out.residual = (out.aligned - b).squaredNorm();
  return out;
}

double frame_jpe(const Points3& gen, const Points3& ref) {
  if (gen.rows() != ref.rows()) throw ShapeError("frame_jpe: joint subsets differ");
  if (gen.rows() == 0) return 0.0;
  return (gen - ref).rowwise().norm().mean();
}

double frame_pa_jpe(const Points3& gen, const Points3& ref) {
  return frame_jpe(procrustes_align(gen, ref).aligned, ref);
}

DtwResult dtw(std::size_t n, std::size_t m, const std::function<double(std::size_t, std::size_t)>& cost) {
  if (n == 0 || m == 0) throw InputError("dtw: empty track");
  Eigen::MatrixXd c(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) c(i, j) = cost(i, j);
  return dtw(c);
}

DtwResult dtw(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  const auto m = static_cast<std::size_t>(cost.cols());
  if (n == 0 || m == 0) throw InputError("dtw: empty track");
  constexpr double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Constant(n, m, inf);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double best = 0.0;
      if (i > 0 || j > 0) {
        best = inf;
        if (i > 0 && j > 0) best = std::min(best, acc(i - 1, j - 1));
        if (i > 0) best = std::min(best, acc(i - 1, j));
        if (j > 0) best = std::min(best, acc(i, j - 1));
      }
      acc(i, j) = best + cost(i, j);
    }
  }

  DtwResult out;
  out.total = acc(n - 1, m - 1);
  std::size_t i = n - 1, j = m - 1;
  out.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const double diag = acc(i - 1, j - 1), up = acc(i - 1, j), left = acc(i, j - 1);
      if (diag <= up && diag <= left) {
        --i, --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    } else if (i > 0) {
      --i;
    } else {
      --j;
    }
    out.path.emplace_back(i, j);
  }
  std::reverse(out.path.begin(), out.path.end());
  out.normalized = out.total / static_cast<double>(out.path.size());
  return out;
}

Points3 select_points(const Points3& points, const std::vector<int>& index) {
  Points3 out(static_cast<Eigen::Index>(index.size()), 3);
  for (std::size_t k = 0; k < index.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = points.row(index[k]);
  return out;
}

PaScope pa_scope_from_name(const std::string& name) {
  if (name == "frame") return PaScope::kFrame;
  if (name == "sequence") return PaScope::kSequence;
  throw ConfigError("unknown pa_scope '" + name + "' (expected frame or sequence)");
}

std::string pa_scope_name(PaScope scope) { return scope == PaScope::kFrame ? "frame" : "sequence"; }

namespace {

struct UnionTracks {
  std::vector<Points3> gen, ref;  // union of body and hand points, body first
  Eigen::Index body = 0;          // number of body rows
};

UnionTracks union_tracks(const std::vector<Points3>& gen, const std::vector<Points3>& ref,
                         const KinematicChain& chain) {
  if (gen.empty() || ref.empty()) throw InputError("empty joint track");
  std::vector<int> index = chain.body_points;
  index.insert(index.end(), chain.hand_points.begin(), chain.hand_points.end());
  UnionTracks t;
  t.body = static_cast<Eigen::Index>(chain.body_points.size());
  for (const auto& p : gen) t.gen.push_back(select_points(p, index));
  for (const auto& p : ref) t.ref.push_back(select_points(p, index));
  return t;
}

UnionTracks union_tracks(const MotionSequence& gen, const MotionSequence& ref, const KinematicChain& chain) {
  return union_tracks(forward_kinematics(gen, chain), forward_kinematics(ref, chain), chain);
}

// Mean distance over the body rows and over the hand rows.
std::pair<double, double> subset_errors(const Points3& gen, const Points3& ref, Eigen::Index body) {
  const Eigen::VectorXd d = (gen - ref).rowwise().norm();
  const Eigen::Index hand = d.size() - body;
  return {body > 0 ? d.head(body).mean() : 0.0, hand > 0 ? d.tail(hand).mean() : 0.0};
}

}  // namespace

MotionComparison compare_motion(const MotionSequence& gen, const MotionSequence& ref, const KinematicChain& chain,
                                PaScope scope) {
  return compare_tracks(forward_kinematics(gen, chain), forward_kinematics(ref, chain), chain, scope);
}

MotionComparison compare_tracks(const std::vector<Points3>& gen, const std::vector<Points3>& ref,
                                const KinematicChain& chain, PaScope scope) {
  const auto t = union_tracks(gen, ref, chain);
  const auto n = static_cast<Eigen::Index>(t.gen.size());
  const auto m = static_cast<Eigen::Index>(t.ref.size());
  Eigen::MatrixXd jpe_b(n, m), jpe_h(n, m), pa_b(n, m), pa_h(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      std::tie(jpe_b(i, j), jpe_h(i, j)) = subset_errors(t.gen[i], t.ref[j], t.body);
      if (scope == PaScope::kFrame) {
        std::tie(pa_b(i, j), pa_h(i, j)) = subset_errors(procrustes_align(t.gen[i], t.ref[j]).aligned, t.ref[j], t.body);
      }
    }
  }
  if (scope == PaScope::kSequence) {
    // One similarity for the whole sequence, fit on the frame pairs matched by
    // the unaligned union-error alignment.
    const Eigen::MatrixXd jpe_union =
        (jpe_b * static_cast<double>(t.body) + jpe_h * static_cast<double>(t.gen[0].rows() - t.body)) /
        static_cast<double>(t.gen[0].rows());
    const auto path = dtw(jpe_union).path;
    const Eigen::Index rows = t.gen[0].rows();
    Points3 a(rows * static_cast<Eigen::Index>(path.size()), 3), b(a.rows(), 3);
    for (std::size_t k = 0; k < path.size(); ++k) {
      a.middleRows(static_cast<Eigen::Index>(k) * rows, rows) = t.gen[path[k].first];
      b.middleRows(static_cast<Eigen::Index>(k) * rows, rows) = t.ref[path[k].second];
    }
    const Similarity sim = procrustes_align(a, b).transform;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Points3 g = sim.apply(t.gen[i]);
      for (Eigen::Index j = 0; j < m; ++j) std::tie(pa_b(i, j), pa_h(i, j)) = subset_errors(g, t.ref[j], t.body);
    }
  }
  MotionComparison out;
  out.dtw_jpe_body = dtw(jpe_b).normalized;
  out.dtw_jpe_hand = dtw(jpe_h).normalized;
  out.dtw_pa_jpe_body = dtw(pa_b).normalized;
  out.dtw_pa_jpe_hand = dtw(pa_h).normalized;
  return out;
}

double pa_mpjpe(const MotionSequence& a, const MotionSequence& b, const KinematicChain& chain) {
  if (a.num_frames() != b.num_frames()) throw ShapeError("pa_mpjpe: frame counts differ");
  const auto t = union_tracks(a, b, chain);
  double total = 0.0;
  for (std::size_t f = 0; f < t.gen.size(); ++f) total += frame_pa_jpe(t.gen[f], t.ref[f]);
  return total / static_cast<double>(t.gen.size());
}

// ---- reports -------------------------------------------------------------------

nlohmann::json EvalReport::aggregates() const {
  const double count = static_cast<double>(samples.size());
  double jb = 0, jh = 0, pb = 0, ph = 0, steps = 0, passes = 0, recon = 0;
  std::size_t recon_count = 0;
  for (const auto& s : samples) {
    jb += s.errors.dtw_jpe_body;
    jh += s.errors.dtw_jpe_hand;
    pb += s.errors.dtw_pa_jpe_body;
    ph += s.errors.dtw_pa_jpe_hand;
    steps += static_cast<double>(s.step_count);
    passes += static_cast<double>(s.forward_passes);
    if (s.recon_pa_mpjpe) {
      recon += *s.recon_pa_mpjpe;
      ++recon_count;
    }
  }
  auto mean = [&](double v) { return samples.empty() ? 0.0 : v / count; };
  nlohmann::json j = {
      {"samples", samples.size()},
      {"dtw_jpe_body", mean(jb)},
      {"dtw_jpe_hand", mean(jh)},
      {"dtw_pa_jpe_body", mean(pb)},
      {"dtw_pa_jpe_hand", mean(ph)},
      {"dtw_jpe_mean", mean(0.5 * (jb + jh))},
      {"dtw_pa_jpe_mean", mean(0.5 * (pb + ph))},
      {"mean_step_count", mean(steps)},
      {"mean_forward_passes", mean(passes)},
  };
  if (recon_count > 0) j["recon_pa_mpjpe"] = recon / static_cast<double>(recon_count);
  return j;
}

nlohmann::json EvalReport::timing() const {
  double total = 0.0;
  for (const auto& s : samples) total += s.wall_ms;
  return {{"total_wall_ms", total}, {"mean_wall_ms", samples.empty() ? 0.0 : total / double(samples.size())}};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per_sample = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json r = {
        {"text", s.text},
        {"lang", s.language},
        {"gen_frames", s.gen_frames},
        {"ref_frames", s.ref_frames},
        {"dtw_jpe_body", s.errors.dtw_jpe_body},
        {"dtw_jpe_hand", s.errors.dtw_jpe_hand},
        {"dtw_pa_jpe_body", s.errors.dtw_pa_jpe_body},
        {"dtw_pa_jpe_hand", s.errors.dtw_pa_jpe_hand},
        {"step_count", s.step_count},
        {"forward_passes", s.forward_passes},
        {"wall_ms", s.wall_ms},
    };
    if (s.recon_pa_mpjpe) r["recon_pa_mpjpe"] = *s.recon_pa_mpjpe;
    per_sample.push_back(std::move(r));
  }
  return {
      {"schema_version", kSchemaVersion},
      {"header",
       {{"units", "mm"}, {"dtw_normalization", "path_length"}, {"pa_scope", pa_scope_name(pa_scope)},
        {"split", split}, {"mode", mode}}},
      {"config", config},
      {"provenance", provenance},
      {"samples", per_sample},
      {"aggregates", aggregates()},
      {"timing", timing()},
  };
}

EvalReport evaluate_split(const GenerateFn& generate, const std::vector<EvalSample>& split,
                          const KinematicChain& chain, PaScope scope, const ReconstructFn& reconstruct,
                          std::size_t workers) {
  EvalReport report;
  report.pa_scope = scope;
  report.samples.resize(split.size());
  parallel_for(
      split.size(),
      [&](std::size_t k) {
        const auto& sample = split[k];
        const Generated g = generate(sample);
        SampleRecord& r = report.samples[k];
        r.text = sample.text;
        r.language = sample.reference.language();
        r.gen_frames = g.motion.num_frames();
        r.ref_frames = sample.reference.num_frames();
        r.errors = compare_motion(g.motion, sample.reference, chain, scope);
        r.step_count = g.step_count;
        r.forward_passes = g.forward_passes;
        r.wall_ms = g.wall_ms;
        if (reconstruct) r.recon_pa_mpjpe = pa_mpjpe(reconstruct(sample.reference), sample.reference, chain);
      },
      workers);
  return report;
}

}  // namespace soke::metrics
