#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

#include "soke/error.hpp"
#include "soke/gradcheck.hpp"
#include "soke/posefit.hpp"

using namespace soke;
using namespace soke::posefit;

namespace {

const PartLayout kLayout{};

MotionSequence random_motion(std::size_t frames, std::mt19937& rng, double amplitude = 0.4) {
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  std::vector<float> data(frames * kLayout.dim());
  for (auto& v : data) v = static_cast<float>(u(rng));
  return MotionSequence(std::move(data), frames, kLayout);
}

bool non_increasing(const std::vector<FitRecord>& log) {
  for (std::size_t i = 1; i < log.size(); ++i)
    if (log[i].total > log[i - 1].total) return false;
  return true;
}

}  // namespace

TEST_CASE("weak perspective projection") {
  Points3 p(1, 3);
  p << 1, 2, 5;
  CHECK(project_weak(p, {1, 0, 0})(0, 0) == 1.0);
  CHECK(project_weak(p, {1, 0, 0})(0, 1) == 2.0);
  const auto q = project_weak(p, {2, 1, 0});
  CHECK(q(0, 0) == 3.0);
  CHECK(q(0, 1) == 4.0);
  Points3 deeper = p;
  deeper(0, 2) = -40.0;
  CHECK(project_weak(deeper, {2, 1, 0}) == q);
  CHECK_THROWS_AS(Camera({0.0, 0, 0}).validate(), ConfigError);
}

TEST_CASE("loss terms on hand-computed cases") {
  const auto chain = make_default_chain(kLayout);
  const FitConfig cfg;
  const auto observed = std::vector<int>{0, 1};
  Points3 pts = Points3::Zero(chain.num_points(), 3);
  pts(1, 0) = 10;

  Observation2D exact{0, {{0, 0, 1}, {10, 0, 1}}};
  CHECK(loss_rec(pts, exact, {}, observed) == 0.0);
  Observation2D off{0, {{0, 0, 1}, {11, -2, 1}}};
  CHECK(loss_rec(pts, off, {}, observed) == doctest::Approx(3.0));
  Observation2D ignored{0, {{0, 0, 1}, {11, -2, 0}}};
  CHECK(loss_rec(pts, ignored, {}, observed) == 0.0);

  CHECK(loss_temp({pts, pts, pts}, chain) == 0.0);
  CHECK(loss_temp({pts}, chain) == 0.0);
  Points3 moved = pts;
  moved(3, 1) += 2.0;  // a joint: counted in both norms
  CHECK(loss_temp({pts, moved}, chain) == doctest::Approx(4.0));
  Points3 site = pts;
  site(chain.num_joints(), 2) += 2.0;  // a site: only in the point norm
  CHECK(loss_temp({pts, site}, chain) == doctest::Approx(2.0));

  CHECK(loss_reg(std::vector<double>{3, 4}) == 5.0);
  CHECK(loss_reg(std::vector<double>(27, 0.0)) == 0.0);
  (void)cfg;
}

TEST_CASE("the differentiable objective agrees with the plain evaluation") {
  const auto chain = make_default_chain(kLayout);
  std::mt19937 rng(3);
  const FitConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    const auto truth = random_motion(4, rng);
    const auto init = random_motion(4, rng);
    const Camera cam{1.3, 20, -15};
    const auto obs = synthesize_observations(truth, cam, cfg, chain);
    const FitObjective f(init, obs, chain, cfg);
    const auto g = f.build(f.initial_theta(false), f.camera_tensor(cam, false));
    const auto ref = evaluate_losses(init, obs, cam, cfg, chain);
    CHECK(g.rec.item() == doctest::Approx(ref.rec).epsilon(1e-6));
    CHECK(g.temp.item() == doctest::Approx(ref.temp).epsilon(1e-6));
    CHECK(g.reg.item() == doctest::Approx(ref.reg).epsilon(1e-6));
    CHECK(g.total.item() == doctest::Approx(ref.total).epsilon(1e-6));
    CHECK(g.rec.item() >= 0.0);
  }
}

TEST_CASE("total-loss gradient matches finite differences") {
  const auto chain = make_default_chain(kLayout);
  std::mt19937 rng(4);
  std::normal_distribution<double> noise(0.0, 5.0);
  FitConfig cfg;
  cfg.w_temp = 0.5;
  cfg.w_reg = 0.3;
  for (int trial = 0; trial < 20; ++trial) {
    const auto init = random_motion(3, rng);
    auto obs = synthesize_observations(random_motion(3, rng), {1.1, 5, 7}, cfg, chain);
    for (auto& o : obs)
      for (auto& j : o.joints) {
        j[0] += noise(rng);
        j[1] += noise(rng);
        j[2] = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
      }
    const FitObjective f(init, obs, chain, cfg);
    const Tensor theta = f.initial_theta();
    const Tensor cam = f.camera_tensor({0.9, -3, 4});
    grad::GradCheckOptions o;
    o.eps = 1e-6;
    const auto r = grad::check_gradients([&] { return f.build(theta, cam).total; }, {theta, cam}, o);
    CAPTURE(trial);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("observations of the initial pose leave it unchanged") {
  const auto chain = make_default_chain(kLayout);
  std::mt19937 rng(5);
  FitConfig cfg;
  cfg.w_reg = 0.0;
  const auto init = random_motion(1, rng);
  const Camera cam{1.0, 3, 4};
  const auto r = fit_sequence(init, synthesize_observations(init, cam, cfg, chain), cam, cfg, chain);
  CHECK((r.stop_reason == "zero-gradient" || r.stop_reason == "line-search"));
  CHECK(r.motion == init);
  CHECK(r.log.size() == 1);
}

TEST_CASE("hands are never touched") {
  const auto chain = make_default_chain(kLayout);
  std::mt19937 rng(6);
  const FitConfig cfg;
  const auto init = random_motion(5, rng);
  const auto obs = synthesize_observations(random_motion(5, rng), {1, 0, 0}, cfg, chain);
  FitConfig short_cfg = cfg;
  short_cfg.max_iterations = 30;
  const auto r = fit_sequence(init, obs, {1, 0, 0}, short_cfg, chain);
  CHECK(r.log.size() > 1);
  CHECK(non_increasing(r.log));
  const std::size_t body_dims = kLayout.body_rotation_dims();
  for (std::size_t f = 0; f < init.num_frames(); ++f) {
    const auto a = init.frame(f), b = r.motion.frame(f);
    CHECK(std::memcmp(a.data() + body_dims, b.data() + body_dims, (a.size() - body_dims) * sizeof(float)) == 0);
    for (const char* wrist : {"l_wrist", "r_wrist"}) {
      const std::size_t c = chain.param_offsets[chain.joint_index(wrist)];
      CHECK(std::memcmp(a.data() + c, b.data() + c, 3 * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("single-joint rotation is recovered like the grid-search oracle") {
  const auto chain = make_default_chain(kLayout);
  const FitConfig cfg;
  const std::size_t col = chain.param_offsets[chain.joint_index("l_elbow")] + 2;
  const auto init = MotionSequence::zeros(1, kLayout);
  MotionSequence truth = init;
  truth.frame(0)[col] = 0.5f;
  const Camera cam{1.0, 0, 0};
  const auto obs = synthesize_observations(truth, cam, cfg, chain);

  double best_angle = 0.0, best = std::numeric_limits<double>::infinity();
  MotionSequence probe = init;
  for (int i = 0; i <= 6283; ++i) {
    const double a = -std::numbers::pi + 1e-3 * i;
    probe.frame(0)[col] = static_cast<float>(a);
    const double l = evaluate_losses(probe, obs, cam, cfg, chain).total;
    if (l < best) best = l, best_angle = a;
  }
  const auto r = fit_sequence(init, obs, cam, cfg, chain);
  CHECK(non_increasing(r.log));
  CHECK(std::abs(r.motion.frame(0)[col] - best_angle) < 1e-2);
  MESSAGE("recovered " << r.motion.frame(0)[col] << " oracle " << best_angle << " after " << r.log.size() - 1
                       << " steps, stop " << r.stop_reason);
}

TEST_CASE("clean observations of a reachable pose are fitted") {
  const auto chain = make_default_chain(kLayout);
  std::mt19937 rng(8);
  FitConfig cfg;
  cfg.w_temp = 0.0;
  cfg.w_reg = 0.0;
  cfg.max_iterations = 3000;
  for (int trial = 0; trial < 3; ++trial) {
    const auto init = random_motion(2, rng, 0.2);
    MotionSequence truth = init;
    std::uniform_real_distribution<float> d(-0.15f, 0.15f);
    for (std::size_t f = 0; f < 2; ++f)
      for (const auto& name : cfg.refined_joints)
        for (int c = 0; c < 3; ++c) truth.frame(f)[chain.param_offsets[chain.joint_index(name)] + c] += d(rng);
    const Camera cam{1.0, 0, 0};
    const auto r = fit_sequence(init, synthesize_observations(truth, cam, cfg, chain), cam, cfg, chain);
    CHECK(non_increasing(r.log));
    const double per_joint = r.log.back().rec / double(2 * cfg.observed_joints.size());
    MESSAGE("rec per joint " << per_joint << " after " << r.log.size() - 1 << " steps, stop " << r.stop_reason);
    CHECK(per_joint < 1e-4);
  }
}

TEST_CASE("input validation and file round trip") {
  const auto chain = make_default_chain(kLayout);
  std::mt19937 rng(9);
  const FitConfig cfg;
  const auto init = random_motion(3, rng);
  auto obs = synthesize_observations(init, {1, 0, 0}, cfg, chain);
  CHECK_THROWS_AS(fit_sequence(init, {obs[0], obs[1]}, {1, 0, 0}, cfg, chain), InputError);
  auto bad = obs;
  bad[1].joints[0][2] = 1.5;
  CHECK_THROWS_AS(fit_sequence(init, bad, {1, 0, 0}, cfg, chain), InputError);
  bad = obs;
  bad[2].joints.pop_back();
  CHECK_THROWS_AS(fit_sequence(init, bad, {1, 0, 0}, cfg, chain), InputError);
  CHECK_THROWS_AS(FitConfig::from_json({{"w_rec", 1.0}, {"w_bogus", 2}}), ConfigError);
  CHECK_THROWS_AS(FitConfig::from_json({{"w_rec", 0.0}}), ConfigError);
  CHECK(FitConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  FitConfig hands = cfg;
  hands.refined_joints = {"lh_f0_0"};
  CHECK_THROWS_AS(FitObjective(init, obs, chain, hands), ConfigError);

  const auto path = std::filesystem::temp_directory_path() / "soke_test_obs.jsonl";
  write_observations(path, obs);
  const auto back = read_observations(path);
  REQUIRE(back.size() == obs.size());
  for (std::size_t f = 0; f < obs.size(); ++f) {
    CHECK(back[f].frame_idx == obs[f].frame_idx);
    CHECK(back[f].joints == obs[f].joints);
  }
  std::filesystem::remove(path);
}
