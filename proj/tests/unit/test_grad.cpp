#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "soke/checkpoint.hpp"
#include "soke/error.hpp"
#include "soke/grad.hpp"
#include "soke/gradcheck.hpp"
#include "soke/optim.hpp"

using namespace soke;
using namespace soke::grad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937& rng, bool requires_grad = true, Real scale_ = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::normal_distribution<Real> dist(0.0, scale_);
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Projects an op output onto fixed random weights so every output entry matters.
Tensor project(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

void expect_fd_match(const std::function<Tensor()>& f, const std::vector<Tensor>& params, Real tol = 1e-4) {
  const auto r = check_gradients(f, params);
  INFO("max rel error " << r.max_rel_error << " (param " << r.worst_param << ", index " << r.worst_index << ")");
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < tol);
}

}  // namespace

TEST_CASE("backward of sum and squared norm") {
  auto x = Tensor::from({3}, {0.5, -2.0, 7.0}, true);
  backward(sum(x));
  CHECK(std::vector<Real>(x.grad().begin(), x.grad().end()) == std::vector<Real>{1, 1, 1});

  auto y = Tensor::from({2}, {1.0, 2.0}, true);
  backward(sum(mul(y, y)));
  CHECK(y.grad()[0] == doctest::Approx(2.0));
  CHECK(y.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward misuse") {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  SUBCASE("second call on the same graph") {
    auto loss = sum(x);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), GradError);
  }
  SUBCASE("non-scalar loss") { CHECK_THROWS_AS(backward(scale(x, 2.0)), GradError); }
  SUBCASE("op without a gradient rule") {
    auto opaque = make_result("opaque", {2}, {1.0, 1.0}, {x}, nullptr);
    CHECK_THROWS_AS(backward(sum(opaque)), GradError);
  }
  SUBCASE("NaN propagation") {
    auto big = Tensor::from({1}, {1e200}, true);
    CHECK_THROWS_AS(mul(big, big), NonFiniteError);
  }
}

TEST_CASE("every op matches central finite differences") {
  std::mt19937 rng(42);
  SUBCASE("elementwise") {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), w = random_tensor({3, 4}, rng, false);
    expect_fd_match([&] { return project(add(mul(a, b), sub(scale(a, 0.7), b)), w); }, {a, b});
    expect_fd_match([&] { return project(gelu(a), w); }, {a});
    expect_fd_match([&] { return project(tanh(a), w); }, {a});
    expect_fd_match([&] { return project(relu(a), w); }, {a});
    auto k = random_tensor({1}, rng);
    expect_fd_match([&] { return project(mul_scalar(a, k), w); }, {a, k});
  }
  SUBCASE("matmul, bias, transpose") {
    auto a = random_tensor({4, 3}, rng), b = random_tensor({3, 5}, rng), bias = random_tensor({5}, rng);
    auto w = random_tensor({5, 4}, rng, false);
    expect_fd_match([&] { return project(transpose(add_row(matmul(a, b), bias)), w); }, {a, b, bias});
  }
  SUBCASE("layer norm and softmax") {
    auto x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng), be = random_tensor({6}, rng);
    auto w = random_tensor({4, 6}, rng, false);
    expect_fd_match([&] { return project(layer_norm(x, g, be), w); }, {x, g, be});
    expect_fd_match([&] { return project(softmax_rows(x, false), w); }, {x});
    auto sq = random_tensor({5, 5}, rng), w2 = random_tensor({5, 5}, rng, false);
    expect_fd_match([&] { return project(softmax_rows(sq, true), w2); }, {sq});
  }
  SUBCASE("conv1d strided and padded, upsample, pad") {
    auto x = random_tensor({9, 3}, rng), k = random_tensor({4 * 3, 2}, rng), b = random_tensor({2}, rng);
    auto w = random_tensor({4, 2}, rng, false);
    expect_fd_match([&] { return project(conv1d(x, k, b, 4, 2, 1), w); }, {x, k, b});
    auto w2 = random_tensor({12, 3}, rng, false);
    expect_fd_match([&] { return project(pad_rows_replicate(x, 12), w2); }, {x});
    auto w3 = random_tensor({18, 3}, rng, false);
    expect_fd_match([&] { return project(upsample_rows(x, 2), w3); }, {x});
  }
  SUBCASE("indexing") {
    auto t = random_tensor({5, 3}, rng), u = random_tensor({5, 2}, rng);
    std::vector<int> ids = {4, 0, 4, 2};
    auto w = random_tensor({4, 3}, rng, false);
    expect_fd_match([&] { return project(gather_rows(t, ids), w); }, {t});
    auto w2 = random_tensor({5, 3}, rng, false);
    expect_fd_match([&] { return project(concat_cols({slice_cols(t, 1, 3), slice_cols(u, 0, 1)}), w2); }, {t, u});
    auto w3 = random_tensor({5, 3}, rng, false);
    expect_fd_match([&] { return project(concat_rows({slice_rows(t, 3, 5), slice_rows(t, 0, 3)}), w3); }, {t});
    auto w4 = random_tensor({3, 5}, rng, false);
    expect_fd_match([&] { return project(reshape(t, {3, 5}), w4); }, {t});
  }
  SUBCASE("losses") {
    auto a = random_tensor({4, 5}, rng), b = random_tensor({4, 5}, rng);
    expect_fd_match([&] { return mse(a, b); }, {a, b});
    expect_fd_match([&] { return l2_norm(a); }, {a});
    std::vector<Real> wts(20);
    for (std::size_t i = 0; i < wts.size(); ++i) wts[i] = 0.1 * Real(i % 7);
    expect_fd_match([&] { return weighted_l1(a, wts); }, {a});
    expect_fd_match([&] { return weighted_l1(a, wts, 0.3); }, {a});
    std::vector<int> targets = {0, 4, -1, 2};
    expect_fd_match([&] { return cross_entropy(a, targets); }, {a});
    std::vector<std::uint8_t> mask(20, 1);
    mask[1] = mask[3] = mask[15] = 0;
    expect_fd_match([&] { return cross_entropy(a, targets, mask); }, {a});
  }
  SUBCASE("rotations, including near-zero angles") {
    auto v = random_tensor({6, 3}, rng);
    auto small = Tensor::from({2, 3}, {1e-3, -2e-3, 5e-4, 0.0, 0.0, 0.0}, true);
    auto w = random_tensor({6, 9}, rng, false);
    auto w_small = random_tensor({2, 9}, rng, false);
    expect_fd_match([&] { return project(rodrigues(v), w); }, {v});
    expect_fd_match([&] { return project(rodrigues(small), w_small); }, {small});
    auto a = random_tensor({3, 9}, rng), b = random_tensor({3, 9}, rng), p = random_tensor({3, 3}, rng);
    auto w9 = random_tensor({3, 9}, rng, false), w3 = random_tensor({3, 3}, rng, false);
    expect_fd_match([&] { return project(mat3_mul(a, b), w9); }, {a, b});
    expect_fd_match([&] { return project(mat3_vec(a, p), w3); }, {a, p});
  }
}

TEST_CASE("composite graph matches finite differences") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor({6, 4}, rng, false);
    auto w1 = random_tensor({4, 8}, rng, true, 0.5), b1 = random_tensor({8}, rng);
    auto g = random_tensor({8}, rng), be = random_tensor({8}, rng);
    auto w2 = random_tensor({8, 5}, rng, true, 0.5);
    std::vector<int> targets = {0, 1, 2, 3, 4, 0};
    auto f = [&] {
      auto h = gelu(layer_norm(add_row(matmul(x, w1), b1), g, be));
      auto att = softmax_rows(matmul(h, transpose(h)), true);
      return cross_entropy(matmul(matmul(att, h), w2), targets);
    };
    expect_fd_match(f, {w1, b1, g, be, w2});
  }
}

TEST_CASE("rodrigues agrees with the closed-form rotation") {
  auto v = Tensor::from({1, 3}, {0.0, 0.0, std::acos(-1.0)});
  auto r = rodrigues(v);
  CHECK(r.at(0, 0) == doctest::Approx(-1.0));
  CHECK(r.at(0, 4) == doctest::Approx(-1.0));
  CHECK(r.at(0, 8) == doctest::Approx(1.0));
}

TEST_CASE("straight-through estimator") {
  std::mt19937 rng(3);
  auto e = random_tensor({4, 3}, rng);
  auto q = random_tensor({4, 3}, rng, false);
  auto st = straight_through(e, q);
  CHECK(std::equal(st.value().begin(), st.value().end(), q.value().begin()));

  auto g = random_tensor({4, 3}, rng, false);
  backward(project(st, g));
  for (std::size_t i = 0; i < e.size(); ++i) CHECK(e.grad()[i] == g.value()[i]);

  CHECK_THROWS_AS(straight_through(e, random_tensor({3, 4}, rng, false)), ShapeError);

  // Quantization is piecewise constant, yet the encoder still receives a gradient.
  auto enc_w = random_tensor({3, 3}, rng);
  auto codes = Tensor::from({2, 3}, {1, 0, 0, 0, 1, 0});
  auto x = random_tensor({4, 3}, rng, false);
  auto z = matmul(x, enc_w);
  std::vector<int> ids;
  for (std::size_t i = 0; i < 4; ++i) ids.push_back(z.at(i, 0) > z.at(i, 1) ? 0 : 1);
  auto quant = straight_through(z, gather_rows(detach(codes), ids));
  backward(mse(quant, x));
  bool nonzero = false;
  for (Real v : enc_w.grad()) nonzero |= v != 0.0;
  CHECK(nonzero);
}

TEST_CASE("optimizer") {
  std::mt19937 rng(1);
  SUBCASE("zero gradient leaves parameters unchanged") {
    auto p = random_tensor({3, 3}, rng);
    const std::vector<Real> before(p.value().begin(), p.value().end());
    Adam opt({p}, AdamConfig{}, CosineSchedule{1e-2, 0.0, 0, 10});
    backward(sum(scale(p, 0.0)));
    opt.step();
    CHECK(std::vector<Real>(p.value().begin(), p.value().end()) == before);
    // Also after the moments have history.
    opt.zero_grad();
    backward(sum(p));
    opt.step();
    const std::vector<Real> mid(p.value().begin(), p.value().end());
    opt.zero_grad();
    backward(sum(scale(p, 0.0)));
    opt.step();
    CHECK(std::vector<Real>(p.value().begin(), p.value().end()) == mid);
  }
  SUBCASE("minimizes a quadratic") {
    auto p = Tensor::from({2}, {3.0, -4.0}, true);
    Adam opt({p}, AdamConfig{}, CosineSchedule{0.1, 0.0, 0, 500});
    for (int i = 0; i < 500; ++i) {
      opt.zero_grad();
      backward(sum(mul(p, p)));
      opt.step();
    }
    CHECK(std::abs(p.value()[0]) < 1e-2);
    CHECK(std::abs(p.value()[1]) < 1e-2);
  }
  SUBCASE("cosine schedule") {
    CosineSchedule s{1.0, 0.1, 10, 110};
    CHECK(s.at(0) == doctest::Approx(0.1));
    CHECK(s.at(9) == doctest::Approx(1.0));
    CHECK(s.at(10) == doctest::Approx(1.0));
    CHECK(s.at(60) == doctest::Approx(0.55));
    CHECK(s.at(110) == doctest::Approx(0.1));
  }
}

TEST_CASE("checkpoint round trip") {
  std::mt19937 rng(5);
  auto a = random_tensor({2, 3}, rng), b = random_tensor({4}, rng);
  std::stringstream buf;
  write_checkpoint(buf, {{"enc.w", a}, {"enc.b", b}});
  CHECK(buf.str().substr(0, 9) == "SOKEckpt1");
  const auto entries = read_checkpoint(buf);
  auto a2 = Tensor::zeros({2, 3}, true), b2 = Tensor::zeros({4}, true);
  restore_parameters(entries, {{"enc.w", a2}, {"enc.b", b2}});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a2.value()[i] == static_cast<float>(a.value()[i]));
  auto wrong = Tensor::zeros({3, 2}, true);
  CHECK_THROWS_AS(restore_parameters(entries, {{"enc.w", wrong}, {"enc.b", b2}}), InputError);
  std::stringstream bad("SOKEckpt0");
  CHECK_THROWS_AS(read_checkpoint(bad), InputError);
}
