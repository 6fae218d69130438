#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "soke/deto.hpp"
#include "soke/error.hpp"
#include "soke/gradcheck.hpp"
#include "soke/synth.hpp"

using namespace soke;
using namespace soke::deto;
using soke::grad::Tensor;

namespace {

// Exhaustive nearest neighbour on Euclidean distance, lowest index on ties.
std::vector<int> brute_force_nn(const std::vector<double>& latent, std::size_t rows, const std::vector<double>& codes,
                                std::size_t n, std::size_t dim) {
  std::vector<int> out;
  for (std::size_t r = 0; r < rows; ++r) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < dim; ++i) s += std::pow(latent[r * dim + i] - codes[k * dim + i], 2);
      const double d = std::sqrt(s);
      if (d < best) {
        best = d;
        arg = static_cast<int>(k);
      }
    }
    out.push_back(arg);
  }
  return out;
}

TokenizerConfig tiny_config() {
  TokenizerConfig c;
  c.width = 6;
  c.code_dim = 4;
  c.codebook_sizes = {5, 7, 7};
  return c;
}

PartMotion random_part(Part part, std::size_t frames, std::size_t width, std::mt19937& rng) {
  std::normal_distribution<float> d(0.0f, 0.5f);
  PartMotion m{part, frames, width, std::vector<float>(frames * width)};
  for (auto& v : m.frames) v = d(rng);
  return m;
}

}  // namespace

TEST_CASE("quantize worked examples") {
  const std::vector<double> codes = {0, 0, 1, 0};
  CHECK(quantize(std::vector<double>{0.9, 0.1}, 1, codes, 2, 2) == std::vector<int>{1});
  // exact self-match
  std::mt19937 rng(1);
  std::normal_distribution<double> d;
  std::vector<double> book(8 * 3);
  for (auto& v : book) v = d(rng);
  std::vector<double> row(book.begin() + 15, book.begin() + 18);
  CHECK(quantize(row, 1, book, 8, 3) == std::vector<int>{5});
  // ties go to the lowest index
  CHECK(quantize(std::vector<double>{0.5, 0.0}, 1, codes, 2, 2) == std::vector<int>{0});
  const std::vector<double> dup = {1, 1, 1, 1, 0, 0};
  CHECK(quantize(std::vector<double>{1, 1}, 1, dup, 3, 2) == std::vector<int>{0});
  CHECK_THROWS_AS(quantize(std::vector<double>{}, 0, codes, 2, 2), InputError);
}

TEST_CASE("quantize agrees with exhaustive search") {
  std::mt19937 rng(2);
  std::normal_distribution<double> d;
  for (std::size_t n : {96u, 192u}) {
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t dim = 1 + trial % 9, rows = 1 + trial % 5;
      std::vector<double> book(n * dim), lat(rows * dim);
      for (auto& v : book) v = d(rng);
      for (auto& v : lat) v = d(rng);
      CHECK(quantize(lat, rows, book, n, dim) == brute_force_nn(lat, rows, book, n, dim));
      // idempotent on codebook rows
      const std::size_t k = static_cast<std::size_t>(trial) % n;
      std::vector<double> code_row(book.begin() + long(k * dim), book.begin() + long((k + 1) * dim));
      CHECK(quantize(code_row, 1, book, n, dim)[0] <= static_cast<int>(k));
    }
  }
}

TEST_CASE("encode and decode lengths") {
  std::mt19937 rng(3);
  PartTokenizer tok(Part::kLeftHand, 45, tiny_config(), 1);
  const auto m16 = random_part(Part::kLeftHand, 16, 45, rng);
  const auto t16 = tok.encode(m16);
  CHECK(t16.ids.size() == 4);
  CHECK(t16.part == Part::kLeftHand);
  CHECK(tok.encode(random_part(Part::kLeftHand, 17, 45, rng)).ids.size() == 5);
  CHECK(tok.encode(m16) == t16);
  CHECK_THROWS_AS(tok.encode(random_part(Part::kLeftHand, 3, 45, rng)), InputError);

  const TokenSeq four{Part::kLeftHand, {0, 3, 6, 1}};
  const auto out = tok.decode(four);
  CHECK(out.num_frames == 16);
  CHECK(out.width == 45);
  CHECK(tok.decode(four).frames == out.frames);
  CHECK(tok.decode(four, 13).num_frames == 13);
  CHECK(tok.decode(four, 18).num_frames == 18);
  CHECK_THROWS_AS(tok.decode(TokenSeq{Part::kLeftHand, {0, 7}}), RangeError);
  CHECK_THROWS_AS(tok.decode(TokenSeq{Part::kLeftHand, {-1}}), RangeError);
}

TEST_CASE("vq loss components") {
  SUBCASE("scalar latent against a code 0.4 away") {
    TokenizerConfig c;
    c.downsample = 1;
    c.width = 3;
    c.code_dim = 1;
    c.codebook_sizes = {1, 1, 1};
    PartTokenizer tok(Part::kBody, 2, c, 4);
    const auto x = Tensor::from({1, 2}, {0.3, -0.2});
    const double z = tok.encode_latent(x).item();
    tok.codebook().codes.mutable_value()[0] = z + 0.4;
    const auto l = tok.vq_loss(x);
    CHECK(l.emb.item() == doctest::Approx(0.16).epsilon(1e-9));
    CHECK(l.com.item() == doctest::Approx(0.04).epsilon(1e-9));
    CHECK(l.total.item() == doctest::Approx(l.rec.item() + l.emb.item() + l.com.item()).epsilon(1e-12));
  }
  SUBCASE("all terms vanish for a perfect reconstruction on a code") {
    PartTokenizer tok(Part::kBody, 3, tiny_config(), 5);
    for (auto& p : tok.parameters())
      for (auto& v : p.mutable_value()) v = 0.0;
    const auto l = tok.vq_loss(Tensor::zeros({8, 3}));
    CHECK(l.total.item() == 0.0);
  }
  SUBCASE("terms are non-negative and sum to the total") {
    std::mt19937 rng(6);
    PartTokenizer tok(Part::kRightHand, 5, tiny_config(), 6);
    for (int i = 0; i < 10; ++i) {
      const auto l = tok.vq_loss(part_tensor(random_part(Part::kRightHand, 8 + i, 5, rng)));
      CHECK(l.rec.item() >= 0.0);
      CHECK(l.emb.item() >= 0.0);
      CHECK(l.com.item() >= 0.0);
      CHECK(std::abs(l.total.item() - (l.rec.item() + l.emb.item() + l.com.item())) < 1e-6);
    }
  }
}

TEST_CASE("straight-through gradients of the tokenizer loss") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 6; ++trial) {
    PartTokenizer tok(Part::kBody, 3, tiny_config(), 100 + trial);
    const Tensor x = part_tensor(random_part(Part::kBody, 8, 3, rng));
    const auto frozen = tok.freeze(x);

    // The live estimator and the frozen surrogate give the same gradient.
    const auto params = tok.parameters();
    grad::backward(tok.vq_loss(x).total);
    std::vector<std::vector<double>> live;
    for (const auto& p : params) live.emplace_back(p.grad().begin(), p.grad().end());
    for (auto p : params) p.zero_grad();
    grad::backward(tok.vq_loss(x, &frozen).total);
    for (std::size_t i = 0; i < params.size(); ++i) {
      REQUIRE(params[i].has_grad());
      for (std::size_t k = 0; k < live[i].size(); ++k) CHECK(params[i].grad()[k] == doctest::Approx(live[i][k]).epsilon(1e-12));
    }
    for (auto p : params) p.zero_grad();

    bool encoder_moves = false;
    for (const auto& v : live[0]) encoder_moves |= v != 0.0;
    CHECK(encoder_moves);

    const auto r = grad::check_gradients([&] { return tok.vq_loss(x, &frozen).total; }, params);
    INFO("trial " << trial << " worst param " << r.worst_param);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("tokenizer training") {
  SynthConfig sc;
  sc.sentences = 4;
  const auto data = synthesize_dataset(sc, 3);
  std::vector<MotionSequence> corpus;
  for (const auto& s : data) corpus.push_back(s.motion);
  TokenizerConfig tc;
  tc.width = 16;
  tc.code_dim = 8;
  tc.codebook_sizes = {16, 16, 16};
  TrainConfig tr;
  tr.steps = 40;
  tr.batch = 2;
  tr.log_interval = 10;
  tr.reseed_interval = 10;
  tr.seed = 9;

  SUBCASE("deterministic, also across thread counts") {
    tr.threads = 1;
    const auto a = train_tokenizer(corpus, tc, tr);
    tr.threads = 3;
    const auto b = train_tokenizer(corpus, tc, tr);
    std::ostringstream sa, sb;
    std::vector<grad::NamedTensor> pa, pb;
    for (Part p : kParts) {
      for (auto& t : a.tokenizer.part(p).named_parameters()) pa.push_back(t);
      for (auto& t : b.tokenizer.part(p).named_parameters()) pb.push_back(t);
    }
    grad::write_checkpoint(sa, pa);
    grad::write_checkpoint(sb, pb);
    CHECK(sa.str() == sb.str());
    CHECK(a.log.size() == b.log.size());
    CHECK(a.log.back().rec == b.log.back().rec);
  }
  SUBCASE("loss goes down and the log covers every part") {
    tr.steps = 300;
    tc.width = 32;
    const auto r = train_tokenizer(corpus, tc, tr);
    for (Part p : kParts) {
      double first = -1, last = -1;
      for (const auto& rec : r.log) {
        if (rec.part != p) continue;
        if (first < 0) first = rec.rec;
        last = rec.rec;
      }
      CHECK(last < 0.5 * first);
    }
  }
  SUBCASE("constant corpus is learned exactly") {
    std::vector<MotionSequence> zeros(3, MotionSequence::zeros(24, sc.layout));
    tr.steps = 300;
    tr.lr = 3e-3;
    const auto r = train_tokenizer(zeros, tc, tr);
    for (Part p : kParts) {
      double last = 0;
      for (const auto& rec : r.log)
        if (rec.part == p) last = rec.rec;
      CHECK(last < 1e-6);
    }
  }
  SUBCASE("save and load") {
    const auto r = train_tokenizer(corpus, tc, tr);
    const auto dir = std::filesystem::temp_directory_path() / "soke_test_deto";
    std::filesystem::remove_all(dir);
    r.tokenizer.save(dir);
    const auto loaded = DecoupledTokenizer::load(dir);
    for (const auto& m : corpus) {
      CHECK(loaded.encode(m) == r.tokenizer.encode(m));
      CHECK(loaded.round_trip(m) == r.tokenizer.round_trip(m));
    }
    std::ifstream in(dir / "deto.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["downsample"] == 4);
    CHECK(j["codebook_sizes"]["LH"] == 16);
    CHECK(j["part_widths"]["B"] == 43);
    CHECK(j["code_dim"] == 8);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("empty corpus") { CHECK_THROWS_AS(train_tokenizer({}, tc, tr), InputError); }
}

TEST_CASE("codebook size configuration") {
  for (std::size_t n : {64u, 96u, 128u, 192u, 256u}) {
    TokenizerConfig c;
    c.codebook_sizes = {n, n, n};
    CHECK_NOTHROW(c.validate());
    DecoupledTokenizer tok(PartLayout{}, c, 1);
    CHECK(tok.part(Part::kRightHand).codebook().size() == n);
  }
  TokenizerConfig bad;
  bad.downsample = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.downsample = 4;
  bad.codebook_sizes = {96, 0, 192};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
