#include "soke/deto.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "soke/error.hpp"
#include "soke/optim.hpp"
#include "soke/parallel.hpp"
#include "soke/rng.hpp"

namespace soke::deto {

using namespace soke::grad;

void TokenizerConfig::validate() const {
  if (downsample == 0 || !std::has_single_bit(downsample)) throw ConfigError("deto.downsample must be a power of two");
  if (width == 0 || code_dim == 0) throw ConfigError("deto.width and deto.code_dim must be positive");
  for (auto n : codebook_sizes)
    if (n == 0) throw ConfigError("deto codebook sizes must be positive");
  if (w_emb < 0 || w_com < 0) throw ConfigError("deto loss weights must be non-negative");
}

void TrainConfig::validate() const {
  if (steps == 0 || batch == 0) throw ConfigError("deto training needs steps > 0 and batch > 0");
  if (!(lr > 0)) throw ConfigError("deto.lr must be positive");
  if (reseed_interval == 0) throw ConfigError("deto.reseed_interval must be positive");
}

std::vector<int> quantize(std::span<const Real> latent, std::size_t rows, std::span<const Real> codes,
                          std::size_t num_codes, std::size_t dim) {
  if (rows == 0) throw InputError("quantize: empty latent");
  if (num_codes == 0) throw InputError("quantize: empty codebook");
  if (latent.size() != rows * dim || codes.size() != num_codes * dim) throw ShapeError("quantize: size mismatch");
  std::vector<int> ids(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* z = latent.data() + r * dim;
    Real best = std::numeric_limits<Real>::infinity();
    int best_id = 0;
    for (std::size_t k = 0; k < num_codes; ++k) {
      const Real* c = codes.data() + k * dim;
      Real d = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const Real diff = z[i] - c[i];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_id = static_cast<int>(k);
      }
    }
    ids[r] = best_id;
  }
  return ids;
}

TokenSeq quantize(const Tensor& latent, const Codebook& codebook) {
  if (latent.cols() != codebook.dim()) throw ShapeError("quantize: latent width differs from code width");
  return {codebook.part,
          quantize(latent.value(), latent.rows(), codebook.codes.value(), codebook.size(), codebook.dim())};
}

// ---- PartTokenizer -------------------------------------------------------------

namespace {

Tensor uniform_tensor(Shape shape, Real bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> dist(-bound, bound);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

PartTokenizer::PartTokenizer(Part part, std::size_t input_dim, const TokenizerConfig& config, std::uint64_t seed)
    : part_(part), input_dim_(input_dim), config_(config) {
  config_.validate();
  if (input_dim == 0) throw ConfigError("part tokenizer input width must be positive");
  auto rng = make_rng(seed, 0xde70 + part_index(part));
  auto conv = [&](std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride, std::size_t pad) {
    const Real bound = 1.0 / std::sqrt(static_cast<Real>(kernel * cin));
    return Conv{uniform_tensor({kernel * cin, cout}, bound, rng), Tensor::zeros({cout}, true), kernel, stride, pad};
  };
  const std::size_t w = config_.width, c = config_.code_dim;
  const int levels = std::countr_zero(config_.downsample);
  encoder_.push_back(conv(input_dim, w, 3, 1, 1));
  for (int l = 0; l < levels; ++l) encoder_.push_back(conv(w, w, 4, 2, 1));
  encoder_.push_back(conv(w, c, 3, 1, 1));
  decoder_.push_back(conv(c, w, 3, 1, 1));
  for (int l = 0; l < levels; ++l) decoder_.push_back(conv(w, w, 3, 1, 1));
  decoder_.push_back(conv(w, input_dim, 3, 1, 1));
  const std::size_t n = config_.codebook_sizes[part_index(part)];
  codebook_ = Codebook{part, uniform_tensor({n, c}, 1.0, rng)};
  norm_mean_ = Tensor::zeros({input_dim});
  norm_std_ = Tensor::full({input_dim}, 1.0);
}

void PartTokenizer::set_normalization(std::vector<Real> mean, std::vector<Real> stddev) {
  if (mean.size() != input_dim_ || stddev.size() != input_dim_) throw ShapeError("normalization width mismatch");
  for (Real s : stddev)
    if (!(s > 0)) throw InputError("normalization scale must be positive");
  std::copy(mean.begin(), mean.end(), norm_mean_.mutable_value().begin());
  std::copy(stddev.begin(), stddev.end(), norm_std_.mutable_value().begin());
}

namespace {

// Each row multiplied elementwise by `factors` (constant).
Tensor scale_columns(const Tensor& x, std::span<const Real> factors) {
  std::vector<Real> tiled(x.size());
  for (std::size_t i = 0; i < tiled.size(); ++i) tiled[i] = factors[i % factors.size()];
  return mul(x, Tensor::from(x.shape(), std::move(tiled)));
}

}  // namespace

Tensor PartTokenizer::encode_latent(const Tensor& x) const {
  if (x.dim() != 2 || x.cols() != input_dim_) throw ShapeError("encode: input width differs from the part width");
  const std::size_t f = config_.downsample;
  const std::size_t padded = (x.rows() + f - 1) / f * f;
  std::vector<Real> neg_mean(input_dim_), inv_std(input_dim_);
  for (std::size_t i = 0; i < input_dim_; ++i) {
    neg_mean[i] = -norm_mean_.value()[i];
    inv_std[i] = 1.0 / norm_std_.value()[i];
  }
  Tensor h = scale_columns(add_row(x, Tensor::from({input_dim_}, neg_mean)), inv_std);
  if (padded > h.rows()) h = pad_rows_replicate(h, padded);
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    const auto& c = encoder_[l];
    h = conv1d(h, c.w, c.b, c.kernel, c.stride, c.pad);
    if (l + 1 < encoder_.size()) h = gelu(h);
  }
  return h;
}

Tensor PartTokenizer::decode_latent(const Tensor& latent, std::size_t frames) const {
  if (latent.dim() != 2 || latent.cols() != config_.code_dim) throw ShapeError("decode: latent width mismatch");
  Tensor h = latent;
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const auto& c = decoder_[l];
    if (l > 0 && l + 1 < decoder_.size()) h = upsample_rows(h, 2);
    h = conv1d(h, c.w, c.b, c.kernel, c.stride, c.pad);
    if (l + 1 < decoder_.size()) h = gelu(h);
  }
  h = add_row(scale_columns(h, norm_std_.value()), norm_mean_);
  if (frames < h.rows()) return slice_rows(h, 0, frames);
  if (frames > h.rows()) return pad_rows_replicate(h, frames);
  return h;
}

Tensor part_tensor(const PartMotion& motion) {
  std::vector<Real> v(motion.frames.begin(), motion.frames.end());
  return Tensor::from({motion.num_frames, motion.width}, std::move(v));
}

PartMotion tensor_to_part(const Tensor& t, Part part) {
  PartMotion m{part, t.rows(), t.cols(), {}};
  m.frames.reserve(t.size());
  for (Real v : t.value()) m.frames.push_back(static_cast<float>(v));
  return m;
}

TokenSeq PartTokenizer::encode(const PartMotion& motion) const {
  if (motion.width != input_dim_) throw ShapeError("encode: part width mismatch");
  if (motion.num_frames < config_.downsample)
    throw InputError("encode: motion of " + std::to_string(motion.num_frames) +
                     " frames is shorter than the downsample window " + std::to_string(config_.downsample));
  NoGradGuard no_grad;
  return quantize(encode_latent(part_tensor(motion)), codebook_);
}

PartMotion PartTokenizer::decode(const TokenSeq& tokens, std::optional<std::size_t> frames) const {
  if (tokens.ids.empty()) throw InputError("decode: empty token sequence");
  for (int id : tokens.ids)
    if (id < 0 || static_cast<std::size_t>(id) >= codebook_.size())
      throw RangeError("decode: token id " + std::to_string(id) + " outside codebook of size " +
                       std::to_string(codebook_.size()));
  NoGradGuard no_grad;
  const Tensor latent = gather_rows(codebook_.codes, tokens.ids);
  const std::size_t n = frames.value_or(tokens.ids.size() * config_.downsample);
  return tensor_to_part(decode_latent(latent, n), part_);
}

VqLoss PartTokenizer::vq_loss(const Tensor& x, const FrozenQuantization* frozen) const {
  VqLoss out;
  const Tensor z = encode_latent(x);
  out.ids = frozen ? frozen->ids
                   : quantize(z.value(), z.rows(), codebook_.codes.value(), codebook_.size(), codebook_.dim());
  if (out.ids.size() != z.rows()) throw ShapeError("vq_loss: frozen quantization does not match the input length");
  const Tensor q = gather_rows(codebook_.codes, out.ids);
  Tensor zq;
  if (frozen) {
    const Tensor z0 = Tensor::from(z.shape(), frozen->latent);
    const Tensor q0 = Tensor::from(z.shape(), frozen->codes);
    out.emb = scale(mse(z0, q), config_.w_emb);
    out.com = scale(mse(z, q0), config_.w_com);
    zq = add(z, sub(q0, z0));
  } else {
    out.emb = scale(mse(detach(z), q), config_.w_emb);
    out.com = scale(mse(z, detach(q)), config_.w_com);
    zq = straight_through(z, q);
  }
  out.rec = mse(decode_latent(zq, x.rows()), x);
  out.total = add(add(out.rec, out.emb), out.com);
  return out;
}

FrozenQuantization PartTokenizer::freeze(const Tensor& x) const {
  NoGradGuard no_grad;
  const Tensor z = encode_latent(x);
  FrozenQuantization f;
  f.ids = quantize(z.value(), z.rows(), codebook_.codes.value(), codebook_.size(), codebook_.dim());
  f.latent.assign(z.value().begin(), z.value().end());
  const Tensor q = gather_rows(codebook_.codes, f.ids);
  f.codes.assign(q.value().begin(), q.value().end());
  return f;
}

std::vector<NamedTensor> PartTokenizer::named_parameters() const {
  std::vector<NamedTensor> out;
  const std::string prefix = std::string(part_name(part_)) + ".";
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    out.push_back({prefix + "enc" + std::to_string(l) + ".w", encoder_[l].w});
    out.push_back({prefix + "enc" + std::to_string(l) + ".b", encoder_[l].b});
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    out.push_back({prefix + "dec" + std::to_string(l) + ".w", decoder_[l].w});
    out.push_back({prefix + "dec" + std::to_string(l) + ".b", decoder_[l].b});
  }
  out.push_back({prefix + "codebook", codebook_.codes});
  out.push_back({prefix + "norm_mean", norm_mean_});
  out.push_back({prefix + "norm_std", norm_std_});
  return out;
}

std::vector<Tensor> PartTokenizer::encoder_parameters() const {
  std::vector<Tensor> out;
  for (const auto& c : encoder_) out.insert(out.end(), {c.w, c.b});
  return out;
}

std::vector<Tensor> PartTokenizer::decoder_parameters() const {
  std::vector<Tensor> out;
  for (const auto& c : decoder_) out.insert(out.end(), {c.w, c.b});
  return out;
}

std::vector<Tensor> PartTokenizer::parameters() const {
  auto out = encoder_parameters();
  for (auto& t : decoder_parameters()) out.push_back(t);
  out.push_back(codebook_.codes);
  return out;
}

// ---- DecoupledTokenizer ----------------------------------------------------------

DecoupledTokenizer::DecoupledTokenizer(const PartLayout& layout, const TokenizerConfig& config, std::uint64_t seed)
    : layout_(layout), config_(config) {
  for (Part p : kParts) parts_.emplace_back(p, layout.part_slice(p).width, config, seed);
}

std::array<TokenSeq, 3> DecoupledTokenizer::encode(const MotionSequence& seq) const {
  if (!(seq.layout() == layout_)) throw LayoutError("tokenizer layout differs from the motion layout");
  const auto parts = split_parts(seq);
  std::array<TokenSeq, 3> out;
  for (Part p : kParts) out[part_index(p)] = part(p).encode(parts[part_index(p)]);
  return out;
}

MotionSequence DecoupledTokenizer::decode(const std::array<TokenSeq, 3>& tokens, std::optional<std::size_t> frames,
                                          double fps, const std::string& language) const {
  const std::size_t k = tokens[0].ids.size();
  if (tokens[1].ids.size() != k || tokens[2].ids.size() != k)
    throw ShapeError("decode: part token sequences differ in length");
  std::array<PartMotion, 3> parts;
  for (Part p : kParts) parts[part_index(p)] = part(p).decode(tokens[part_index(p)], frames);
  return merge_parts(parts, layout_, fps, language);
}

MotionSequence DecoupledTokenizer::round_trip(const MotionSequence& seq) const {
  return decode(encode(seq), seq.num_frames(), seq.fps(), seq.language());
}

void DecoupledTokenizer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<NamedTensor> all;
  for (const auto& p : parts_)
    for (auto& t : p.named_parameters()) all.push_back(std::move(t));
  save_checkpoint(dir / "deto.ckpt", all);
  nlohmann::json sidecar = {
      {"format", "soke-deto"},
      {"version", 1},
      {"layout",
       {{"body_joints", layout_.body_joints},
        {"hand_joints_per_hand", layout_.hand_joints_per_hand},
        {"expression_dims", layout_.expression_dims}}},
      {"part_widths", nlohmann::json::object()},
      {"codebook_sizes", nlohmann::json::object()},
      {"downsample", config_.downsample},
      {"width", config_.width},
      {"code_dim", config_.code_dim},
      {"w_emb", config_.w_emb},
      {"w_com", config_.w_com},
  };
  for (Part p : kParts) {
    sidecar["part_widths"][part_name(p)] = layout_.part_slice(p).width;
    sidecar["codebook_sizes"][part_name(p)] = codebook_size(p);
  }
  std::ofstream out(dir / "deto.json");
  out << sidecar.dump(2) << "\n";
  if (!out) throw InputError("cannot write " + (dir / "deto.json").string());
}

DecoupledTokenizer DecoupledTokenizer::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "deto.json");
  if (!in) throw InputError("missing tokenizer sidecar " + (dir / "deto.json").string());
  nlohmann::json j;
  try {
    in >> j;
    PartLayout layout;
    layout.body_joints = j.at("layout").at("body_joints");
    layout.hand_joints_per_hand = j.at("layout").at("hand_joints_per_hand");
    layout.expression_dims = j.at("layout").at("expression_dims");
    TokenizerConfig cfg;
    cfg.downsample = j.at("downsample");
    cfg.width = j.at("width");
    cfg.code_dim = j.at("code_dim");
    cfg.w_emb = j.at("w_emb");
    cfg.w_com = j.at("w_com");
    for (Part p : kParts) cfg.codebook_sizes[part_index(p)] = j.at("codebook_sizes").at(part_name(p));
    DecoupledTokenizer tok(layout, cfg, 0);
    std::vector<NamedTensor> all;
    for (const auto& p : tok.parts_)
      for (auto& t : p.named_parameters()) all.push_back(std::move(t));
    restore_parameters(load_checkpoint(dir / "deto.ckpt"), all);
    return tok;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed tokenizer sidecar: " + std::string(e.what()));
  }
}

// ---- training --------------------------------------------------------------------

namespace {

// Latent rows of a set of inputs, concatenated.
std::vector<Real> collect_latents(const PartTokenizer& tok, const std::vector<Tensor>& inputs) {
  NoGradGuard no_grad;
  std::vector<Real> rows;
  for (const auto& x : inputs) {
    const Tensor z = tok.encode_latent(x);
    rows.insert(rows.end(), z.value().begin(), z.value().end());
  }
  return rows;
}

// Overwrites `code` with a randomly chosen latent row plus a small jitter.
void seed_code(Tensor& codes, std::size_t code, const std::vector<Real>& latents, std::mt19937_64& rng) {
  const std::size_t dim = codes.cols();
  const std::size_t rows = latents.size() / dim;
  std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
  std::normal_distribution<Real> jitter(0.0, 1e-3);
  const std::size_t r = pick(rng);
  auto dst = codes.mutable_value().subspan(code * dim, dim);
  for (std::size_t i = 0; i < dim; ++i) dst[i] = latents[r * dim + i] + jitter(rng);
}

}  // namespace

std::vector<TrainRecord> train_part(PartTokenizer& tok, const std::vector<PartMotion>& corpus,
                                    const TrainConfig& train) {
  train.validate();
  if (corpus.empty()) throw InputError("train_tokenizer: empty corpus");
  const std::size_t f = tok.downsample();
  std::vector<Tensor> inputs;
  for (const auto& m : corpus) {
    if (m.num_frames < f) continue;
    inputs.push_back(part_tensor(m));
  }
  if (inputs.empty()) throw InputError("train_tokenizer: every sequence is shorter than the downsample window");

  {
    // Standardize with the corpus statistics; near-constant dimensions keep a
    // floor so they are not blown up.
    const std::size_t d = tok.input_dim();
    std::vector<Real> mean(d, 0.0), var(d, 0.0);
    std::size_t rows = 0;
    for (const auto& x : inputs) {
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) mean[c] += x.at(r, c);
      rows += x.rows();
    }
    for (auto& m : mean) m /= static_cast<Real>(rows);
    for (const auto& x : inputs)
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) var[c] += (x.at(r, c) - mean[c]) * (x.at(r, c) - mean[c]);
    std::vector<Real> stddev(d);
    for (std::size_t c = 0; c < d; ++c) stddev[c] = std::max(std::sqrt(var[c] / static_cast<Real>(rows)), 1e-2);
    tok.set_normalization(std::move(mean), std::move(stddev));
  }

  auto rng = make_rng(train.seed, 0x7a1e + part_index(tok.part()));
  Tensor codes = tok.codebook().codes;
  const std::size_t num_codes = tok.codebook().size();

  // Codebook rows start as encoder outputs of a warm-up batch (the corpus).
  {
    const auto latents = collect_latents(tok, inputs);
    for (std::size_t k = 0; k < num_codes; ++k) seed_code(codes, k, latents, rng);
  }

  AdamConfig adam_cfg;
  adam_cfg.clip_norm = train.clip_norm;
  Adam opt(tok.parameters(), adam_cfg, CosineSchedule{train.lr, train.min_lr, train.warmup_steps, train.steps});

  std::vector<std::size_t> usage(num_codes, 0);
  std::vector<Real> recent_latents;
  std::vector<TrainRecord> log;
  std::uniform_int_distribution<std::size_t> pick_seq(0, inputs.size() - 1);
  const auto reseed_stop = static_cast<std::size_t>(train.reseed_until * static_cast<Real>(train.steps));
  std::size_t reseeded_last = 0;

  for (std::size_t step = 0; step < train.steps; ++step) {
    opt.zero_grad();
    Tensor loss;
    Real rec = 0, emb = 0, com = 0;
    recent_latents.clear();
    for (std::size_t b = 0; b < train.batch; ++b) {
      Tensor x = inputs[pick_seq(rng)];
      if (train.crop_frames > 0 && x.rows() > train.crop_frames) {
        const std::size_t slots = (x.rows() - train.crop_frames) / f + 1;
        const std::size_t start = std::uniform_int_distribution<std::size_t>(0, slots - 1)(rng) * f;
        x = slice_rows(x, start, start + train.crop_frames);
      }
      VqLoss l;
      try {
        l = tok.vq_loss(x);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string("tokenizer ") + part_name(tok.part()) + " diverged at step " +
                             std::to_string(step) + ": " + e.what());
      }
      for (int id : l.ids) ++usage[static_cast<std::size_t>(id)];
      rec += l.rec.item();
      emb += l.emb.item();
      com += l.com.item();
      loss = loss.defined() ? add(loss, l.total) : l.total;
      if (step + 1 < reseed_stop && (step + 1) % train.reseed_interval == 0) {
        const auto z = collect_latents(tok, {x});
        recent_latents.insert(recent_latents.end(), z.begin(), z.end());
      }
    }
    loss = scale(loss, 1.0 / static_cast<Real>(train.batch));
    const Real lr = opt.current_lr();
    backward(loss);
    opt.step();

    std::size_t used = 0;
    if ((step + 1) % train.reseed_interval == 0) {
      used = static_cast<std::size_t>(std::count_if(usage.begin(), usage.end(), [](auto u) { return u > 0; }));
      reseeded_last = 0;
      if (step + 1 < reseed_stop && !recent_latents.empty()) {
        for (std::size_t k = 0; k < num_codes; ++k) {
          if (usage[k] == 0) {
            seed_code(codes, k, recent_latents, rng);
            ++reseeded_last;
          }
        }
      }
      std::fill(usage.begin(), usage.end(), 0);
    }

    if (step == 0 || (step + 1) % train.log_interval == 0 || step + 1 == train.steps) {
      const Real n = static_cast<Real>(train.batch);
      log.push_back({step + 1, tok.part(), (rec + emb + com) / n, rec / n, emb / n, com / n, lr, used, reseeded_last});
    }
  }
  return log;
}

TrainResult train_tokenizer(const std::vector<MotionSequence>& corpus, const TokenizerConfig& config,
                            const TrainConfig& train) {
  config.validate();
  train.validate();
  if (corpus.empty()) throw InputError("train_tokenizer: empty corpus");
  const PartLayout layout = corpus.front().layout();
  DecoupledTokenizer tok(layout, config, train.seed);
  std::array<std::vector<PartMotion>, 3> per_part;
  for (const auto& seq : corpus) {
    if (!(seq.layout() == layout)) throw LayoutError("train_tokenizer: mixed layouts in corpus");
    auto parts = split_parts(seq);
    for (Part p : kParts) per_part[part_index(p)].push_back(std::move(parts[part_index(p)]));
  }
  std::array<std::vector<TrainRecord>, 3> logs;
  parallel_for(
      3, [&](std::size_t i) { logs[i] = train_part(tok.part(kParts[i]), per_part[i], train); },
      train.threads == 0 ? worker_count() : train.threads);
  // Snap to the checkpoint precision so the returned tokenizer behaves exactly
  // like one reloaded from disk.
  for (Part p : kParts)
    for (auto& nt : tok.part(p).named_parameters())
      for (auto& v : nt.tensor.mutable_value()) v = static_cast<float>(v);
  TrainResult result{tok, {}};
  for (auto& l : logs) result.log.insert(result.log.end(), l.begin(), l.end());
  return result;
}

}  // namespace soke::deto
