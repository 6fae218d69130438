#include "soke/amg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "soke/error.hpp"
#include "soke/optim.hpp"
#include "soke/parallel.hpp"
#include "soke/rng.hpp"

namespace soke::amg {

using namespace soke::grad;

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    out.push_back(w);
  }
  return out;
}

// ---- Vocabulary ------------------------------------------------------------------

Vocabulary::Vocabulary(std::array<std::size_t, 3> codebook_sizes, std::vector<std::string> words,
                       std::vector<std::string> languages)
    : codebook_sizes_(codebook_sizes), languages_(std::move(languages)), words_(std::move(words)) {
  for (auto n : codebook_sizes_)
    if (n == 0) throw ConfigError("vocabulary: codebook sizes must be positive");
  for (const char* t : {"<PAD>", "<BOS>", "<EOS>", "<UNK>", "<SEP>"}) add(t);
  for (const auto& lang : languages_) add("<" + lang + ">");
  for (const auto& lang : languages_)
    for (Part p : kParts) add("<" + lang + "_" + part_name(p) + ">");
  for (Part p : kParts) {
    motion_offset_[part_index(p)] = static_cast<int>(tokens_.size());
    for (std::size_t c = 0; c < codebook_sizes_[part_index(p)]; ++c)
      add("<" + std::string(part_name(p)) + "_" + std::to_string(c + 1) + ">");
  }
  for (const auto& w : words_) add(w);
}

void Vocabulary::add(const std::string& token) {
  if (index_.count(token)) throw VocabularyError("duplicate token " + token);
  index_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::from_corpus(std::array<std::size_t, 3> codebook_sizes, const std::vector<std::string>& texts,
                                   std::vector<std::string> languages) {
  std::set<std::string> words;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) words.insert(std::move(w));
  return Vocabulary(codebook_sizes, std::vector<std::string>(words.begin(), words.end()), std::move(languages));
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw RangeError("token id " + std::to_string(id) + " outside the vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw VocabularyError("unknown token " + token);
  return it->second;
}

int Vocabulary::language_token(const std::string& lang) const {
  auto it = index_.find("<" + lang + ">");
  if (it == index_.end()) throw VocabularyError("unknown language tag " + lang);
  return it->second;
}

int Vocabulary::part_start_token(const std::string& lang, Part part) const {
  auto it = index_.find("<" + lang + "_" + part_name(part) + ">");
  if (it == index_.end()) throw VocabularyError("unknown language tag " + lang);
  return it->second;
}

int Vocabulary::motion_token(Part p, int code) const {
  if (code < 0 || static_cast<std::size_t>(code) >= codebook_size(p))
    throw RangeError("code " + std::to_string(code) + " outside the " + part_name(p) + " codebook");
  return motion_offset_[part_index(p)] + code;
}

bool Vocabulary::is_motion(int id, Part p) const {
  const int lo = motion_offset_[part_index(p)];
  return id >= lo && id < lo + static_cast<int>(codebook_size(p));
}

bool Vocabulary::is_motion(int id) const {
  return is_motion(id, Part::kBody) || is_motion(id, Part::kLeftHand) || is_motion(id, Part::kRightHand);
}

Part Vocabulary::motion_part(int id) const {
  for (Part p : kParts)
    if (is_motion(id, p)) return p;
  throw VocabularyError("token " + std::to_string(id) + " is not a motion token");
}

int Vocabulary::motion_code(int id) const { return id - motion_offset_[part_index(motion_part(id))]; }

std::vector<int> Vocabulary::text_tokens(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : split_words(text)) {
    // Only words of the text vocabulary; a word that spells a control token is unknown.
    auto it = std::lower_bound(words_.begin(), words_.end(), w);
    out.push_back(it != words_.end() && *it == w ? index_.at(w) : kUnk);
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j;
  for (Part p : kParts) j["codebook_sizes"][part_name(p)] = codebook_size(p);
  j["languages"] = languages_;
  j["words"] = words_;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  try {
    std::array<std::size_t, 3> sizes{};
    for (Part p : kParts) sizes[part_index(p)] = j.at("codebook_sizes").at(part_name(p));
    return Vocabulary(sizes, j.at("words").get<std::vector<std::string>>(),
                      j.at("languages").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed vocabulary: ") + e.what());
  }
}

// ---- triples -----------------------------------------------------------------

std::vector<int> flatten(const std::vector<PartTokenTriple>& triples) {
  std::vector<int> out;
  out.reserve(3 * triples.size());
  for (const auto& t : triples) out.insert(out.end(), {t.body, t.left, t.right});
  return out;
}

std::vector<PartTokenTriple> unflatten(std::span<const int> flat, const Vocabulary& vocab) {
  if (flat.size() % 3 != 0) throw ShapeError("unflatten: length " + std::to_string(flat.size()) + " is not a multiple of 3");
  std::vector<PartTokenTriple> out(flat.size() / 3);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const Part p = kParts[i % 3];
    if (!vocab.is_motion(flat[i], p))
      throw VocabularyError("unflatten: token " + std::to_string(flat[i]) + " at position " + std::to_string(i) +
                            " is not a " + part_name(p) + " motion token");
    out[i / 3][p] = flat[i];
  }
  return out;
}

std::vector<PartTokenTriple> triples_from_codes(const std::array<deto::TokenSeq, 3>& codes, const Vocabulary& vocab) {
  const std::size_t k = codes[0].ids.size();
  if (codes[1].ids.size() != k || codes[2].ids.size() != k) throw ShapeError("part token sequences differ in length");
  std::vector<PartTokenTriple> out(k);
  for (Part p : kParts)
    for (std::size_t i = 0; i < k; ++i) out[i][p] = vocab.motion_token(p, codes[part_index(p)].ids[i]);
  return out;
}

std::array<deto::TokenSeq, 3> codes_from_triples(const std::vector<PartTokenTriple>& triples, const Vocabulary& vocab) {
  std::array<deto::TokenSeq, 3> out;
  for (Part p : kParts) {
    out[part_index(p)].part = p;
    for (const auto& t : triples) {
      if (!vocab.is_motion(t[p], p)) throw VocabularyError("triple holds a token from the wrong part");
      out[part_index(p)].ids.push_back(vocab.motion_code(t[p]));
    }
  }
  return out;
}

std::vector<Real> fuse_embeddings(std::span<const Real> e_body, std::span<const Real> e_left,
                                  std::span<const Real> e_right, Real lambda) {
  if (!(lambda > 0.0 && lambda < 0.5)) throw ConfigError("fusion weight lambda must lie in (0, 0.5)");
  if (e_left.size() != e_body.size() || e_right.size() != e_body.size())
    throw ShapeError("fuse_embeddings: dimension mismatch");
  std::vector<Real> out(e_body.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (1.0 - 2.0 * lambda) * e_body[i] + lambda * e_left[i] + lambda * e_right[i];
  return out;
}

DecodeMode mode_from_name(const std::string& name) {
  if (name == "sequential") return DecodeMode::kSequential;
  if (name == "parallel") return DecodeMode::kParallel;
  if (name == "multihead") return DecodeMode::kMultiHead;
  throw ConfigError("unknown decoding mode '" + name + "' (expected sequential, parallel or multihead)");
}

std::string mode_name(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::kSequential:
      return "sequential";
    case DecodeMode::kParallel:
      return "parallel";
    case DecodeMode::kMultiHead:
      return "multihead";
  }
  return "?";
}

std::size_t parallel_length(const std::array<std::size_t, 3>& eos_positions, std::size_t k_max) {
  return std::min(k_max, *std::min_element(eos_positions.begin(), eos_positions.end()));
}

void GeneratorConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) throw ConfigError("amg.d_model must be a multiple of amg.heads");
  if (ffn == 0 || encoder_layers == 0 || decoder_layers == 0) throw ConfigError("amg layer sizes must be positive");
  if (max_prompt == 0) throw ConfigError("amg.max_prompt must be positive");
  if (!(lambda > 0.0 && lambda < 0.5)) throw ConfigError("amg.lambda must lie in (0, 0.5)");
}

void GeneratorTrainConfig::validate() const {
  if (steps == 0 || batch == 0) throw ConfigError("amg training needs steps > 0 and batch > 0");
  if (!(lr > 0)) throw ConfigError("amg.lr must be positive");
}

// ---- model -------------------------------------------------------------------

namespace {

Tensor normal_tensor(Shape shape, Real stddev, std::mt19937_64& rng) {
  std::normal_distribution<Real> dist(0.0, stddev);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor uniform_tensor(Shape shape, Real bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> dist(-bound, bound);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Lowest allowed index with the largest value.
std::size_t masked_argmax(std::span<const Real> row, const std::vector<std::uint8_t>& allowed) {
  std::size_t best = row.size();
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (!allowed.empty() && !allowed[c]) continue;
    if (best == row.size() || row[c] > row[best]) best = c;
  }
  if (best == row.size()) throw ModeError("no decodable class left after masking");
  return best;
}

std::vector<Real> log_softmax(std::span<const Real> row) {
  const Real m = *std::max_element(row.begin(), row.end());
  Real s = 0.0;
  for (Real v : row) s += std::exp(v - m);
  const Real lse = m + std::log(s);
  std::vector<Real> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
  return out;
}

}  // namespace

GeneratorModel::GeneratorModel(Vocabulary vocab, const GeneratorConfig& config, std::uint64_t seed)
    : vocab_(std::move(vocab)), config_(config) {
  config_.validate();
  auto rng = make_rng(seed, 0xa36);
  const std::size_t d = config_.d_model;
  auto linear = [&](std::size_t in, std::size_t out) {
    return Linear{uniform_tensor({in, out}, 1.0 / std::sqrt(static_cast<Real>(in)), rng), Tensor::zeros({out}, true)};
  };
  auto norm = [&] { return Norm{Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)}; };
  auto attention = [&] { return Attention{linear(d, d), linear(d, d), linear(d, d), linear(d, d)}; };

  embedding_ = normal_tensor({vocab_.size(), d}, 0.1, rng);
  enc_pos_ = normal_tensor({config_.max_prompt, d}, 0.1, rng);
  dec_pos_ = normal_tensor({decoder_positions(), d}, 0.1, rng);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l)
    encoder_.push_back({norm(), norm(), attention(), linear(d, config_.ffn), linear(config_.ffn, d)});
  for (std::size_t l = 0; l < config_.decoder_layers; ++l)
    decoder_.push_back({norm(), norm(), norm(), attention(), attention(), linear(d, config_.ffn), linear(config_.ffn, d)});
  enc_norm_ = norm();
  dec_norm_ = norm();
  const auto& n = vocab_.codebook_sizes();
  if (config_.mode == DecodeMode::kMultiHead) {
    for (Part p : kParts) {
      std::vector<int> ids;
      for (std::size_t c = 0; c < n[part_index(p)]; ++c) ids.push_back(vocab_.motion_token(p, static_cast<int>(c)));
      head_tokens_.push_back(ids);
    }
  } else {
    std::vector<int> ids;
    for (Part p : kParts)
      for (std::size_t c = 0; c < n[part_index(p)]; ++c) ids.push_back(vocab_.motion_token(p, static_cast<int>(c)));
    head_tokens_.push_back(ids);
  }
  for (auto& ids : head_tokens_) {
    ids.push_back(Vocabulary::kEos);
    if (config_.tied_output)
      heads_.push_back(Linear{Tensor{}, Tensor::zeros({ids.size()}, true)});
    else
      heads_.push_back(linear(d, ids.size()));
  }
}

std::size_t GeneratorModel::decoder_positions() const {
  return (config_.mode == DecodeMode::kSequential ? 3 * config_.k_max : config_.k_max) + 1;
}

void GeneratorModel::require_mode(DecodeMode m, const char* what) const {
  if (config_.mode != m)
    throw ModeError(std::string(what) + " needs a " + mode_name(m) + " model, this one is " + mode_name(config_.mode));
}

Tensor GeneratorModel::apply(const Linear& l, const Tensor& x) const { return add_row(matmul(x, l.w), l.b); }

Tensor GeneratorModel::logits(std::size_t head, const Tensor& x) const {
  if (!config_.tied_output) return apply(heads_[head], x);
  return add_row(matmul(x, transpose(embed(head_tokens_[head]))), heads_[head].b);
}

Tensor GeneratorModel::attend(const Attention& a, const Tensor& xq, const Tensor& xkv, bool causal) const {
  const Tensor q = apply(a.q, xq), k = apply(a.k, xkv), v = apply(a.v, xkv);
  const std::size_t dh = config_.d_model / config_.heads;
  const Real scale_factor = 1.0 / std::sqrt(static_cast<Real>(dh));
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < config_.heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor weights = softmax_rows(scale(matmul(qh, transpose(kh)), scale_factor), causal);
    outs.push_back(matmul(weights, vh));
  }
  return apply(a.o, config_.heads == 1 ? outs[0] : concat_cols(outs));
}

Tensor GeneratorModel::feed_forward(const Linear& f1, const Linear& f2, const Tensor& x) const {
  return apply(f2, gelu(apply(f1, x)));
}

Tensor GeneratorModel::embed(std::span<const int> ids) const { return gather_rows(embedding_, ids); }

Tensor GeneratorModel::encode(std::span<const int> prompt) const {
  if (prompt.empty()) throw InputError("encode: empty prompt");
  const std::size_t n = std::min(prompt.size(), config_.max_prompt);
  Tensor x = add(embed(prompt.first(n)), slice_rows(enc_pos_, 0, n));
  for (const auto& l : encoder_) {
    const Tensor h = layer_norm(x, l.n1.gamma, l.n1.beta);
    x = add(x, attend(l.self, h, h, false));
    x = add(x, feed_forward(l.ff1, l.ff2, layer_norm(x, l.n2.gamma, l.n2.beta)));
  }
  return layer_norm(x, enc_norm_.gamma, enc_norm_.beta);
}

Tensor GeneratorModel::decode_states(const Tensor& inputs, const Tensor& h_en) const {
  const std::size_t n = inputs.rows();
  if (n > dec_pos_.rows()) throw RangeError("decoder input longer than the positional table");
  Tensor x = add(inputs, slice_rows(dec_pos_, 0, n));
  for (const auto& l : decoder_) {
    const Tensor h = layer_norm(x, l.n1.gamma, l.n1.beta);
    x = add(x, attend(l.self, h, h, true));
    x = add(x, attend(l.cross, layer_norm(x, l.n2.gamma, l.n2.beta), h_en, false));
    x = add(x, feed_forward(l.ff1, l.ff2, layer_norm(x, l.n3.gamma, l.n3.beta)));
  }
  return layer_norm(x, dec_norm_.gamma, dec_norm_.beta);
}

Tensor GeneratorModel::fused_inputs(int start_token, const std::vector<PartTokenTriple>& triples) const {
  const int start[] = {start_token};
  const Tensor first = embed(start);
  if (triples.empty()) return first;
  std::array<std::vector<int>, 3> ids;
  for (const auto& t : triples)
    for (Part p : kParts) ids[part_index(p)].push_back(t[p]);
  const Real lam = config_.lambda;
  const Tensor fused = add(add(scale(embed(ids[0]), 1.0 - 2.0 * lam), scale(embed(ids[1]), lam)), scale(embed(ids[2]), lam));
  return concat_rows({first, fused});
}

std::size_t GeneratorModel::joint_class(int token) const {
  if (token == Vocabulary::kEos) return heads_[0].b.size() - 1;
  const Part p = vocab_.motion_part(token);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < part_index(p); ++i) offset += vocab_.codebook_sizes()[i];
  return offset + static_cast<std::size_t>(vocab_.motion_code(token));
}

int GeneratorModel::joint_token(std::size_t cls) const {
  for (Part p : kParts) {
    const std::size_t n = vocab_.codebook_size(p);
    if (cls < n) return vocab_.motion_token(p, static_cast<int>(cls));
    cls -= n;
  }
  return Vocabulary::kEos;
}

std::vector<std::uint8_t> GeneratorModel::joint_mask(Part p, bool allow_eos) const {
  const std::size_t classes = heads_[0].b.size();
  std::vector<std::uint8_t> mask(classes, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < part_index(p); ++i) offset += vocab_.codebook_sizes()[i];
  for (std::size_t c = 0; c < vocab_.codebook_size(p); ++c) mask[offset + c] = 1;
  if (allow_eos) mask[classes - 1] = 1;
  return mask;
}

DecodeResult GeneratorModel::decode_sequential(const Tensor& h_en, const std::string& lang,
                                               const DecodeOptions& opts) const {
  require_mode(DecodeMode::kSequential, "decode_sequential");
  NoGradGuard no_grad;
  const std::size_t k_max = std::min(opts.k_max ? opts.k_max : config_.k_max, config_.k_max);
  std::vector<int> ids = {vocab_.language_token(lang)};
  std::vector<int> flat;
  DecodeResult r;
  std::array<std::vector<std::uint8_t>, 3> masks;
  for (Part p : kParts) masks[part_index(p)] = joint_mask(p, opts.stop_at_eos);
  for (std::size_t pos = 0; pos < 3 * k_max; ++pos) {
    const Tensor states = decode_states(embed(ids), h_en);
    ++r.forward_passes;
    const Tensor scores = logits(0, slice_rows(states, states.rows() - 1, states.rows()));
    const int token = joint_token(masked_argmax(scores.value(), masks[pos % 3]));
    if (token == Vocabulary::kEos) {
      r.ended_with_eos = true;
      break;
    }
    flat.push_back(token);
    ids.push_back(token);
  }
  r.step_count = flat.size();
  flat.resize(flat.size() / 3 * 3);  // a trailing partial triple is dropped
  r.triples = unflatten(flat, vocab_);
  return r;
}

DecodeResult GeneratorModel::decode_parallel(const Tensor& h_en, const std::string& lang,
                                             const DecodeOptions& opts) const {
  require_mode(DecodeMode::kParallel, "decode_parallel");
  NoGradGuard no_grad;
  const std::size_t k_max = std::min(opts.k_max ? opts.k_max : config_.k_max, config_.k_max);
  std::array<std::vector<int>, 3> streams;
  std::array<std::vector<std::uint8_t>, 3> masks;
  for (Part p : kParts) {
    streams[part_index(p)] = {vocab_.part_start_token(lang, p)};
    masks[part_index(p)] = joint_mask(p, opts.stop_at_eos);
  }
  DecodeResult r;
  for (std::size_t k = 0; k < k_max; ++k) {
    std::array<int, 3> next{};
    parallel_for(
        3,
        [&](std::size_t s) {
          NoGradGuard stream_guard;  // the flag is per thread
          const Tensor states = decode_states(embed(streams[s]), h_en);
          const Tensor scores = logits(0, slice_rows(states, states.rows() - 1, states.rows()));
          next[s] = joint_token(masked_argmax(scores.value(), masks[s]));
        },
        opts.threads == 0 ? 1 : opts.threads);
    r.forward_passes += 3;
    if (std::find(next.begin(), next.end(), Vocabulary::kEos) != next.end()) {
      r.ended_with_eos = true;
      break;
    }
    PartTokenTriple t;
    for (Part p : kParts) {
      t[p] = next[part_index(p)];
      streams[part_index(p)].push_back(t[p]);
    }
    r.triples.push_back(t);
  }
  r.step_count = r.triples.size();
  return r;
}

DecodeResult GeneratorModel::decode_multihead(const Tensor& h_en, const std::string& lang,
                                              const DecodeOptions& opts) const {
  require_mode(DecodeMode::kMultiHead, "decode_multihead");
  NoGradGuard no_grad;
  const std::size_t k_max = std::min(opts.k_max ? opts.k_max : config_.k_max, config_.k_max);
  const int start = vocab_.language_token(lang);
  std::array<std::vector<std::uint8_t>, 3> masks;
  for (Part p : kParts) {
    masks[part_index(p)].assign(vocab_.codebook_size(p) + 1, 1);
    if (!opts.stop_at_eos) masks[part_index(p)].back() = 0;
  }
  DecodeResult r;
  for (std::size_t k = 0; k < k_max; ++k) {
    const Tensor states = decode_states(fused_inputs(start, r.triples), h_en);
    ++r.forward_passes;
    const Tensor last = slice_rows(states, states.rows() - 1, states.rows());
    PartTokenTriple t;
    bool eos = false;
    for (Part p : kParts) {
      const std::size_t cls = masked_argmax(logits(part_index(p), last).value(), masks[part_index(p)]);
      if (cls == vocab_.codebook_size(p)) {
        eos = true;
      } else {
        t[p] = vocab_.motion_token(p, static_cast<int>(cls));
      }
    }
    if (eos) {
      r.ended_with_eos = true;
      break;
    }
    r.triples.push_back(t);
  }
  r.step_count = r.triples.size();
  return r;
}

DecodeResult GeneratorModel::generate(std::span<const int> prompt, const std::string& lang,
                                      const DecodeOptions& opts) const {
  NoGradGuard no_grad;
  const Tensor h = encode(prompt);
  switch (config_.mode) {
    case DecodeMode::kSequential:
      return decode_sequential(h, lang, opts);
    case DecodeMode::kParallel:
      return decode_parallel(h, lang, opts);
    case DecodeMode::kMultiHead:
      break;
  }
  return decode_multihead(h, lang, opts);
}

std::array<std::vector<Real>, 3> GeneratorModel::head_log_probs(const Tensor& h_en, const std::string& lang,
                                                                const std::vector<PartTokenTriple>& prefix) const {
  require_mode(DecodeMode::kMultiHead, "head_log_probs");
  NoGradGuard no_grad;
  const Tensor states = decode_states(fused_inputs(vocab_.language_token(lang), prefix), h_en);
  const Tensor last = slice_rows(states, states.rows() - 1, states.rows());
  std::array<std::vector<Real>, 3> out;
  for (Part p : kParts) out[part_index(p)] = log_softmax(logits(part_index(p), last).value());
  return out;
}

Tensor GeneratorModel::loss(const TrainingPair& pair, std::size_t* tokens) const {
  std::vector<PartTokenTriple> target = pair.target;
  if (target.size() > config_.k_max) target.resize(config_.k_max);
  const Tensor h_en = encode(pair.prompt);
  Tensor total;
  std::size_t count = 0;
  switch (config_.mode) {
    case DecodeMode::kSequential: {
      std::vector<int> ids = {vocab_.language_token(pair.language)};
      const auto flat = flatten(target);
      ids.insert(ids.end(), flat.begin(), flat.end());
      std::vector<int> classes;
      std::vector<std::uint8_t> mask;
      for (std::size_t i = 0; i <= flat.size(); ++i) {
        classes.push_back(static_cast<int>(joint_class(i < flat.size() ? flat[i] : Vocabulary::kEos)));
        const auto m = joint_mask(kParts[i % 3], true);
        mask.insert(mask.end(), m.begin(), m.end());
      }
      total = cross_entropy(logits(0, decode_states(embed(ids), h_en)), classes, mask);
      count = classes.size();
      break;
    }
    case DecodeMode::kParallel: {
      for (Part p : kParts) {
        std::vector<int> ids = {vocab_.part_start_token(pair.language, p)};
        std::vector<int> classes;
        std::vector<std::uint8_t> mask;
        const auto m = joint_mask(p, true);
        for (const auto& t : target) {
          ids.push_back(t[p]);
          classes.push_back(static_cast<int>(joint_class(t[p])));
        }
        classes.push_back(static_cast<int>(joint_class(Vocabulary::kEos)));
        for (std::size_t i = 0; i < classes.size(); ++i) mask.insert(mask.end(), m.begin(), m.end());
        const Tensor l = cross_entropy(logits(0, decode_states(embed(ids), h_en)), classes, mask);
        total = total.defined() ? add(total, l) : l;
        count += classes.size();
      }
      break;
    }
    case DecodeMode::kMultiHead: {
      const Tensor states = decode_states(fused_inputs(vocab_.language_token(pair.language), target), h_en);
      for (Part p : kParts) {
        std::vector<int> classes;
        for (const auto& t : target) classes.push_back(vocab_.motion_code(t[p]));
        classes.push_back(static_cast<int>(vocab_.codebook_size(p)));
        const Tensor l = cross_entropy(logits(part_index(p), states), classes);
        total = total.defined() ? add(total, l) : l;
        count += classes.size();
      }
      break;
    }
  }
  if (tokens) *tokens = count;
  return scale(total, 1.0 / static_cast<Real>(count));
}

std::vector<NamedTensor> GeneratorModel::named_parameters() const {
  std::vector<NamedTensor> out = {{"embedding", embedding_}, {"enc_pos", enc_pos_}, {"dec_pos", dec_pos_}};
  auto lin = [&](const std::string& name, const Linear& l) {
    out.push_back({name + ".w", l.w});
    out.push_back({name + ".b", l.b});
  };
  auto nrm = [&](const std::string& name, const Norm& n) {
    out.push_back({name + ".gamma", n.gamma});
    out.push_back({name + ".beta", n.beta});
  };
  auto att = [&](const std::string& name, const Attention& a) {
    lin(name + ".q", a.q);
    lin(name + ".k", a.k);
    lin(name + ".v", a.v);
    lin(name + ".o", a.o);
  };
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const std::string p = "enc" + std::to_string(i);
    nrm(p + ".n1", encoder_[i].n1);
    nrm(p + ".n2", encoder_[i].n2);
    att(p + ".self", encoder_[i].self);
    lin(p + ".ff1", encoder_[i].ff1);
    lin(p + ".ff2", encoder_[i].ff2);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const std::string p = "dec" + std::to_string(i);
    nrm(p + ".n1", decoder_[i].n1);
    nrm(p + ".n2", decoder_[i].n2);
    nrm(p + ".n3", decoder_[i].n3);
    att(p + ".self", decoder_[i].self);
    att(p + ".cross", decoder_[i].cross);
    lin(p + ".ff1", decoder_[i].ff1);
    lin(p + ".ff2", decoder_[i].ff2);
  }
  nrm("enc_norm", enc_norm_);
  nrm("dec_norm", dec_norm_);
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    if (config_.tied_output)
      out.push_back({"head" + std::to_string(i) + ".b", heads_[i].b});
    else
      lin("head" + std::to_string(i), heads_[i]);
  }
  return out;
}

std::vector<Tensor> GeneratorModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

void GeneratorModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "generator.ckpt", named_parameters());
  const nlohmann::json j = {
      {"format", "soke-generator"},
      {"version", 1},
      {"config",
       {{"mode", mode_name(config_.mode)},
        {"d_model", config_.d_model},
        {"heads", config_.heads},
        {"ffn", config_.ffn},
        {"encoder_layers", config_.encoder_layers},
        {"decoder_layers", config_.decoder_layers},
        {"max_prompt", config_.max_prompt},
        {"k_max", config_.k_max},
        {"lambda", config_.lambda},
        {"tied_output", config_.tied_output}}},
      {"vocabulary", vocab_.to_json()},
  };
  std::ofstream out(dir / "generator.json");
  out << j.dump(2) << "\n";
  if (!out) throw InputError("cannot write " + (dir / "generator.json").string());
}

GeneratorModel GeneratorModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "generator.json");
  if (!in) throw InputError("missing generator description " + (dir / "generator.json").string());
  try {
    const auto j = nlohmann::json::parse(in);
    const auto& c = j.at("config");
    GeneratorConfig cfg;
    cfg.mode = mode_from_name(c.at("mode"));
    cfg.d_model = c.at("d_model");
    cfg.heads = c.at("heads");
    cfg.ffn = c.at("ffn");
    cfg.encoder_layers = c.at("encoder_layers");
    cfg.decoder_layers = c.at("decoder_layers");
    cfg.max_prompt = c.at("max_prompt");
    cfg.k_max = c.at("k_max");
    cfg.lambda = c.at("lambda");
    cfg.tied_output = c.at("tied_output");
    GeneratorModel model(Vocabulary::from_json(j.at("vocabulary")), cfg, 0);
    restore_parameters(load_checkpoint(dir / "generator.ckpt"), model.named_parameters());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed generator description: ") + e.what());
  }
}

// ---- training ------------------------------------------------------------------

GeneratorTrainResult train_generator(const std::vector<TrainingPair>& pairs, GeneratorModel& model,
                                     const GeneratorTrainConfig& config) {
  config.validate();
  if (pairs.empty()) throw InputError("train_generator: no training pairs");
  GeneratorTrainResult result;
  for (const auto& p : pairs) {
    if (p.prompt.size() > model.config().max_prompt) ++result.truncated_prompts;
    if (p.target.size() > model.config().k_max) ++result.truncated_targets;
    if (p.target.empty()) throw InputError("train_generator: empty target for a pair");
  }

  AdamConfig adam_cfg;
  adam_cfg.weight_decay = config.weight_decay;
  adam_cfg.clip_norm = config.clip_norm;
  Adam opt(model.parameters(), adam_cfg, CosineSchedule{config.lr, config.min_lr, config.warmup_steps, config.steps});
  auto rng = make_rng(config.seed, 0x9e4);

  // Batches walk through reshuffled epochs.
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  for (std::size_t step = 0; step < config.steps; ++step) {
    opt.zero_grad();
    Tensor loss;
    for (std::size_t b = 0; b < config.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Tensor l = model.loss(pairs[order[cursor++]]);
      loss = loss.defined() ? add(loss, l) : l;
    }
    loss = scale(loss, 1.0 / static_cast<Real>(config.batch));
    const Real lr = opt.current_lr();
    const Real value = loss.item();
    try {
      backward(loss);
      opt.step();
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("generator training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (step == 0 || (step + 1) % config.log_interval == 0 || step + 1 == config.steps)
      result.log.push_back({step + 1, value, lr});
  }
  for (auto& p : model.parameters())
    for (auto& v : p.mutable_value()) v = static_cast<float>(v);
  return result;
}

}  // namespace soke::amg
