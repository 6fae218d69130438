#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "soke/checkpoint.hpp"
#include "soke/deto.hpp"
#include "soke/grad.hpp"
#include "soke/motion.hpp"

namespace soke::amg {

using grad::Real;
using grad::Tensor;

/// Lowercased whitespace-separated words.
std::vector<std::string> split_words(const std::string& text);

/// Unified token space: control tokens, language tokens, per-part start tokens
/// (<ASL_B> ...), motion tokens (<B_1> ... rendered 1-based) and text words.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSep = 4;  // optional separator between retrieved blocks

  Vocabulary() = default;
  Vocabulary(std::array<std::size_t, 3> codebook_sizes, std::vector<std::string> words,
             std::vector<std::string> languages = {"ASL", "CSL", "DGS"});
  /// Words are collected from `texts` (split_words), sorted and deduplicated.
  static Vocabulary from_corpus(std::array<std::size_t, 3> codebook_sizes, const std::vector<std::string>& texts,
                                std::vector<std::string> languages = {"ASL", "CSL", "DGS"});

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  /// Throws VocabularyError for an unknown token string.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  int language_token(const std::string& lang) const;
  int part_start_token(const std::string& lang, Part part) const;
  const std::vector<std::string>& languages() const { return languages_; }

  std::size_t codebook_size(Part p) const { return codebook_sizes_[part_index(p)]; }
  const std::array<std::size_t, 3>& codebook_sizes() const { return codebook_sizes_; }
  int motion_token(Part p, int code) const;
  bool is_motion(int id) const;
  bool is_motion(int id, Part p) const;
  Part motion_part(int id) const;
  int motion_code(int id) const;

  /// Word ids of `text`, unknown words mapped to <UNK>.
  std::vector<int> text_tokens(const std::string& text) const;
  std::size_t text_vocabulary_size() const { return words_.size(); }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(const std::string& token);

  std::array<std::size_t, 3> codebook_sizes_{};
  std::vector<std::string> languages_;
  std::vector<std::string> words_;
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  std::array<int, 3> motion_offset_{};
};

/// One decoding step's motion tokens (vocabulary ids), or EOS in a slot.
struct PartTokenTriple {
  int body = Vocabulary::kEos;
  int left = Vocabulary::kEos;
  int right = Vocabulary::kEos;

  int operator[](Part p) const { return p == Part::kBody ? body : p == Part::kLeftHand ? left : right; }
  int& operator[](Part p) { return p == Part::kBody ? body : p == Part::kLeftHand ? left : right; }
  bool operator==(const PartTokenTriple&) const = default;
};

/// (y1^B, y1^LH, y1^RH, y2^B, ...).
std::vector<int> flatten(const std::vector<PartTokenTriple>& triples);
/// Inverse of flatten. Throws ShapeError if the length is not a multiple of 3
/// and VocabularyError if a token sits in the wrong part slot.
std::vector<PartTokenTriple> unflatten(std::span<const int> flat, const Vocabulary& vocab);

/// Triples from per-part code sequences of equal length, and back.
std::vector<PartTokenTriple> triples_from_codes(const std::array<deto::TokenSeq, 3>& codes, const Vocabulary& vocab);
std::array<deto::TokenSeq, 3> codes_from_triples(const std::vector<PartTokenTriple>& triples, const Vocabulary& vocab);

/// (1 - 2 lambda) e_B + lambda e_LH + lambda e_RH; lambda must lie in (0, 0.5).
std::vector<Real> fuse_embeddings(std::span<const Real> e_body, std::span<const Real> e_left,
                                  std::span<const Real> e_right, Real lambda);

enum class DecodeMode { kSequential, kParallel, kMultiHead };
DecodeMode mode_from_name(const std::string& name);
std::string mode_name(DecodeMode mode);

struct GeneratorConfig {
  DecodeMode mode = DecodeMode::kMultiHead;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t max_prompt = 160;  // encoder positions
  std::size_t k_max = 24;        // maximum emitted triples
  Real lambda = 1.0 / 3.0;
  // output heads score states against the embedding rows of their classes
  bool tied_output = true;

  void validate() const;
};

struct DecodeOptions {
  std::size_t k_max = 0;    // 0 = the model's k_max
  bool stop_at_eos = true;  // false masks EOS out and always emits k_max triples
  std::size_t threads = 1;  // parallel mode: streams run on up to this many threads
};

struct DecodeResult {
  std::vector<PartTokenTriple> triples;
  /// Decoder forward passes that produced emitted tokens (a terminating EOS
  /// step is not counted). For parallel mode this is the per-stream count.
  std::size_t step_count = 0;
  /// All decoder forward passes, including EOS steps and every parallel stream.
  std::size_t forward_passes = 0;
  bool ended_with_eos = false;
};

/// Earliest-EOS rule of parallel decoding: the common length of three streams
/// whose first EOS sits at the given positions (npos = no EOS).
std::size_t parallel_length(const std::array<std::size_t, 3>& eos_positions, std::size_t k_max);

struct TrainingPair {
  std::vector<int> prompt;  // vocabulary ids, usually starting with the language token
  std::string language;
  std::vector<PartTokenTriple> target;
};

/// Encoder-decoder transformer (pre-LN, learned positions) with the output
/// head(s) of its decoding mode: one head over all motion classes plus EOS
/// for sequential and parallel mode, three per-part heads for multi-head mode.
class GeneratorModel {
 public:
  GeneratorModel(Vocabulary vocab, const GeneratorConfig& config, std::uint64_t seed);

  const Vocabulary& vocabulary() const { return vocab_; }
  const GeneratorConfig& config() const { return config_; }
  DecodeMode mode() const { return config_.mode; }

  /// Encoder states for a prompt (truncated to max_prompt).
  Tensor encode(std::span<const int> prompt) const;

  DecodeResult decode_sequential(const Tensor& h_en, const std::string& lang, const DecodeOptions& opts = {}) const;
  DecodeResult decode_parallel(const Tensor& h_en, const std::string& lang, const DecodeOptions& opts = {}) const;
  DecodeResult decode_multihead(const Tensor& h_en, const std::string& lang, const DecodeOptions& opts = {}) const;
  /// Encodes the prompt and dispatches on the model's mode.
  DecodeResult generate(std::span<const int> prompt, const std::string& lang, const DecodeOptions& opts = {}) const;

  /// Mean per-token cross-entropy of the teacher-forced target; `tokens`
  /// receives the number of predicted tokens.
  Tensor loss(const TrainingPair& pair, std::size_t* tokens = nullptr) const;

  /// Multi-head mode: per-head log-probabilities (codes then EOS) for the step
  /// following `prefix`.
  std::array<std::vector<Real>, 3> head_log_probs(const Tensor& h_en, const std::string& lang,
                                                  const std::vector<PartTokenTriple>& prefix) const;

  std::vector<grad::NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;

  /// generator.ckpt plus generator.json (config and vocabulary).
  void save(const std::filesystem::path& dir) const;
  static GeneratorModel load(const std::filesystem::path& dir);

 private:
  struct Linear {
    Tensor w, b;
  };
  struct Norm {
    Tensor gamma, beta;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct EncoderLayer {
    Norm n1, n2;
    Attention self;
    Linear ff1, ff2;
  };
  struct DecoderLayer {
    Norm n1, n2, n3;
    Attention self, cross;
    Linear ff1, ff2;
  };

  void require_mode(DecodeMode m, const char* what) const;
  std::size_t decoder_positions() const;
  Tensor apply(const Linear& l, const Tensor& x) const;
  /// Class scores of output head `head`.
  Tensor logits(std::size_t head, const Tensor& x) const;
  Tensor attend(const Attention& a, const Tensor& xq, const Tensor& xkv, bool causal) const;
  Tensor feed_forward(const Linear& f1, const Linear& f2, const Tensor& x) const;
  /// Decoder trunk over input embeddings [n, d] -> final states [n, d].
  Tensor decode_states(const Tensor& inputs, const Tensor& h_en) const;
  Tensor embed(std::span<const int> ids) const;
  Tensor fused_inputs(int start_token, const std::vector<PartTokenTriple>& triples) const;
  /// Class layout of the joint head: codes of B, LH, RH, then EOS.
  std::size_t joint_class(int token) const;
  int joint_token(std::size_t cls) const;
  std::vector<std::uint8_t> joint_mask(Part p, bool allow_eos) const;

  Vocabulary vocab_;
  GeneratorConfig config_;
  Tensor embedding_, enc_pos_, dec_pos_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Norm enc_norm_, dec_norm_;
  std::vector<Linear> heads_;  // one (joint) or three (per part); w unused when tied
  std::vector<std::vector<int>> head_tokens_;  // vocabulary id of each class
};

struct GeneratorTrainConfig {
  std::size_t steps = 1500;
  std::size_t batch = 8;
  Real lr = 1e-3;
  Real min_lr = 1e-5;
  std::size_t warmup_steps = 100;
  Real weight_decay = 0.0;
  Real clip_norm = 1.0;
  std::size_t log_interval = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratorTrainRecord {
  std::size_t step = 0;
  Real loss = 0.0;  // mean per-token cross-entropy of the batch
  Real lr = 0.0;
};

struct GeneratorTrainResult {
  std::vector<GeneratorTrainRecord> log;
  std::size_t truncated_prompts = 0;  // prompts longer than the encoder window
  std::size_t truncated_targets = 0;  // targets longer than k_max
};

/// Teacher-forced cross-entropy training (single-threaded, deterministic).
GeneratorTrainResult train_generator(const std::vector<TrainingPair>& pairs, GeneratorModel& model,
                                     const GeneratorTrainConfig& config);

}  // namespace soke::amg
