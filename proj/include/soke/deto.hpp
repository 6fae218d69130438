#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "soke/checkpoint.hpp"
#include "soke/grad.hpp"
#include "soke/motion.hpp"

namespace soke::deto {

using grad::Real;
using grad::Tensor;

struct TokenizerConfig {
  std::size_t downsample = 4;  // F, a power of two
  std::size_t width = 64;      // hidden channels of encoder and decoder
  std::size_t code_dim = 64;   // C
  std::array<std::size_t, 3> codebook_sizes{96, 192, 192};  // B, LH, RH
  Real w_emb = 1.0;
  Real w_com = 0.25;

  void validate() const;
};

struct TokenSeq {
  Part part = Part::kBody;
  std::vector<int> ids;

  bool operator==(const TokenSeq&) const = default;
};

struct Codebook {
  Part part = Part::kBody;
  Tensor codes;  // [N_Z, C]

  std::size_t size() const { return codes.rows(); }
  std::size_t dim() const { return codes.cols(); }
};

/// Nearest code (squared Euclidean distance, lowest index on ties) for each
/// of `rows` latent rows of width `dim`.
std::vector<int> quantize(std::span<const Real> latent, std::size_t rows, std::span<const Real> codes,
                          std::size_t num_codes, std::size_t dim);
TokenSeq quantize(const Tensor& latent, const Codebook& codebook);

struct VqLoss {
  Tensor total, rec, emb, com;
  std::vector<int> ids;
};

/// Quantization decisions captured at one parameter setting. Evaluating the
/// loss against a frozen quantization replaces every stop-gradient by a
/// constant, so the resulting function is smooth and its finite differences
/// equal the straight-through gradient.
struct FrozenQuantization {
  std::vector<int> ids;
  std::vector<Real> latent;  // encoder output [T_f, C]
  std::vector<Real> codes;   // selected code rows [T_f, C]
};

/// One VQ autoencoder: a strided 1-D conv encoder (factor F), a codebook, and
/// a mirrored nearest-upsampling conv decoder.
class PartTokenizer {
 public:
  PartTokenizer(Part part, std::size_t input_dim, const TokenizerConfig& config, std::uint64_t seed);

  Part part() const { return part_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t downsample() const { return config_.downsample; }
  const TokenizerConfig& config() const { return config_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }

  /// x [T, d_p] -> latent [ceil(T / F), C]. The input is padded to a multiple
  /// of F by repeating its last frame.
  Tensor encode_latent(const Tensor& x) const;
  /// latent [T_f, C] -> [frames, d_p] (F * T_f frames, trimmed or padded).
  Tensor decode_latent(const Tensor& latent, std::size_t frames) const;

  /// Throws InputError when the motion is shorter than F frames.
  TokenSeq encode(const PartMotion& motion) const;
  /// Throws RangeError for an id outside the codebook. Without `frames` the
  /// output has F * |tokens| frames.
  PartMotion decode(const TokenSeq& tokens, std::optional<std::size_t> frames = std::nullopt) const;

  /// Per-dimension standardization applied before the encoder and undone
  /// after the decoder. Identity until set (training sets it from the corpus).
  void set_normalization(std::vector<Real> mean, std::vector<Real> stddev);
  const Tensor& norm_mean() const { return norm_mean_; }
  const Tensor& norm_std() const { return norm_std_; }

  VqLoss vq_loss(const Tensor& x, const FrozenQuantization* frozen = nullptr) const;
  FrozenQuantization freeze(const Tensor& x) const;

  /// Trainable parameters plus the normalization statistics.
  std::vector<grad::NamedTensor> named_parameters() const;
  std::vector<Tensor> encoder_parameters() const;
  std::vector<Tensor> decoder_parameters() const;
  std::vector<Tensor> parameters() const;

 private:
  struct Conv {
    Tensor w, b;
    std::size_t kernel = 3, stride = 1, pad = 1;
  };
  Part part_;
  std::size_t input_dim_;
  TokenizerConfig config_;
  std::vector<Conv> encoder_;
  std::vector<Conv> decoder_;
  Codebook codebook_;
  Tensor norm_mean_, norm_std_;  // [d_p], not trained
};

Tensor part_tensor(const PartMotion& motion);
PartMotion tensor_to_part(const Tensor& t, Part part);

/// Three independent part tokenizers over one layout.
class DecoupledTokenizer {
 public:
  DecoupledTokenizer(const PartLayout& layout, const TokenizerConfig& config, std::uint64_t seed);

  const PartLayout& layout() const { return layout_; }
  const TokenizerConfig& config() const { return config_; }
  PartTokenizer& part(Part p) { return parts_[part_index(p)]; }
  const PartTokenizer& part(Part p) const { return parts_[part_index(p)]; }
  std::size_t codebook_size(Part p) const { return config_.codebook_sizes[part_index(p)]; }

  std::array<TokenSeq, 3> encode(const MotionSequence& seq) const;
  /// Decodes three equal-length token sequences into one motion.
  MotionSequence decode(const std::array<TokenSeq, 3>& tokens, std::optional<std::size_t> frames = std::nullopt,
                        double fps = 25.0, const std::string& language = "ASL") const;
  /// encode followed by decode to the original length.
  MotionSequence round_trip(const MotionSequence& seq) const;

  /// Writes deto.ckpt and the deto.json sidecar into `dir`.
  void save(const std::filesystem::path& dir) const;
  static DecoupledTokenizer load(const std::filesystem::path& dir);

 private:
  PartLayout layout_;
  TokenizerConfig config_;
  std::vector<PartTokenizer> parts_;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 4;          // sequences per step
  std::size_t crop_frames = 48;   // random F-aligned window per sequence; 0 = whole sequence
  Real lr = 3e-3;
  Real min_lr = 1e-4;
  std::size_t warmup_steps = 50;
  Real clip_norm = 1.0;
  std::size_t reseed_interval = 100;  // steps per usage epoch for dead-code reseeding
  Real reseed_until = 0.8;            // fraction of training after which codes are no longer reseeded
  std::size_t log_interval = 50;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // parts trained concurrently; 0 = worker_count()

  void validate() const;
};

struct TrainRecord {
  std::size_t step = 0;
  Part part = Part::kBody;
  Real total = 0, rec = 0, emb = 0, com = 0, lr = 0;
  std::size_t used_codes = 0;  // distinct codes hit since the last reseed check
  std::size_t reseeded = 0;
};

struct TrainResult {
  DecoupledTokenizer tokenizer;
  std::vector<TrainRecord> log;  // ordered by part, then step
};

/// Trains the three part tokenizers (independently, possibly concurrently).
/// Deterministic given the seeds. Throws NonFiniteError on divergence.
TrainResult train_tokenizer(const std::vector<MotionSequence>& corpus, const TokenizerConfig& config,
                            const TrainConfig& train);

/// Trains one part tokenizer in place and returns its log.
std::vector<TrainRecord> train_part(PartTokenizer& tok, const std::vector<PartMotion>& corpus,
                                    const TrainConfig& train);

}  // namespace soke::deto
