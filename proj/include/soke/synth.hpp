#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "soke/motion.hpp"

namespace soke {

struct SynthConfig {
  PartLayout layout{};
  std::vector<std::string> languages = {"ASL"};
  std::size_t lexicon_size = 20;
  std::size_t sentences = 50;
  std::size_t test_sentences = 20;
  std::size_t min_words = 2;
  std::size_t max_words = 4;
  std::vector<std::size_t> motif_lengths = {8, 12, 16};
  double fps = 25.0;
  double body_amplitude = 0.25;
  double hand_amplitude = 0.45;
  double expression_amplitude = 0.3;
  double noise = 0.005;
  /// Frames on each side of a word boundary that get smoothed together.
  std::size_t blend_frames = 2;
  double inflection_prob = 0.25;
  std::size_t instances_per_word = 3;
  double instance_noise = 0.01;

  void validate() const;  // throws ConfigError
};

/// One word's motion: a motif of fixed length covering all parameters.
struct WordSign {
  std::string lemma;
  MotionSequence motif;
};

/// Per language, the lemmas and their motifs (lemma order is generation order).
struct SignLexicon {
  std::map<std::string, std::vector<WordSign>> languages;

  const WordSign& find(const std::string& language, const std::string& lemma) const;
};

struct SignSample {
  std::string text;
  MotionSequence motion;
  /// Lemmas of `text` in order (bookkeeping for tests; not written to disk).
  std::vector<std::string> lemmas;
};

SignLexicon build_lexicon(const SynthConfig& config, std::uint64_t seed);

/// `count` sentences composed from the lexicon: concatenated motifs, boundary
/// smoothing, then Gaussian noise. Length = sum of motif lengths.
std::vector<SignSample> compose_sentences(const SignLexicon& lexicon, const SynthConfig& config, std::size_t count,
                                          std::uint64_t seed);

/// Training sentences: compose_sentences(build_lexicon(config, seed), config, config.sentences, seed).
std::vector<SignSample> synthesize_dataset(const SynthConfig& config, std::uint64_t seed);

/// Held-out sentences drawn from the same lexicon with an independent stream.
std::vector<SignSample> synthesize_test_split(const SynthConfig& config, std::uint64_t seed);

/// Isolated word instances (text = lemma) for dictionary construction.
std::vector<SignSample> synthesize_instances(const SynthConfig& config, std::uint64_t seed);

}  // namespace soke
