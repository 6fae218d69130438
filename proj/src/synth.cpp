#include "soke/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "soke/error.hpp"
#include "soke/rng.hpp"

namespace soke {

namespace {

std::uint64_t language_stream(const std::string& lang) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : lang) h = (h ^ ch) * 1099511628211ull;
  return h;
}

// Neutral signing pose: upper arms lowered, forearms raised towards the camera.
void base_pose(const PartLayout& layout, std::vector<double>& pose) {
  pose.assign(layout.dim(), 0.0);
  pose[15 + 2] = -1.1;  // l_shoulder about z
  pose[18 + 1] = -1.2;  // l_elbow about y
  pose[24 + 2] = 1.1;
  pose[27 + 1] = 1.2;
  const Slice lh = layout.part_slice(Part::kLeftHand);
  const Slice rh = layout.part_slice(Part::kRightHand);
  for (std::size_t j = 0; j < layout.hand_joints_per_hand; ++j) {
    pose[lh.offset + 3 * j + 2] = -0.2;
    pose[rh.offset + 3 * j + 2] = 0.2;
  }
}

std::string make_lemma(std::mt19937_64& rng) {
  static constexpr std::string_view kConsonants = "bdfgklmnprtvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::uniform_int_distribution<std::size_t> syllables(2, 3);
  std::uniform_int_distribution<std::size_t> cons(0, kConsonants.size() - 1);
  std::uniform_int_distribution<std::size_t> vow(0, kVowels.size() - 1);
  std::string word;
  const std::size_t n = syllables(rng);
  for (std::size_t i = 0; i < n; ++i) {
    word += kConsonants[cons(rng)];
    word += kVowels[vow(rng)];
  }
  return word;
}

MotionSequence make_motif(const SynthConfig& cfg, const std::string& lang, std::size_t length,
                          std::mt19937_64& rng) {
  const PartLayout& layout = cfg.layout;
  std::vector<double> base;
  base_pose(layout, base);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> freq(0.3, 1.2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  const Slice expr = layout.expression_slice();
  const std::size_t d = layout.dim();
  std::vector<double> amplitude(d), offset(d), f(d), phi(d);
  for (std::size_t c = 0; c < d; ++c) {
    double a = cfg.hand_amplitude;
    if (c < layout.body_rotation_dims()) {
      // Torso joints move far less than the arms.
      a = c < 15 ? 0.2 * cfg.body_amplitude : cfg.body_amplitude;
    } else if (c >= expr.offset && c < expr.offset + expr.width) {
      a = cfg.expression_amplitude;
    }
    offset[c] = a * unit(rng);
    amplitude[c] = 0.5 * a * unit(rng);
    f[c] = freq(rng);
    phi[c] = phase(rng);
  }
  std::vector<float> frames(length * d);
  for (std::size_t t = 0; t < length; ++t) {
    const double u = static_cast<double>(t) / static_cast<double>(length);
    for (std::size_t c = 0; c < d; ++c) {
      const double v = base[c] + offset[c] + amplitude[c] * std::sin(2.0 * std::numbers::pi * f[c] * u + phi[c]);
      frames[t * d + c] = static_cast<float>(v);
    }
  }
  return MotionSequence(std::move(frames), length, layout, cfg.fps, lang);
}

void add_noise(std::vector<float>& data, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> noise(0.0, sigma);
  for (float& v : data) v = static_cast<float>(v + noise(rng));
}

}  // namespace

void SynthConfig::validate() const {
  if (languages.empty()) throw ConfigError("synth: at least one language is required");
  if (lexicon_size == 0) throw ConfigError("synth: empty lexicon");
  if (min_words == 0 || max_words < min_words) throw ConfigError("synth: invalid words-per-sentence range");
  if (motif_lengths.empty()) throw ConfigError("synth: motif_lengths is empty");
  for (std::size_t len : motif_lengths) {
    if (len == 0) throw ConfigError("synth: motif length must be positive");
  }
  if (noise < 0 || instance_noise < 0) throw ConfigError("synth: noise must be non-negative");
  if (inflection_prob < 0 || inflection_prob > 1) throw ConfigError("synth: inflection_prob outside [0, 1]");
}

const WordSign& SignLexicon::find(const std::string& language, const std::string& lemma) const {
  auto it = languages.find(language);
  if (it == languages.end()) throw InputError("no lexicon for language " + language);
  for (const auto& w : it->second) {
    if (w.lemma == lemma) return w;
  }
  throw InputError("lemma '" + lemma + "' not in the " + language + " lexicon");
}

SignLexicon build_lexicon(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  SignLexicon lex;
  for (const auto& lang : config.languages) {
    auto rng = make_rng(seed, language_stream(lang));
    std::uniform_int_distribution<std::size_t> pick_len(0, config.motif_lengths.size() - 1);
    std::set<std::string> used;
    auto& words = lex.languages[lang];
    while (words.size() < config.lexicon_size) {
      std::string lemma = make_lemma(rng);
      if (!used.insert(lemma).second) continue;
      const std::size_t len = config.motif_lengths[pick_len(rng)];
      words.push_back({lemma, make_motif(config, lang, len, rng)});
    }
  }
  return lex;
}

std::vector<SignSample> compose_sentences(const SignLexicon& lexicon, const SynthConfig& config, std::size_t count,
                                          std::uint64_t seed) {
  config.validate();
  static const char* kSuffixes[] = {"s", "ing", "ed"};
  auto rng = make_rng(seed, 0x5e47e4ceull);
  std::uniform_int_distribution<std::size_t> n_words(config.min_words, config.max_words);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> suffix(0, 2);
  const std::size_t d = config.layout.dim();

  std::vector<SignSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string& lang = config.languages[i % config.languages.size()];
    const auto& words = lexicon.languages.at(lang);
    if (words.empty()) throw ConfigError("synth: empty lexicon for " + lang);
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);

    SignSample sample;
    std::vector<float> raw;
    std::vector<std::size_t> boundaries;
    const std::size_t k = n_words(rng);
    for (std::size_t w = 0; w < k; ++w) {
      const WordSign& sign = words[pick(rng)];
      std::string surface = sign.lemma;
      if (coin(rng) < config.inflection_prob) surface += kSuffixes[suffix(rng)];
      if (!sample.text.empty()) sample.text += ' ';
      sample.text += surface;
      sample.lemmas.push_back(sign.lemma);
      if (!raw.empty()) boundaries.push_back(raw.size() / d);
      raw.insert(raw.end(), sign.motif.data().begin(), sign.motif.data().end());
    }
    const std::size_t frames = raw.size() / d;
    std::vector<float> smooth = raw;
    const std::size_t h = config.blend_frames;
    if (h > 0) {
      for (std::size_t b : boundaries) {
        const std::size_t lo = b >= h ? b - h : 0;
        const std::size_t hi = std::min(frames, b + h);
        for (std::size_t t = lo; t < hi; ++t) {
          const std::size_t w0 = t >= h ? t - h : 0;
          const std::size_t w1 = std::min(frames - 1, t + h);
          for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t s = w0; s <= w1; ++s) acc += raw[s * d + c];
            smooth[t * d + c] = static_cast<float>(acc / static_cast<double>(w1 - w0 + 1));
          }
        }
      }
    }
    add_noise(smooth, config.noise, rng);
    sample.motion = MotionSequence(std::move(smooth), frames, config.layout, config.fps, lang);
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<SignSample> synthesize_dataset(const SynthConfig& config, std::uint64_t seed) {
  return compose_sentences(build_lexicon(config, seed), config, config.sentences, seed);
}

std::vector<SignSample> synthesize_test_split(const SynthConfig& config, std::uint64_t seed) {
  return compose_sentences(build_lexicon(config, seed), config, config.test_sentences, seed ^ 0x9e3779b97f4a7c15ull);
}

std::vector<SignSample> synthesize_instances(const SynthConfig& config, std::uint64_t seed) {
  const SignLexicon lex = build_lexicon(config, seed);
  auto rng = make_rng(seed, 0x1d1c7ull);
  std::vector<SignSample> out;
  for (const auto& [lang, words] : lex.languages) {
    for (const auto& w : words) {
      for (std::size_t i = 0; i < config.instances_per_word; ++i) {
        std::vector<float> data = w.motif.data();
        add_noise(data, config.instance_noise * static_cast<double>(i + 1), rng);
        SignSample s;
        s.text = w.lemma;
        s.lemmas = {w.lemma};
        s.motion = MotionSequence(std::move(data), w.motif.num_frames(), config.layout, config.fps, lang);
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

}  // namespace soke
