#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "soke/amg.hpp"
#include "soke/deto.hpp"
#include "soke/kinematics.hpp"
#include "soke/motion.hpp"

namespace soke::retrieval {

/// Lowercases and strips one English-style suffix: "-ing" (words longer than
/// 4), "-ed" (longer than 3), "-s" (longer than 2, not "-ss").
std::string lemmatize(const std::string& word);

using Lemmatizer = std::function<std::string(const std::string&)>;

struct DictionaryEntry {
  std::string word;
  std::array<deto::TokenSeq, 3> tokens;  // B, LH, RH codes of equal length
  double recon_error = 0.0;              // round-trip PA-MPJPE (mm)
};

/// language -> lemma -> best instance.
class SignDictionary {
 public:
  /// Keeps `entry` unless an entry for the word with a lower or equal error exists.
  void offer(const std::string& language, DictionaryEntry entry);
  const DictionaryEntry* find(const std::string& language, const std::string& word) const;
  std::size_t size() const;
  bool empty() const { return size() == 0; }
  const std::map<std::string, std::map<std::string, DictionaryEntry>>& entries() const { return entries_; }

  /// {lang: {word: {"B": [ids], "LH": [ids], "RH": [ids], "err": f32}}}
  nlohmann::json to_json() const;
  static SignDictionary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SignDictionary load(const std::filesystem::path& path);

  bool operator==(const SignDictionary& other) const { return to_json() == other.to_json(); }

 private:
  std::map<std::string, std::map<std::string, DictionaryEntry>> entries_;
};

struct WordInstance {
  std::string word;
  MotionSequence motion;  // language taken from the motion
};

/// Tokenizes every instance, scores its round trip with PA-MPJPE and keeps the
/// best instance per (language, lemma); ties keep the first. Instances too
/// short to tokenize are skipped and reported in `warnings`.
SignDictionary build_dictionary(const std::vector<WordInstance>& instances, const deto::DecoupledTokenizer& tokenizer,
                                const KinematicChain& chain, std::vector<std::string>* warnings = nullptr,
                                const Lemmatizer& lemmatizer = lemmatize);

struct PromptOptions {
  bool retrieval = true;
  bool separator = false;  // <SEP> before each retrieved word block
};

/// [lang] ++ text tokens ++ for each dictionary-matched word, in sentence
/// order, its B ++ LH ++ RH motion tokens.
std::vector<int> build_prompt(const std::string& text, const std::string& language, const SignDictionary& dict,
                              const amg::Vocabulary& vocab, const PromptOptions& options = {},
                              const Lemmatizer& lemmatizer = lemmatize);

}  // namespace soke::retrieval
