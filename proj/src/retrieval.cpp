#include "soke/retrieval.hpp"

#include <cmath>
#include <fstream>

#include "soke/error.hpp"
#include "soke/metrics.hpp"

namespace soke::retrieval {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string lemmatize(const std::string& word) {
  std::string w;
  for (unsigned char c : word) w += static_cast<char>(std::tolower(c));
  if (w.size() > 4 && ends_with(w, "ing")) return w.substr(0, w.size() - 3);
  if (w.size() > 3 && ends_with(w, "ed")) return w.substr(0, w.size() - 2);
  if (w.size() > 2 && ends_with(w, "s") && !ends_with(w, "ss")) return w.substr(0, w.size() - 1);
  return w;
}

void SignDictionary::offer(const std::string& language, DictionaryEntry entry) {
  auto& words = entries_[language];
  auto it = words.find(entry.word);
  if (it == words.end()) {
    words.emplace(entry.word, std::move(entry));
  } else if (entry.recon_error < it->second.recon_error) {
    it->second = std::move(entry);
  }
}

const DictionaryEntry* SignDictionary::find(const std::string& language, const std::string& word) const {
  auto lang = entries_.find(language);
  if (lang == entries_.end()) return nullptr;
  auto it = lang->second.find(word);
  return it == lang->second.end() ? nullptr : &it->second;
}

std::size_t SignDictionary::size() const {
  std::size_t n = 0;
  for (const auto& [lang, words] : entries_) n += words.size();
  return n;
}

nlohmann::json SignDictionary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [lang, words] : entries_) {
    j[lang] = nlohmann::json::object();
    for (const auto& [word, e] : words) {
      nlohmann::json w;
      for (Part p : kParts) w[part_name(p)] = e.tokens[part_index(p)].ids;
      w["err"] = static_cast<float>(e.recon_error);
      j[lang][word] = std::move(w);
    }
  }
  return j;
}

SignDictionary SignDictionary::from_json(const nlohmann::json& j) {
  SignDictionary d;
  try {
    for (const auto& [lang, words] : j.items()) {
      for (const auto& [word, w] : words.items()) {
        DictionaryEntry e;
        e.word = word;
        for (Part p : kParts) {
          e.tokens[part_index(p)].part = p;
          e.tokens[part_index(p)].ids = w.at(part_name(p)).get<std::vector<int>>();
        }
        e.recon_error = w.at("err").get<float>();
        const std::size_t k = e.tokens[0].ids.size();
        if (k == 0 || e.tokens[1].ids.size() != k || e.tokens[2].ids.size() != k)
          throw InputError("dictionary entry '" + word + "' has empty or unequal token sequences");
        if (!(e.recon_error >= 0.0)) throw InputError("dictionary entry '" + word + "' has a negative error");
        d.entries_[lang].emplace(word, std::move(e));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed dictionary: ") + e.what());
  }
  return d;
}

void SignDictionary::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << to_json().dump() << "\n";
  if (!out) throw InputError("cannot write " + path.string());
}

SignDictionary SignDictionary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read dictionary " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("malformed dictionary " + path.string() + ": " + e.what());
  }
}

SignDictionary build_dictionary(const std::vector<WordInstance>& instances, const deto::DecoupledTokenizer& tokenizer,
                                const KinematicChain& chain, std::vector<std::string>* warnings,
                                const Lemmatizer& lemmatizer) {
  SignDictionary dict;
  const std::size_t f = tokenizer.config().downsample;
  for (const auto& inst : instances) {
    if (inst.motion.num_frames() < f) {
      if (warnings)
        warnings->push_back("skipped instance of '" + inst.word + "': " + std::to_string(inst.motion.num_frames()) +
                            " frames is shorter than the downsample window " + std::to_string(f));
      continue;
    }
    DictionaryEntry e;
    e.word = lemmatizer(inst.word);
    e.tokens = tokenizer.encode(inst.motion);
    const MotionSequence rt = tokenizer.decode(e.tokens, inst.motion.num_frames(), inst.motion.fps(),
                                               inst.motion.language());
    e.recon_error = metrics::pa_mpjpe(rt, inst.motion, chain);
    dict.offer(inst.motion.language(), std::move(e));
  }
  return dict;
}

std::vector<int> build_prompt(const std::string& text, const std::string& language, const SignDictionary& dict,
                              const amg::Vocabulary& vocab, const PromptOptions& options,
                              const Lemmatizer& lemmatizer) {
  std::vector<int> prompt = {vocab.language_token(language)};
  const auto words = vocab.text_tokens(text);
  prompt.insert(prompt.end(), words.begin(), words.end());
  if (!options.retrieval) return prompt;
  for (const auto& w : amg::split_words(text)) {
    const DictionaryEntry* e = dict.find(language, lemmatizer(w));
    if (!e) continue;
    if (options.separator) prompt.push_back(amg::Vocabulary::kSep);
    for (Part p : kParts)
      for (int code : e->tokens[part_index(p)].ids) prompt.push_back(vocab.motion_token(p, code));
  }
  return prompt;
}

}  // namespace soke::retrieval
