#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "soke/amg.hpp"
#include "soke/config.hpp"
#include "soke/deto.hpp"
#include "soke/error.hpp"
#include "soke/metrics.hpp"
#include "soke/retrieval.hpp"
#include "soke/synth.hpp"

namespace soke::app {

inline constexpr const char* kToolVersion = "0.1.0";

/// Error raised inside a pipeline stage; what() is prefixed with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class Stage { kSynth, kTrainDeto, kBuildDict, kTrainAmg, kGenerate, kEval };
const std::vector<Stage>& all_stages();
std::string stage_name(Stage s);

/// Files a stage writes, relative to the run directory.
std::vector<std::filesystem::path> stage_outputs(Stage s);

/// Hash of the config sections a stage (and everything upstream of it) reads.
std::string stage_config_hash(const RunConfig& config, Stage s);

/// Append-only JSON-lines log with a short human line on stderr.
class RunLog {
 public:
  explicit RunLog(std::filesystem::path path, bool echo = true);
  void write(const nlohmann::json& record);
  void info(const std::string& stage, const std::string& message);

 private:
  std::filesystem::path path_;
  bool echo_;
};

struct StageOutcome {
  Stage stage;
  bool rebuilt = false;
};

/// True if the stage marker matches the config, the upstream artifacts it was
/// built from are unchanged and every output exists.
bool stage_is_current(const RunConfig& config, Stage s);
/// Runs one stage unconditionally; inputs come from the run directory.
void run_stage(const RunConfig& config, Stage s, RunLog& log);
/// Runs every stage that is missing or stale (all of them with `force`),
/// writes the manifest and returns the report.
metrics::EvalReport run_pipeline(const RunConfig& config, bool force = false, std::vector<StageOutcome>* outcomes = nullptr);

// ---- building blocks shared by the stages, the tool and the tests -------------------

struct Dataset {
  std::vector<SignSample> train, test, instances;
};
Dataset synthesize_all(const RunConfig& config);
Dataset load_dataset(const std::filesystem::path& run_dir, const PartLayout& layout);

std::vector<MotionSequence> motions(const std::vector<SignSample>& samples);

/// Teacher-forcing pairs: retrieval-augmented prompt and tokenized target.
std::vector<amg::TrainingPair> make_training_pairs(const std::vector<SignSample>& samples,
                                                   const deto::DecoupledTokenizer& tokenizer,
                                                   const retrieval::SignDictionary& dict, const amg::Vocabulary& vocab,
                                                   const retrieval::PromptOptions& prompt);

/// Text to motion: prompt, greedy decoding, detokenization. An empty decode
/// becomes F frames of the zero pose.
metrics::Generated generate_motion(const amg::GeneratorModel& model, const deto::DecoupledTokenizer& tokenizer,
                                   const retrieval::SignDictionary& dict, const std::string& text,
                                   const std::string& language, const retrieval::PromptOptions& prompt,
                                   const amg::DecodeOptions& decode = {});

/// A directory holding deto/, dict.json and amg/ (every run directory is one).
struct ModelBundle {
  deto::DecoupledTokenizer tokenizer;
  retrieval::SignDictionary dictionary;
  amg::GeneratorModel model;

  static ModelBundle load(const std::filesystem::path& dir);
  metrics::Generated generate(const std::string& text, const std::string& language,
                              const retrieval::PromptOptions& prompt) const;
};

/// Scores generated motions against references.
metrics::EvalReport evaluate_generated(const std::vector<SignSample>& references,
                                       const std::vector<metrics::Generated>& generated,
                                       const deto::DecoupledTokenizer& tokenizer, const RunConfig& config);

/// Forward-pass and wall-clock comparison of two models on forced-length decodes.
struct BenchSample {
  std::size_t k = 0;
  std::size_t sequential_passes = 0, multihead_passes = 0;
  std::size_t sequential_emitted = 0, multihead_emitted = 0;
  double sequential_ms = 0.0, multihead_ms = 0.0;
};
struct BenchReport {
  std::vector<BenchSample> samples;
  bool law_holds = true;     // sequential passes == 3 x multi-head passes for every sample
  double wall_ratio = 0.0;   // total multi-head ms / total sequential ms
  nlohmann::json to_json() const;
};
BenchReport bench_decode(const amg::GeneratorModel& sequential, const amg::GeneratorModel& multihead,
                         const std::vector<std::vector<int>>& prompts, const std::vector<std::string>& languages,
                         const std::vector<std::size_t>& lengths, std::size_t repeats = 1);

/// Manifest: config hash, per-artifact SHA-256, tool version, timestamps.
nlohmann::json build_manifest(const RunConfig& config, const std::vector<StageOutcome>& outcomes);
/// Recomputes artifact hashes; returns the paths that no longer match.
std::vector<std::string> verify_manifest(const std::filesystem::path& run_dir);

}  // namespace soke::app
