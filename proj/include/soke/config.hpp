#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "soke/amg.hpp"
#include "soke/deto.hpp"
#include "soke/metrics.hpp"
#include "soke/posefit.hpp"
#include "soke/retrieval.hpp"
#include "soke/synth.hpp"

namespace soke::app {

struct MetricsConfig {
  metrics::PaScope pa_scope = metrics::PaScope::kFrame;
  std::string split = "test";  // "test" or "train"
};

/// Everything one run depends on. The JSON form is the schema: a config file
/// may only contain keys that appear in RunConfig{}.to_json().
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0 = worker_count(); SOKE_THREADS caps it
  std::filesystem::path run_dir = "runs/default";

  SynthConfig synth;
  deto::TokenizerConfig deto_model;
  deto::TrainConfig deto_train;
  amg::GeneratorConfig amg_model;
  amg::GeneratorTrainConfig amg_train;
  retrieval::PromptOptions retrieval;
  MetricsConfig metrics;
  posefit::FitConfig posefit;
  posefit::Camera camera;

  void validate() const;
  nlohmann::json to_json() const;
  /// Strict: unknown keys (at any depth) and type mismatches raise ConfigError.
  static RunConfig from_json(const nlohmann::json& j);

  /// Stage seeds, all derived from `seed`.
  std::uint64_t deto_seed() const { return seed * 1000003ull + 11; }
  std::uint64_t amg_seed() const { return seed * 1000003ull + 23; }
  /// Worker count after applying SOKE_THREADS.
  std::size_t workers() const;
};

/// Parses "a.b.c=value"; value is read as JSON when it parses, else as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads a config file (or the defaults when `path` is empty) and applies overrides.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// SHA-256 of the canonical JSON dump of `j`.
std::string json_hash(const nlohmann::json& j);

}  // namespace soke::app
