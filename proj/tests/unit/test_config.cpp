#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "soke/config.hpp"
#include "soke/error.hpp"
#include "soke/hash.hpp"

using namespace soke;
using namespace soke::app;
using nlohmann::json;

TEST_CASE("defaults survive a JSON round trip") {
  const json d = RunConfig{}.to_json();
  const RunConfig c = RunConfig::from_json(d);
  CHECK(c.to_json() == d);
  CHECK(RunConfig::from_json(json::object()).to_json() == d);
}

TEST_CASE("partial configs merge over the defaults") {
  const RunConfig c = RunConfig::from_json({{"seed", 7}, {"amg", {{"model", {{"mode", "parallel"}}}}}});
  CHECK(c.seed == 7);
  CHECK(c.amg_model.mode == amg::DecodeMode::kParallel);
  CHECK(c.amg_model.d_model == RunConfig{}.amg_model.d_model);
  CHECK(c.deto_train.seed == 7 * 1000003ull + 11);
  CHECK(c.amg_train.seed == 7 * 1000003ull + 23);
  CHECK(c.deto_seed() != c.amg_seed());
}

TEST_CASE("unknown keys and wrong types are rejected") {
  CHECK_THROWS_AS(RunConfig::from_json({{"sede", 1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"amg", {{"model", {{"dmodel", 8}}}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"posefit", {{"camera", {{"focal", 1.0}}}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"seed", "one"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"seed", 1.5}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"amg", {{"train", {{"steps", -3}}}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"retrieval", {{"enabled", 1}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"amg", 3}}), ConfigError);
  // An integer literal is accepted where a real is expected.
  CHECK(RunConfig::from_json({{"amg", {{"train", {{"lr", 1}}}}}}).amg_train.lr == 1.0);
}

TEST_CASE("semantic validation") {
  CHECK_THROWS_AS(RunConfig::from_json({{"metrics", {{"split", "dev"}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"metrics", {{"pa_scope", "global"}}}}), Error);
  CHECK_THROWS_AS(RunConfig::from_json({{"amg", {{"model", {{"mode", "beam"}}}}}}), Error);
  CHECK_THROWS_AS(RunConfig::from_json({{"synth", {{"languages", json::array()}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"posefit", {{"camera", {{"scale", 0.0}}}}}}), ConfigError);
}

TEST_CASE("key=value overrides") {
  json j = json::object();
  apply_override(j, "amg.train.steps=25");
  apply_override(j, "amg.model.mode=sequential");  // not JSON, kept as a string
  apply_override(j, "retrieval.enabled=false");
  apply_override(j, "synth.languages=[\"ASL\",\"DGS\"]");
  CHECK(j["amg"]["train"]["steps"] == 25);
  CHECK(j["amg"]["model"]["mode"] == "sequential");
  CHECK(j["retrieval"]["enabled"] == false);
  const RunConfig c = RunConfig::from_json(j);
  CHECK(c.amg_train.steps == 25);
  CHECK(c.synth.languages.size() == 2);
  CHECK_FALSE(c.retrieval.retrieval);

  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "=3"), ConfigError);
  apply_override(j, "seed=3");
  CHECK_THROWS_AS(apply_override(j, "seed.x=3"), ConfigError);  // seed is not a section
  apply_override(j, "sede.x=3");
  CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
}

TEST_CASE("config files and overrides") {
  const auto dir = std::filesystem::temp_directory_path() / "soke_test_config";
  std::filesystem::create_directories(dir);
  const auto path = dir / "run.json";
  std::ofstream(path) << R"({"seed": 4, "amg": {"train": {"steps": 10}}})";
  const RunConfig c = load_run_config(path, {"amg.train.steps=12", "paths.run_dir=/tmp/x"});
  CHECK(c.seed == 4);
  CHECK(c.amg_train.steps == 12);
  CHECK(c.run_dir == "/tmp/x");
  CHECK(load_run_config("", {}).to_json() == RunConfig{}.to_json());
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(path, {"amg.train.stpes=1"}), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("hashes") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const json a = RunConfig{}.to_json();
  json b = a;
  CHECK(json_hash(a) == json_hash(b));
  b["seed"] = 2;
  CHECK(json_hash(a) != json_hash(b));

  const auto path = std::filesystem::temp_directory_path() / "soke_hash_test.txt";
  write_file_atomic(path, "abc");
  CHECK(sha256_file(path) == sha256_hex("abc"));
  std::filesystem::remove(path);
}

TEST_CASE("worker cap") {
  RunConfig c;
  c.threads = 1000;
  CHECK(c.workers() >= 1);
  CHECK(c.workers() <= 1000);
  ::setenv("SOKE_THREADS", "1", 1);
  CHECK(c.workers() == 1);
  c.threads = 0;
  CHECK(c.workers() == 1);
  ::unsetenv("SOKE_THREADS");
}
