#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "soke/motion_io.hpp"
#include "soke/posefit.hpp"
#include "soke/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int status = -1;
  std::string output;  // stdout and stderr
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(SOKE_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

const std::string kTiny =
    " --set synth.lexicon_size=5 --set synth.sentences=8 --set synth.test_sentences=3"
    " --set deto.model.width=16 --set deto.model.code_dim=8 --set deto.train.steps=20"
    " --set amg.model.d_model=16 --set amg.model.ffn=32 --set amg.model.heads=2"
    " --set amg.model.encoder_layers=1 --set amg.model.decoder_layers=1 --set amg.train.steps=20";

fs::path scratch() {
  const fs::path d = fs::temp_directory_path() / "soke_cli_test";
  return d;
}

}  // namespace

TEST_CASE("usage errors exit nonzero") {
  CHECK(cli("").status != 0);
  CHECK(cli("frobnicate").status != 0);
  const Run bad = cli("config --set amg.model.dmodel=3");
  CHECK(bad.status != 0);
  CHECK(bad.output.find("[config]") != std::string::npos);
  CHECK(bad.output.find("amg.model.dmodel") != std::string::npos);
  const Run missing = cli("train-deto --data /nonexistent.jsonl --out /tmp/x");
  CHECK(missing.status != 0);
  CHECK(missing.output.find("[train-deto]") != std::string::npos);
}

TEST_CASE("config prints the resolved configuration") {
  const Run r = cli("config --set seed=9 --set amg.model.mode=parallel");
  REQUIRE(r.status == 0);
  const json j = json::parse(r.output);
  CHECK(j["seed"] == 9);
  CHECK(j["amg"]["model"]["mode"] == "parallel");
}

TEST_CASE("stage subcommands chain through files") {
  const fs::path d = scratch();
  fs::remove_all(d);
  fs::create_directories(d);
  const std::string D = d.string();
  REQUIRE(cli("synth --seed 3 --out " + D + "/train.jsonl" + kTiny).status == 0);
  REQUIRE(cli("synth --seed 3 --split test --out " + D + "/test.jsonl" + kTiny).status == 0);
  REQUIRE(cli("synth --seed 3 --split instances --out " + D + "/inst.jsonl" + kTiny).status == 0);
  const auto train = soke::read_motion_file(d / "train.jsonl", soke::PartLayout{});
  CHECK(train.size() == 8);

  REQUIRE(cli("train-deto --data " + D + "/train.jsonl --out " + D + "/deto" + kTiny).status == 0);
  CHECK(fs::exists(d / "deto/deto.ckpt"));
  REQUIRE(cli("build-dict --deto " + D + "/deto --instances " + D + "/inst.jsonl --out " + D + "/dict.json" + kTiny)
              .status == 0);
  const json dict = json::parse(std::ifstream(d / "dict.json"));
  CHECK(dict["ASL"].size() == 5);

  for (const char* mode : {"sequential", "multihead"}) {
    const std::string out = D + "/m_" + mode;
    REQUIRE(cli(std::string("train-amg --mode ") + mode + " --deto " + D + "/deto --data " + D +
                 "/train.jsonl --dict " + D + "/dict.json --out " + out + kTiny)
                .status == 0);
    const Run bench = cli("bench-decode --model " + out + " --data " + D + "/test.jsonl" + kTiny);
    REQUIRE(bench.status == 0);
    const json b = json::parse(bench.output.substr(bench.output.find('{')));
    CHECK(b["mode"] == mode);
    CHECK(b["mean_step_count"].get<double>() >= 0.0);
    CHECK(b.contains("mean_wall_ms"));
  }

  const std::string model = D + "/m_multihead";
  const std::string text = train.front().text;
  REQUIRE(cli("generate --model " + model + " --text \"" + text + "\" --lang ASL --out " + D + "/gen.jsonl" + kTiny)
              .status == 0);
  const auto gen = soke::read_motion_file(d / "gen.jsonl", soke::PartLayout{});
  REQUIRE(gen.size() == 1);
  CHECK(gen[0].text == text);
  CHECK(gen[0].motion.num_frames() > 0);

  const Run eval = cli("eval --model " + model + " --data " + D + "/test.jsonl --report " + D + "/report.json" + kTiny);
  REQUIRE(eval.status == 0);
  const json report = json::parse(std::ifstream(d / "report.json"));
  CHECK(report["samples"].size() == 3);
  CHECK(report["header"]["mode"] == "multihead");
  fs::remove_all(d);
}

TEST_CASE("posefit subcommand") {
  const fs::path d = scratch() / "posefit";
  fs::remove_all(d);
  fs::create_directories(d);
  soke::SynthConfig sc;
  sc.lexicon_size = 2;
  const auto lex = soke::build_lexicon(sc, 5);
  const auto& motif = lex.languages.at("ASL").front().motif;
  soke::SignSample s;
  s.text = "x";
  s.motion = motif;
  soke::write_motion_file(d / "init.jsonl", {s});
  const auto chain = soke::make_default_chain(sc.layout);
  const auto obs = soke::posefit::synthesize_observations(motif, {}, {}, chain);
  soke::posefit::write_observations(d / "obs.jsonl", obs);
  const std::string D = d.string();
  const Run r = cli("posefit --init " + D + "/init.jsonl --obs " + D + "/obs.jsonl --out " + D + "/out.jsonl --log " + D +
                     "/log.jsonl --set posefit.max_iterations=5");
  REQUIRE(r.status == 0);
  CHECK(r.output.find("[posefit]") != std::string::npos);
  CHECK(soke::read_motion_file(d / "out.jsonl", sc.layout).size() == 1);
  std::ifstream log(d / "log.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    CHECK(json::parse(line).contains("total"));
    ++n;
  }
  CHECK(n >= 1);
  const Run bad = cli("posefit --init " + D + "/init.jsonl --obs " + D + "/missing.jsonl --out " + D + "/o.jsonl");
  CHECK(bad.status != 0);
  CHECK(bad.output.find("[posefit]") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("pipeline subcommand resumes and verifies") {
  const fs::path d = scratch() / "run";
  fs::remove_all(d);
  const Run first = cli("pipeline --run-dir " + d.string() + kTiny);
  REQUIRE(first.status == 0);
  const Run second = cli("pipeline --run-dir " + d.string() + kTiny);
  REQUIRE(second.status == 0);
  CHECK(second.output.find("[eval] up to date") != std::string::npos);
  const auto agg = [](const std::string& out) { return json::parse(out.substr(out.find('{'))).dump(); };
  CHECK(agg(first.output) == agg(second.output));
  CHECK(cli("pipeline --verify --run-dir " + d.string() + kTiny).status == 0);
  std::ofstream(d / "report.json", std::ios::app) << "\n";
  CHECK(cli("pipeline --verify --run-dir " + d.string() + kTiny).status != 0);
  fs::remove_all(scratch());
}
