// soke: command-line front end for the text-to-sign pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "soke/error.hpp"
#include "soke/hash.hpp"
#include "soke/motion_io.hpp"
#include "soke/pipeline.hpp"
#include "soke/posefit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace soke;
using namespace soke::app;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_sets(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run configuration (JSON); defaults when omitted");
  cmd->add_option("--set", c.sets, "override one key, e.g. --set amg.train.steps=200 (repeatable)");
}

std::vector<std::string> languages_of(const std::vector<SignSample>& samples) {
  std::set<std::string> langs;
  for (const auto& s : samples) langs.insert(s.motion.language());
  return {langs.begin(), langs.end()};
}

void copy_tree(const fs::path& from, const fs::path& to) {
  if (fs::exists(to) && fs::equivalent(from, to)) return;
  fs::create_directories(to);
  fs::copy(from, to, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
}

int run_synth(const RunConfig& c, const std::string& out, const std::string& split) {
  std::vector<SignSample> samples;
  if (split == "train") {
    samples = synthesize_dataset(c.synth, c.seed);
  } else if (split == "test") {
    samples = synthesize_test_split(c.synth, c.seed);
  } else if (split == "instances") {
    samples = synthesize_instances(c.synth, c.seed);
  } else {
    throw ConfigError("unknown split '" + split + "' (train, test or instances)");
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_motion_file(out, samples);
  std::cerr << "[synth] wrote " << samples.size() << " sequences to " << out << '\n';
  return 0;
}

int run_train_deto(const RunConfig& c, const std::string& data, const std::string& out) {
  const auto train = read_motion_file(data, c.synth.layout);
  deto::TrainConfig tc = c.deto_train;
  tc.threads = c.workers();
  const auto result = deto::train_tokenizer(motions(train), c.deto_model, tc);
  result.tokenizer.save(out);
  RunLog log(fs::path(out) / "train.jsonl");
  for (const auto& r : result.log) {
    log.write({{"step", r.step}, {"part", part_name(r.part)}, {"total", r.total}, {"rec", r.rec},
               {"emb", r.emb}, {"com", r.com}, {"used_codes", r.used_codes}});
  }
  log.info("train-deto", std::to_string(tc.steps) + " steps on " + std::to_string(train.size()) + " sequences");
  return 0;
}

int run_build_dict(const RunConfig& c, const std::string& deto_dir, const std::string& instances_path,
                   const std::string& out) {
  const auto tokenizer = deto::DecoupledTokenizer::load(deto_dir);
  std::vector<retrieval::WordInstance> instances;
  for (auto& s : read_motion_file(instances_path, c.synth.layout)) instances.push_back({s.text, std::move(s.motion)});
  std::vector<std::string> warnings;
  const auto dict = retrieval::build_dictionary(instances, tokenizer, make_default_chain(c.synth.layout), &warnings);
  for (const auto& w : warnings) std::cerr << "[build-dict] warning: " << w << '\n';
  dict.save(out);
  std::cerr << "[build-dict] " << dict.size() << " entries\n";
  return 0;
}

int run_train_amg(RunConfig c, const std::string& mode, const std::string& deto_dir, const std::string& data,
                  const std::string& dict_path, const std::string& out) {
  if (!mode.empty()) c.amg_model.mode = amg::mode_from_name(mode);
  const auto train = read_motion_file(data, c.synth.layout);
  const auto tokenizer = deto::DecoupledTokenizer::load(deto_dir);
  retrieval::SignDictionary dict;
  if (!dict_path.empty()) dict = retrieval::SignDictionary::load(dict_path);
  std::vector<std::string> texts;
  for (const auto& s : train) texts.push_back(s.text);
  const auto vocab = amg::Vocabulary::from_corpus(c.deto_model.codebook_sizes, texts, languages_of(train));
  const auto pairs = make_training_pairs(train, tokenizer, dict, vocab, c.retrieval);
  amg::GeneratorModel model(vocab, c.amg_model, c.amg_seed());
  const auto result = amg::train_generator(pairs, model, c.amg_train);
  // The output directory is a self-contained model bundle.
  model.save(fs::path(out) / "amg");
  copy_tree(deto_dir, fs::path(out) / "deto");
  dict.save(fs::path(out) / "dict.json");
  RunLog log(fs::path(out) / "train.jsonl");
  for (const auto& r : result.log) log.write({{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}});
  log.info("train-amg", amg::mode_name(c.amg_model.mode) + ", final loss " +
                            (result.log.empty() ? std::string("n/a") : std::to_string(result.log.back().loss)));
  return 0;
}

int run_generate(const RunConfig& c, const std::string& model_dir, const std::string& text, const std::string& lang,
                 const std::string& data, const std::string& out) {
  const auto bundle = ModelBundle::load(model_dir);
  std::vector<SignSample> inputs;
  if (!data.empty()) {
    inputs = read_motion_file(data, c.synth.layout);
  } else {
    if (text.empty() || lang.empty()) throw InputError("generate needs --text and --lang, or --data");
    SignSample s;
    s.text = text;
    s.motion = MotionSequence::zeros(1, c.synth.layout, c.synth.fps, lang);
    inputs.push_back(std::move(s));
  }
  std::vector<SignSample> outputs;
  for (const auto& in : inputs) {
    SignSample s;
    s.text = in.text;
    s.motion = bundle.generate(in.text, in.motion.language(), c.retrieval).motion;
    outputs.push_back(std::move(s));
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_motion_file(out, outputs);
  std::cerr << "[generate] wrote " << outputs.size() << " motions to " << out << '\n';
  return 0;
}

int run_eval(const RunConfig& c, const std::string& model_dir, const std::string& data, const std::string& report_path) {
  const auto bundle = ModelBundle::load(model_dir);
  const auto refs = read_motion_file(data, c.synth.layout);
  std::vector<metrics::Generated> gen(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i)
    gen[i] = bundle.generate(refs[i].text, refs[i].motion.language(), c.retrieval);
  RunConfig rc = c;
  rc.amg_model.mode = bundle.model.mode();
  auto report = evaluate_generated(refs, gen, bundle.tokenizer, rc);
  report.provenance = {{"tool_version", kToolVersion},
                       {"data", sha256_file(data)},
                       {"generator", sha256_file(fs::path(model_dir) / "amg/generator.ckpt")},
                       {"tokenizer", sha256_file(fs::path(model_dir) / "deto/deto.ckpt")}};
  write_file_atomic(report_path, report.to_json().dump(2) + "\n");
  std::cout << report.aggregates().dump(2) << '\n';
  return 0;
}

int run_bench(const RunConfig& c, const std::string& model_dir, const std::string& data) {
  const auto bundle = ModelBundle::load(model_dir);
  const auto refs = read_motion_file(data, c.synth.layout);
  if (refs.empty()) throw InputError("bench-decode: empty data file");
  double steps = 0.0, ms = 0.0, passes = 0.0;
  for (const auto& r : refs) {
    const auto g = bundle.generate(r.text, r.motion.language(), c.retrieval);
    steps += static_cast<double>(g.step_count);
    passes += static_cast<double>(g.forward_passes);
    ms += g.wall_ms;
  }
  const double n = static_cast<double>(refs.size());
  const json out = {{"mode", amg::mode_name(bundle.model.mode())},
                    {"mean_step_count", steps / n},
                    {"mean_forward_passes", passes / n},
                    {"mean_wall_ms", ms / n},
                    {"samples", refs.size()}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_posefit(const RunConfig& c, const std::string& init_path, const std::string& obs_path, const std::string& out,
                const std::string& log_path) {
  const auto init = read_motion_file(init_path, c.synth.layout);
  if (init.empty()) throw InputError("posefit: " + init_path + " holds no sequence");
  const auto obs = posefit::read_observations(obs_path);
  const auto chain = make_default_chain(c.synth.layout);
  const auto result = posefit::fit_sequence(init.front().motion, obs, c.camera, c.posefit, chain);
  SignSample s;
  s.text = init.front().text;
  s.motion = result.motion;
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_motion_file(out, {s});
  if (!log_path.empty()) {
    std::string lines;
    for (const auto& r : result.log) lines += posefit::fit_log_to_json(r).dump() + "\n";
    write_file_atomic(log_path, lines);
  }
  const auto& last = result.log.back();
  std::cerr << "[posefit] " << result.log.size() - 1 << " steps, loss " << result.log.front().total << " -> "
            << last.total << " (" << result.stop_reason << ")\n";
  return 0;
}

int run_pipeline_cmd(RunConfig c, const std::string& run_dir, bool force, const std::string& only, bool verify) {
  if (!run_dir.empty()) c.run_dir = run_dir;
  if (verify) {
    const auto bad = verify_manifest(c.run_dir);
    for (const auto& f : bad) std::cerr << "[pipeline] hash mismatch: " << f << '\n';
    if (!bad.empty()) return 1;
    std::cerr << "[pipeline] manifest verified\n";
    return 0;
  }
  if (!only.empty()) {
    for (Stage s : all_stages()) {
      if (stage_name(s) == only) {
        RunLog log(c.run_dir / "logs/run.jsonl");
        run_stage(c, s, log);
        return 0;
      }
    }
    throw ConfigError("unknown stage '" + only + "'");
  }
  const auto report = run_pipeline(c, force);
  std::cout << report.aggregates().dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"soke: text-to-sign pipeline on synthetic data"};
  app.require_subcommand(1);
  std::string current = "soke";

  Common common;
  std::string out, data, deto_dir, instances, dict, mode, model, text, lang, report, split = "train";
  std::string init, obs, log_path, run_dir, only;
  std::uint64_t seed = 0;
  bool force = false, verify = false;

  auto* synth = app.add_subcommand("synth", "write a synthetic corpus");
  add_sets(synth, common);
  synth->add_option("--seed", seed, "corpus seed (overrides the config)");
  synth->add_option("--out", out, "motion file")->required();
  synth->add_option("--split", split, "train, test or instances");

  auto* train_deto = app.add_subcommand("train-deto", "train the decoupled tokenizer");
  add_sets(train_deto, common);
  train_deto->add_option("--data", data, "training motion file")->required();
  train_deto->add_option("--out", out, "checkpoint directory")->required();

  auto* build_dict = app.add_subcommand("build-dict", "tokenize isolated word instances into a dictionary");
  add_sets(build_dict, common);
  build_dict->add_option("--deto", deto_dir, "tokenizer directory")->required();
  build_dict->add_option("--instances", instances, "word instance motion file")->required();
  build_dict->add_option("--out", out, "dictionary JSON")->required();

  auto* train_amg = app.add_subcommand("train-amg", "train the generator");
  add_sets(train_amg, common);
  train_amg->add_option("--mode", mode, "sequential, parallel or multihead");
  train_amg->add_option("--deto", deto_dir, "tokenizer directory")->required();
  train_amg->add_option("--data", data, "training motion file")->required();
  train_amg->add_option("--dict", dict, "dictionary JSON (retrieval prompts stay text-only without it)");
  train_amg->add_option("--out", out, "model directory")->required();

  auto* generate = app.add_subcommand("generate", "text to motion");
  add_sets(generate, common);
  generate->add_option("--model", model, "model directory")->required();
  generate->add_option("--text", text, "input sentence");
  generate->add_option("--lang", lang, "language tag");
  generate->add_option("--data", data, "motion file whose texts are generated in batch");
  generate->add_option("--out", out, "output motion file")->required();

  auto* eval = app.add_subcommand("eval", "generate and score a split");
  add_sets(eval, common);
  eval->add_option("--model", model, "model directory")->required();
  eval->add_option("--data", data, "reference motion file")->required();
  eval->add_option("--report", report, "report JSON")->required();

  auto* bench = app.add_subcommand("bench-decode", "decoding steps and latency");
  add_sets(bench, common);
  bench->add_option("--model", model, "model directory")->required();
  bench->add_option("--data", data, "motion file with the prompts")->required();

  auto* fit = app.add_subcommand("posefit", "refine upper-body rotations against 2D keypoints");
  add_sets(fit, common);
  fit->add_option("--init", init, "initial motion file (first sequence is fitted)")->required();
  fit->add_option("--obs", obs, "observations (JSON lines)")->required();
  fit->add_option("--out", out, "refined motion file")->required();
  fit->add_option("--log", log_path, "per-iteration loss log (JSON lines)");

  auto* pipeline = app.add_subcommand("pipeline", "run every stage, reusing current artifacts");
  add_sets(pipeline, common);
  pipeline->add_option("--run-dir", run_dir, "run directory (overrides paths.run_dir)");
  pipeline->add_flag("--force", force, "rebuild every stage");
  pipeline->add_option("--stage", only, "run a single stage unconditionally");
  pipeline->add_flag("--verify", verify, "check the manifest hashes and exit");

  auto* show = app.add_subcommand("config", "print the resolved configuration");
  add_sets(show, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    current = cmd->get_name();
    RunConfig c = load_run_config(common.config, common.sets);
    if (cmd == synth && synth->count("--seed")) c.seed = seed;
    c.validate();

    if (cmd == synth) return run_synth(c, out, split);
    if (cmd == train_deto) return run_train_deto(c, data, out);
    if (cmd == build_dict) return run_build_dict(c, deto_dir, instances, out);
    if (cmd == train_amg) return run_train_amg(c, mode, deto_dir, data, dict, out);
    if (cmd == generate) return run_generate(c, model, text, lang, data, out);
    if (cmd == eval) return run_eval(c, model, data, report);
    if (cmd == bench) return run_bench(c, model, data);
    if (cmd == fit) return run_posefit(c, init, obs, out, log_path);
    if (cmd == pipeline) return run_pipeline_cmd(c, run_dir, force, only, verify);
    if (cmd == show) {
      std::cout << c.to_json().dump(2) << '\n';
      return 0;
    }
  } catch (const StageError& e) {
    std::cerr << "soke: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "soke: [" << current << "] " << e.what() << '\n';
    return 1;
  }
  return 1;
}
