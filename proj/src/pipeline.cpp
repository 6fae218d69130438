#include "soke/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "soke/error.hpp"
#include "soke/hash.hpp"
#include "soke/motion_io.hpp"
#include "soke/parallel.hpp"

namespace soke::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using clock_type = std::chrono::steady_clock;

double elapsed_ms(clock_type::time_point start) {
  return std::chrono::duration<double, std::milli>(clock_type::now() - start).count();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

fs::path marker_path(const fs::path& dir, Stage s) { return dir / "stages" / (stage_name(s) + ".json"); }

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw InputError("missing " + what + " (" + p.string() + "); run the producing stage first");
}

std::string split_file(const RunConfig& c) { return "generated/" + c.metrics.split + ".jsonl"; }

void write_generated(const fs::path& path, const std::vector<SignSample>& refs,
                     const std::vector<metrics::Generated>& gen) {
  std::string out;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    SignSample s;
    s.text = refs[i].text;
    s.motion = gen[i].motion;
    json j = json::parse(motion_to_json_line(s));
    j["step_count"] = gen[i].step_count;
    j["forward_passes"] = gen[i].forward_passes;
    j["wall_ms"] = gen[i].wall_ms;
    out += j.dump() + "\n";
  }
  write_file_atomic(path, out);
}

std::vector<metrics::Generated> read_generated(const fs::path& path, const PartLayout& layout) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<metrics::Generated> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    metrics::Generated g;
    g.motion = motion_from_json_line(line, layout).motion;
    g.step_count = j.at("step_count");
    g.forward_passes = j.at("forward_passes");
    g.wall_ms = j.at("wall_ms");
    out.push_back(std::move(g));
  }
  return out;
}

amg::Vocabulary make_vocabulary(const RunConfig& c, const std::vector<SignSample>& train) {
  std::vector<std::string> texts;
  for (const auto& s : train) texts.push_back(s.text);
  return amg::Vocabulary::from_corpus(c.deto_model.codebook_sizes, texts, c.synth.languages);
}

void run_synth(const RunConfig& c, RunLog& log) {
  const Dataset d = synthesize_all(c);
  fs::create_directories(c.run_dir / "data");
  write_motion_file(c.run_dir / "data/train.jsonl", d.train);
  write_motion_file(c.run_dir / "data/test.jsonl", d.test);
  write_motion_file(c.run_dir / "data/instances.jsonl", d.instances);
  log.info("synth", std::to_string(d.train.size()) + " train, " + std::to_string(d.test.size()) + " test, " +
                        std::to_string(d.instances.size()) + " word instances");
}

void run_train_deto(const RunConfig& c, RunLog& log) {
  require_file(c.run_dir / "data/train.jsonl", "training data");
  const auto train = read_motion_file(c.run_dir / "data/train.jsonl", c.synth.layout);
  deto::TrainConfig tc = c.deto_train;
  tc.threads = c.workers();
  const auto result = deto::train_tokenizer(motions(train), c.deto_model, tc);
  for (const auto& r : result.log) {
    log.write({{"stage", "train-deto"},
               {"step", r.step},
               {"part", part_name(r.part)},
               {"total", r.total},
               {"rec", r.rec},
               {"emb", r.emb},
               {"com", r.com},
               {"lr", r.lr},
               {"used_codes", r.used_codes},
               {"reseeded", r.reseeded}});
  }
  result.tokenizer.save(c.run_dir / "deto");
  log.info("train-deto", std::to_string(c.deto_train.steps) + " steps on " + std::to_string(train.size()) +
                             " sequences");
}

void run_build_dict(const RunConfig& c, RunLog& log) {
  require_file(c.run_dir / "data/instances.jsonl", "word instances");
  require_file(c.run_dir / "deto/deto.ckpt", "tokenizer checkpoint");
  const auto tokenizer = deto::DecoupledTokenizer::load(c.run_dir / "deto");
  std::vector<retrieval::WordInstance> instances;
  for (auto& s : read_motion_file(c.run_dir / "data/instances.jsonl", c.synth.layout))
    instances.push_back({s.text, std::move(s.motion)});
  std::vector<std::string> warnings;
  const auto dict =
      retrieval::build_dictionary(instances, tokenizer, make_default_chain(c.synth.layout), &warnings);
  for (const auto& w : warnings) log.write({{"stage", "build-dict"}, {"warning", w}});
  dict.save(c.run_dir / "dict.json");
  log.info("build-dict", std::to_string(dict.size()) + " entries");
}

void run_train_amg(const RunConfig& c, RunLog& log) {
  require_file(c.run_dir / "data/train.jsonl", "training data");
  require_file(c.run_dir / "deto/deto.ckpt", "tokenizer checkpoint");
  require_file(c.run_dir / "dict.json", "sign dictionary");
  const auto train = read_motion_file(c.run_dir / "data/train.jsonl", c.synth.layout);
  const auto tokenizer = deto::DecoupledTokenizer::load(c.run_dir / "deto");
  const auto dict = retrieval::SignDictionary::load(c.run_dir / "dict.json");
  const amg::Vocabulary vocab = make_vocabulary(c, train);
  const auto pairs = make_training_pairs(train, tokenizer, dict, vocab, c.retrieval);
  amg::GeneratorModel model(vocab, c.amg_model, c.amg_seed());
  const auto result = amg::train_generator(pairs, model, c.amg_train);
  for (const auto& r : result.log)
    log.write({{"stage", "train-amg"}, {"step", r.step}, {"loss", r.loss}, {"lr", r.lr}});
  log.write({{"stage", "train-amg"},
             {"truncated_prompts", result.truncated_prompts},
             {"truncated_targets", result.truncated_targets}});
  model.save(c.run_dir / "amg");
  log.info("train-amg", amg::mode_name(c.amg_model.mode) + ", " + std::to_string(c.amg_train.steps) + " steps, final loss " +
                            (result.log.empty() ? std::string("n/a") : std::to_string(result.log.back().loss)));
}

void run_generate(const RunConfig& c, RunLog& log) {
  for (const char* f : {"deto/deto.ckpt", "dict.json", "amg/generator.ckpt"}) require_file(c.run_dir / f, f);
  const fs::path refs_path = c.run_dir / ("data/" + c.metrics.split + ".jsonl");
  require_file(refs_path, "evaluation split");
  const auto refs = read_motion_file(refs_path, c.synth.layout);
  const auto tokenizer = deto::DecoupledTokenizer::load(c.run_dir / "deto");
  const auto dict = retrieval::SignDictionary::load(c.run_dir / "dict.json");
  const auto model = amg::GeneratorModel::load(c.run_dir / "amg");
  std::vector<metrics::Generated> gen(refs.size());
  parallel_for(
      refs.size(),
      [&](std::size_t i) {
        gen[i] = generate_motion(model, tokenizer, dict, refs[i].text, refs[i].motion.language(), c.retrieval);
      },
      c.workers());
  fs::create_directories(c.run_dir / "generated");
  write_generated(c.run_dir / split_file(c), refs, gen);
  log.info("generate", std::to_string(gen.size()) + " " + c.metrics.split + " samples");
}

void run_eval(const RunConfig& c, RunLog& log) {
  const fs::path refs_path = c.run_dir / ("data/" + c.metrics.split + ".jsonl");
  require_file(refs_path, "evaluation split");
  require_file(c.run_dir / split_file(c), "generated motions");
  require_file(c.run_dir / "deto/deto.ckpt", "tokenizer checkpoint");
  const auto refs = read_motion_file(refs_path, c.synth.layout);
  const auto gen = read_generated(c.run_dir / split_file(c), c.synth.layout);
  if (gen.size() != refs.size()) throw InputError("generated/reference sample counts differ");
  const auto tokenizer = deto::DecoupledTokenizer::load(c.run_dir / "deto");
  auto report = evaluate_generated(refs, gen, tokenizer, c);
  json prov = json::object();
  for (Stage s : all_stages()) prov["stages"][stage_name(s)] = stage_config_hash(c, s);
  for (const char* f : {"deto/deto.ckpt", "dict.json", "amg/generator.ckpt"}) {
    if (fs::exists(c.run_dir / f)) prov["inputs"][f] = sha256_file(c.run_dir / f);
  }
  prov["inputs"][split_file(c)] = sha256_file(c.run_dir / split_file(c));
  prov["tool_version"] = kToolVersion;
  report.provenance = prov;
  write_file_atomic(c.run_dir / "report.json", report.to_json().dump(2) + "\n");
  log.write({{"stage", "eval"}, {"aggregates", report.aggregates()}});
  log.info("eval", "mean DTW-PA-JPE " + std::to_string(report.aggregates()["dtw_pa_jpe_mean"].get<double>()) + " mm");
}

// Upstream artifacts a stage reads, relative to the run directory.
std::vector<std::string> stage_inputs(const RunConfig& c, Stage s) {
  const std::string refs = "data/" + c.metrics.split + ".jsonl";
  switch (s) {
    case Stage::kSynth: return {};
    case Stage::kTrainDeto: return {"data/train.jsonl"};
    case Stage::kBuildDict: return {"data/instances.jsonl", "deto/deto.ckpt", "deto/deto.json"};
    case Stage::kTrainAmg: return {"data/train.jsonl", "deto/deto.ckpt", "deto/deto.json", "dict.json"};
    case Stage::kGenerate:
      return {refs, "deto/deto.ckpt", "deto/deto.json", "dict.json", "amg/generator.ckpt", "amg/generator.json"};
    case Stage::kEval: return {refs, split_file(c), "deto/deto.ckpt", "deto/deto.json"};
  }
  return {};
}

json input_hashes(const RunConfig& c, Stage s) {
  json h = json::object();
  for (const auto& f : stage_inputs(c, s)) h[f] = fs::exists(c.run_dir / f) ? sha256_file(c.run_dir / f) : "";
  return h;
}

}  // namespace

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> kStages = {Stage::kSynth,    Stage::kTrainDeto, Stage::kBuildDict,
                                             Stage::kTrainAmg, Stage::kGenerate,  Stage::kEval};
  return kStages;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kSynth: return "synth";
    case Stage::kTrainDeto: return "train-deto";
    case Stage::kBuildDict: return "build-dict";
    case Stage::kTrainAmg: return "train-amg";
    case Stage::kGenerate: return "generate";
    case Stage::kEval: return "eval";
  }
  return "?";
}

std::vector<fs::path> stage_outputs(Stage s) {
  switch (s) {
    case Stage::kSynth: return {"data/train.jsonl", "data/test.jsonl", "data/instances.jsonl"};
    case Stage::kTrainDeto: return {"deto/deto.ckpt", "deto/deto.json"};
    case Stage::kBuildDict: return {"dict.json"};
    case Stage::kTrainAmg: return {"amg/generator.ckpt", "amg/generator.json"};
    case Stage::kGenerate: return {};  // depends on the split, see run_stage
    case Stage::kEval: return {"report.json"};
  }
  return {};
}

std::string stage_config_hash(const RunConfig& c, Stage s) {
  const json all = c.to_json();
  json used = {{"seed", all["seed"]}, {"synth", all["synth"]}};
  if (s != Stage::kSynth) used["deto"] = all["deto"];
  if (s == Stage::kTrainAmg || s == Stage::kGenerate || s == Stage::kEval) {
    used["amg"] = all["amg"];
    used["retrieval"] = all["retrieval"];
  }
  if (s == Stage::kGenerate || s == Stage::kEval) used["split"] = c.metrics.split;
  if (s == Stage::kEval) used["metrics"] = all["metrics"];
  used["stage"] = stage_name(s);
  return json_hash(used);
}

RunLog::RunLog(fs::path path, bool echo) : path_(std::move(path)), echo_(echo) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
}

void RunLog::write(const json& record) {
  std::ofstream out(path_, std::ios::app);
  out << record.dump() << '\n';
}

void RunLog::info(const std::string& stage, const std::string& message) {
  write({{"stage", stage}, {"info", message}});
  if (echo_) std::cerr << "[" << stage << "] " << message << '\n';
}

bool stage_is_current(const RunConfig& c, Stage s) {
  const fs::path marker = marker_path(c.run_dir, s);
  if (!fs::exists(marker)) return false;
  try {
    std::ifstream in(marker);
    const json j = json::parse(in);
    if (j.at("config_hash") != stage_config_hash(c, s)) return false;
    if (j.at("inputs") != input_hashes(c, s)) return false;
    for (const auto& f : j.at("outputs")) {
      if (!fs::exists(c.run_dir / f.get<std::string>())) return false;
    }
  } catch (const json::exception&) {
    return false;
  }
  return true;
}

void run_stage(const RunConfig& c, Stage s, RunLog& log) {
  const auto start = clock_type::now();
  fs::create_directories(c.run_dir);
  std::vector<fs::path> outputs = stage_outputs(s);
  if (s == Stage::kGenerate) outputs.push_back(split_file(c));
  fs::remove(marker_path(c.run_dir, s));
  try {
    switch (s) {
      case Stage::kSynth: run_synth(c, log); break;
      case Stage::kTrainDeto: run_train_deto(c, log); break;
      case Stage::kBuildDict: run_build_dict(c, log); break;
      case Stage::kTrainAmg: run_train_amg(c, log); break;
      case Stage::kGenerate: run_generate(c, log); break;
      case Stage::kEval: run_eval(c, log); break;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage_name(s), e.what());
  }
  json marker = {{"stage", stage_name(s)},
                 {"config_hash", stage_config_hash(c, s)},
                 {"inputs", input_hashes(c, s)},
                 {"outputs", json::array()}};
  for (const auto& o : outputs) marker["outputs"].push_back(o.generic_string());
  write_file_atomic(marker_path(c.run_dir, s), marker.dump(2) + "\n");
  log.write({{"stage", stage_name(s)}, {"event", "done"}, {"ms", elapsed_ms(start)}});
}

metrics::EvalReport run_pipeline(const RunConfig& c, bool force, std::vector<StageOutcome>* outcomes) {
  RunLog log(c.run_dir / "logs/run.jsonl");
  std::vector<StageOutcome> done;
  for (Stage s : all_stages()) {
    const bool rebuild = force || !stage_is_current(c, s);
    if (rebuild) {
      run_stage(c, s, log);
    } else {
      log.info(stage_name(s), "up to date, reused");
    }
    done.push_back({s, rebuild});
  }
  try {
    write_file_atomic(c.run_dir / "manifest.json", build_manifest(c, done).dump(2) + "\n");
  } catch (const std::exception& e) {
    throw StageError("manifest", e.what());
  }
  if (outcomes) *outcomes = done;
  metrics::EvalReport report;
  std::ifstream in(c.run_dir / "report.json");
  const json j = json::parse(in);
  // The caller usually only needs aggregates; rebuild the report object from disk.
  report.split = j.at("header").at("split");
  report.mode = j.at("header").at("mode");
  report.pa_scope = metrics::pa_scope_from_name(j.at("header").at("pa_scope"));
  report.config = j.at("config");
  report.provenance = j.at("provenance");
  for (const auto& r : j.at("samples")) {
    metrics::SampleRecord s;
    s.text = r.at("text");
    s.language = r.at("lang");
    s.gen_frames = r.at("gen_frames");
    s.ref_frames = r.at("ref_frames");
    s.errors.dtw_jpe_body = r.at("dtw_jpe_body");
    s.errors.dtw_jpe_hand = r.at("dtw_jpe_hand");
    s.errors.dtw_pa_jpe_body = r.at("dtw_pa_jpe_body");
    s.errors.dtw_pa_jpe_hand = r.at("dtw_pa_jpe_hand");
    if (r.contains("recon_pa_mpjpe")) s.recon_pa_mpjpe = r.at("recon_pa_mpjpe").get<double>();
    s.step_count = r.at("step_count");
    s.forward_passes = r.at("forward_passes");
    s.wall_ms = r.at("wall_ms");
    report.samples.push_back(std::move(s));
  }
  return report;
}

// ---- building blocks ---------------------------------------------------------------------

Dataset synthesize_all(const RunConfig& c) {
  return {synthesize_dataset(c.synth, c.seed), synthesize_test_split(c.synth, c.seed),
          synthesize_instances(c.synth, c.seed)};
}

Dataset load_dataset(const fs::path& run_dir, const PartLayout& layout) {
  return {read_motion_file(run_dir / "data/train.jsonl", layout), read_motion_file(run_dir / "data/test.jsonl", layout),
          read_motion_file(run_dir / "data/instances.jsonl", layout)};
}

std::vector<MotionSequence> motions(const std::vector<SignSample>& samples) {
  std::vector<MotionSequence> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.motion);
  return out;
}

std::vector<amg::TrainingPair> make_training_pairs(const std::vector<SignSample>& samples,
                                                   const deto::DecoupledTokenizer& tokenizer,
                                                   const retrieval::SignDictionary& dict, const amg::Vocabulary& vocab,
                                                   const retrieval::PromptOptions& prompt) {
  std::vector<amg::TrainingPair> pairs;
  for (const auto& s : samples) {
    const std::string& lang = s.motion.language();
    pairs.push_back({retrieval::build_prompt(s.text, lang, dict, vocab, prompt), lang,
                     amg::triples_from_codes(tokenizer.encode(s.motion), vocab)});
  }
  return pairs;
}

metrics::Generated generate_motion(const amg::GeneratorModel& model, const deto::DecoupledTokenizer& tokenizer,
                                   const retrieval::SignDictionary& dict, const std::string& text,
                                   const std::string& language, const retrieval::PromptOptions& prompt,
                                   const amg::DecodeOptions& decode) {
  const auto start = clock_type::now();
  const auto ids = retrieval::build_prompt(text, language, dict, model.vocabulary(), prompt);
  const auto r = model.generate(ids, language, decode);
  metrics::Generated g;
  g.wall_ms = elapsed_ms(start);
  g.step_count = r.step_count;
  g.forward_passes = r.forward_passes;
  const PartLayout& layout = tokenizer.layout();
  if (r.triples.empty()) {
    g.motion = MotionSequence::zeros(tokenizer.config().downsample, layout, 25.0, language);
  } else {
    g.motion = tokenizer.decode(amg::codes_from_triples(r.triples, model.vocabulary()), std::nullopt, 25.0, language);
  }
  return g;
}

ModelBundle ModelBundle::load(const fs::path& dir) {
  require_file(dir / "deto/deto.ckpt", "tokenizer checkpoint");
  require_file(dir / "amg/generator.ckpt", "generator checkpoint");
  retrieval::SignDictionary dict;
  if (fs::exists(dir / "dict.json")) dict = retrieval::SignDictionary::load(dir / "dict.json");
  return {deto::DecoupledTokenizer::load(dir / "deto"), std::move(dict), amg::GeneratorModel::load(dir / "amg")};
}

metrics::Generated ModelBundle::generate(const std::string& text, const std::string& language,
                                         const retrieval::PromptOptions& prompt) const {
  return generate_motion(model, tokenizer, dictionary, text, language, prompt);
}

metrics::EvalReport evaluate_generated(const std::vector<SignSample>& references,
                                       const std::vector<metrics::Generated>& generated,
                                       const deto::DecoupledTokenizer& tokenizer, const RunConfig& config) {
  if (references.size() != generated.size()) throw InputError("evaluate: sample count mismatch");
  std::vector<metrics::EvalSample> split;
  for (const auto& s : references) split.push_back({s.text, s.motion});
  const auto* base = split.data();
  const auto gen = [&](const metrics::EvalSample& s) { return generated[static_cast<std::size_t>(&s - base)]; };
  const auto recon = [&](const MotionSequence& m) { return tokenizer.round_trip(m); };
  auto report = metrics::evaluate_split(gen, split, make_default_chain(config.synth.layout), config.metrics.pa_scope,
                                        recon, config.workers());
  report.split = config.metrics.split;
  report.mode = amg::mode_name(config.amg_model.mode);
  report.config = config.to_json();
  report.config["paths"].erase("run_dir");  // reports of equal configs compare equal across directories
  report.config.erase("threads");
  return report;
}

json BenchReport::to_json() const {
  json rows = json::array();
  for (const auto& s : samples) {
    rows.push_back({{"k", s.k},
                    {"sequential_passes", s.sequential_passes},
                    {"multihead_passes", s.multihead_passes},
                    {"sequential_emitted", s.sequential_emitted},
                    {"multihead_emitted", s.multihead_emitted},
                    {"sequential_ms", s.sequential_ms},
                    {"multihead_ms", s.multihead_ms}});
  }
  return {{"samples", rows}, {"law_holds", law_holds}, {"wall_ratio", wall_ratio}};
}

BenchReport bench_decode(const amg::GeneratorModel& sequential, const amg::GeneratorModel& multihead,
                         const std::vector<std::vector<int>>& prompts, const std::vector<std::string>& languages,
                         const std::vector<std::size_t>& lengths, std::size_t repeats) {
  if (sequential.mode() != amg::DecodeMode::kSequential || multihead.mode() != amg::DecodeMode::kMultiHead)
    throw ModeError("bench-decode needs a sequential and a multi-head model");
  if (prompts.size() != languages.size() || prompts.size() != lengths.size())
    throw InputError("bench-decode: prompts, languages and lengths differ in count");
  BenchReport rep;
  double seq_total = 0.0, mh_total = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    amg::DecodeOptions o;
    o.k_max = lengths[i];
    o.stop_at_eos = false;
    BenchSample b;
    b.k = lengths[i];
    for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
      auto t0 = clock_type::now();
      const auto s = sequential.generate(prompts[i], languages[i], o);
      b.sequential_ms += elapsed_ms(t0);
      t0 = clock_type::now();
      const auto m = multihead.generate(prompts[i], languages[i], o);
      b.multihead_ms += elapsed_ms(t0);
      b.sequential_passes = s.forward_passes;
      b.multihead_passes = m.forward_passes;
      b.sequential_emitted = s.triples.size();
      b.multihead_emitted = m.triples.size();
    }
    if (b.sequential_emitted != b.multihead_emitted || b.sequential_passes != 3 * b.multihead_passes)
      rep.law_holds = false;
    seq_total += b.sequential_ms;
    mh_total += b.multihead_ms;
    rep.samples.push_back(b);
  }
  rep.wall_ratio = seq_total > 0.0 ? mh_total / seq_total : 0.0;
  return rep;
}

json build_manifest(const RunConfig& c, const std::vector<StageOutcome>& outcomes) {
  json m = {{"tool_version", kToolVersion},
            {"config_hash", json_hash(c.to_json())},
            {"config", c.to_json()},
            {"written_utc", utc_now()},
            {"stages", json::array()},
            {"artifacts", json::object()}};
  for (const auto& o : outcomes) {
    m["stages"].push_back(
        {{"stage", stage_name(o.stage)}, {"rebuilt", o.rebuilt}, {"config_hash", stage_config_hash(c, o.stage)}});
  }
  std::vector<fs::path> files;
  for (Stage s : all_stages())
    for (const auto& f : stage_outputs(s)) files.push_back(f);
  files.push_back(split_file(c));
  for (const auto& f : files) {
    if (fs::exists(c.run_dir / f)) m["artifacts"][f.generic_string()] = sha256_file(c.run_dir / f);
  }
  return m;
}

std::vector<std::string> verify_manifest(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json");
  if (!in) throw InputError("no manifest in " + run_dir.string());
  const json m = json::parse(in);
  std::vector<std::string> bad;
  for (const auto& [file, hash] : m.at("artifacts").items()) {
    if (!fs::exists(run_dir / file) || sha256_file(run_dir / file) != hash.get<std::string>()) bad.push_back(file);
  }
  return bad;
}

}  // namespace soke::app
