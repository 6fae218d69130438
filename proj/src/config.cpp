#include "soke/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "soke/error.hpp"
#include "soke/hash.hpp"
#include "soke/parallel.hpp"

namespace soke::app {

using nlohmann::json;

namespace {

// Rejects keys of `user` missing from `schema`, recursively, and type changes.
void check_keys(const json& schema, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    const json& ref = schema.at(key);
    if (ref.is_object()) {
      check_keys(ref, value, path);
    } else if (ref.is_number() != value.is_number() || ref.is_boolean() != value.is_boolean() ||
               ref.is_string() != value.is_string() || ref.is_array() != value.is_array()) {
      throw ConfigError("config key '" + path + "' has the wrong type");
    } else if (ref.is_number_integer() && !value.is_number_integer()) {
      throw ConfigError("config key '" + path + "' must be an integer");
    } else if (ref.is_number_unsigned() && value.is_number_integer() && value.get<long long>() < 0) {
      throw ConfigError("config key '" + path + "' must be non-negative");
    }
  }
}

void merge(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

json synth_json(const SynthConfig& s) {
  return {{"layout",
           {{"body_joints", s.layout.body_joints},
            {"hand_joints_per_hand", s.layout.hand_joints_per_hand},
            {"expression_dims", s.layout.expression_dims}}},
          {"languages", s.languages},
          {"lexicon_size", s.lexicon_size},
          {"sentences", s.sentences},
          {"test_sentences", s.test_sentences},
          {"min_words", s.min_words},
          {"max_words", s.max_words},
          {"motif_lengths", s.motif_lengths},
          {"fps", s.fps},
          {"body_amplitude", s.body_amplitude},
          {"hand_amplitude", s.hand_amplitude},
          {"expression_amplitude", s.expression_amplitude},
          {"noise", s.noise},
          {"blend_frames", s.blend_frames},
          {"inflection_prob", s.inflection_prob},
          {"instances_per_word", s.instances_per_word},
          {"instance_noise", s.instance_noise}};
}

SynthConfig synth_from(const json& j) {
  SynthConfig s;
  const json& l = j.at("layout");
  s.layout.body_joints = l.at("body_joints");
  s.layout.hand_joints_per_hand = l.at("hand_joints_per_hand");
  s.layout.expression_dims = l.at("expression_dims");
  s.languages = j.at("languages").get<std::vector<std::string>>();
  s.lexicon_size = j.at("lexicon_size");
  s.sentences = j.at("sentences");
  s.test_sentences = j.at("test_sentences");
  s.min_words = j.at("min_words");
  s.max_words = j.at("max_words");
  s.motif_lengths = j.at("motif_lengths").get<std::vector<std::size_t>>();
  s.fps = j.at("fps");
  s.body_amplitude = j.at("body_amplitude");
  s.hand_amplitude = j.at("hand_amplitude");
  s.expression_amplitude = j.at("expression_amplitude");
  s.noise = j.at("noise");
  s.blend_frames = j.at("blend_frames");
  s.inflection_prob = j.at("inflection_prob");
  s.instances_per_word = j.at("instances_per_word");
  s.instance_noise = j.at("instance_noise");
  return s;
}

}  // namespace

void RunConfig::validate() const {
  synth.validate();
  if (synth.layout.body_joints != 11) throw ConfigError("synth.layout.body_joints must be 11 for the toy skeleton");
  deto_model.validate();
  deto_train.validate();
  amg_model.validate();
  amg_train.validate();
  posefit.validate();
  camera.validate();
  if (metrics.split != "test" && metrics.split != "train") throw ConfigError("metrics.split must be test or train");
  if (run_dir.empty()) throw ConfigError("paths.run_dir is empty");
}

json RunConfig::to_json() const {
  json fit = posefit.to_json();
  fit["camera"] = {{"scale", camera.scale}, {"tx", camera.tx}, {"ty", camera.ty}};
  return {
      {"seed", seed},
      {"threads", threads},
      {"paths", {{"run_dir", run_dir.string()}}},
      {"synth", synth_json(synth)},
      {"deto",
       {{"model",
         {{"downsample", deto_model.downsample},
          {"width", deto_model.width},
          {"code_dim", deto_model.code_dim},
          {"codebook_sizes", deto_model.codebook_sizes},
          {"w_emb", deto_model.w_emb},
          {"w_com", deto_model.w_com}}},
        {"train",
         {{"steps", deto_train.steps},
          {"batch", deto_train.batch},
          {"crop_frames", deto_train.crop_frames},
          {"lr", deto_train.lr},
          {"min_lr", deto_train.min_lr},
          {"warmup_steps", deto_train.warmup_steps},
          {"clip_norm", deto_train.clip_norm},
          {"reseed_interval", deto_train.reseed_interval},
          {"reseed_until", deto_train.reseed_until},
          {"log_interval", deto_train.log_interval}}}}},
      {"amg",
       {{"model",
         {{"mode", amg::mode_name(amg_model.mode)},
          {"d_model", amg_model.d_model},
          {"heads", amg_model.heads},
          {"ffn", amg_model.ffn},
          {"encoder_layers", amg_model.encoder_layers},
          {"decoder_layers", amg_model.decoder_layers},
          {"max_prompt", amg_model.max_prompt},
          {"k_max", amg_model.k_max},
          {"lambda", amg_model.lambda},
          {"tied_output", amg_model.tied_output}}},
        {"train",
         {{"steps", amg_train.steps},
          {"batch", amg_train.batch},
          {"lr", amg_train.lr},
          {"min_lr", amg_train.min_lr},
          {"warmup_steps", amg_train.warmup_steps},
          {"weight_decay", amg_train.weight_decay},
          {"clip_norm", amg_train.clip_norm},
          {"log_interval", amg_train.log_interval}}}}},
      {"retrieval", {{"enabled", retrieval.retrieval}, {"separator", retrieval.separator}}},
      {"metrics", {{"pa_scope", metrics::pa_scope_name(metrics.pa_scope)}, {"split", metrics.split}}},
      {"posefit", fit},
  };
}

RunConfig RunConfig::from_json(const json& user) {
  const RunConfig defaults;
  json merged = defaults.to_json();
  check_keys(merged, user, "");
  merge(merged, user);
  RunConfig c;
  try {
    c.seed = merged.at("seed");
    c.threads = merged.at("threads");
    c.run_dir = merged.at("paths").at("run_dir").get<std::string>();
    c.synth = synth_from(merged.at("synth"));

    const json& dm = merged.at("deto").at("model");
    c.deto_model.downsample = dm.at("downsample");
    c.deto_model.width = dm.at("width");
    c.deto_model.code_dim = dm.at("code_dim");
    c.deto_model.codebook_sizes = dm.at("codebook_sizes").get<std::array<std::size_t, 3>>();
    c.deto_model.w_emb = dm.at("w_emb");
    c.deto_model.w_com = dm.at("w_com");
    const json& dt = merged.at("deto").at("train");
    c.deto_train.steps = dt.at("steps");
    c.deto_train.batch = dt.at("batch");
    c.deto_train.crop_frames = dt.at("crop_frames");
    c.deto_train.lr = dt.at("lr");
    c.deto_train.min_lr = dt.at("min_lr");
    c.deto_train.warmup_steps = dt.at("warmup_steps");
    c.deto_train.clip_norm = dt.at("clip_norm");
    c.deto_train.reseed_interval = dt.at("reseed_interval");
    c.deto_train.reseed_until = dt.at("reseed_until");
    c.deto_train.log_interval = dt.at("log_interval");

    const json& am = merged.at("amg").at("model");
    c.amg_model.mode = amg::mode_from_name(am.at("mode"));
    c.amg_model.d_model = am.at("d_model");
    c.amg_model.heads = am.at("heads");
    c.amg_model.ffn = am.at("ffn");
    c.amg_model.encoder_layers = am.at("encoder_layers");
    c.amg_model.decoder_layers = am.at("decoder_layers");
    c.amg_model.max_prompt = am.at("max_prompt");
    c.amg_model.k_max = am.at("k_max");
    c.amg_model.lambda = am.at("lambda");
    c.amg_model.tied_output = am.at("tied_output");
    const json& at = merged.at("amg").at("train");
    c.amg_train.steps = at.at("steps");
    c.amg_train.batch = at.at("batch");
    c.amg_train.lr = at.at("lr");
    c.amg_train.min_lr = at.at("min_lr");
    c.amg_train.warmup_steps = at.at("warmup_steps");
    c.amg_train.weight_decay = at.at("weight_decay");
    c.amg_train.clip_norm = at.at("clip_norm");
    c.amg_train.log_interval = at.at("log_interval");

    c.retrieval.retrieval = merged.at("retrieval").at("enabled");
    c.retrieval.separator = merged.at("retrieval").at("separator");
    c.metrics.pa_scope = metrics::pa_scope_from_name(merged.at("metrics").at("pa_scope"));
    c.metrics.split = merged.at("metrics").at("split");

    json fit = merged.at("posefit");
    const json cam = fit.at("camera");
    fit.erase("camera");
    c.posefit = posefit::FitConfig::from_json(fit);
    c.camera = {cam.at("scale"), cam.at("tx"), cam.at("ty")};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.deto_train.seed = c.deto_seed();
  c.amg_train.seed = c.amg_seed();
  c.validate();
  return c;
}

std::size_t RunConfig::workers() const {
  const std::size_t cap = worker_count();
  return threads == 0 ? cap : std::min(threads, cap);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override '" + key + "': '" + parts[i] + "' is not a section");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return RunConfig::from_json(j);
}

std::string json_hash(const json& j) { return sha256_hex(j.dump()); }

}  // namespace soke::app
