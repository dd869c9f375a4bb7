#include "ccrl/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "ccrl/errors.hpp"

namespace ccrl {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (negatives == NegativeSet::batch_and_queue && batch_size < 2)
    throw ConfigError("batch_size must be >= 2 when in-batch negatives are used");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (warmup_epochs >= epochs) throw ConfigError("warmup_epochs must be smaller than epochs");
  if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  if (!(momentum >= 0 && momentum <= 1)) throw ConfigError("momentum must lie in [0, 1]");
  if (queue_capacity < 1) throw ConfigError("queue_capacity must be positive");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
}

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::paper() {
  RunConfig c;
  c.profile = "paper";
  c.train.batch_size = 1024;
  c.train.epochs = 500;
  c.train.warmup_epochs = 10;
  c.train.queue_capacity = 65536;
  c.train.momentum = 0.999;
  c.backbone = BackboneConfig::resnet18();
  return c;
}

void RunConfig::validate() const {
  train.validate();
  augment.validate();
  backbone.validate();
  HeadConfig h = head;
  h.prediction_head = train.prediction_head;
  h.validate(backbone);
  if (eval.restarts < 1) throw ConfigError("eval restarts must be positive");
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

namespace {

struct Option {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size() || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string stages_str(const std::vector<StageSpec>& stages) {
  std::string s;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(stages[i].channels) + "x" + std::to_string(stages[i].blocks);
  }
  return s;
}

std::vector<StageSpec> parse_stages(const std::string& key, const std::string& v) {
  std::vector<StageSpec> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError(key + ": stages look like 16x1,32x1,64x1");
    out.push_back({parse_u64(key, item.substr(0, x)), parse_u64(key, item.substr(x + 1))});
  }
  if (out.empty()) throw ConfigError(key + ": needs at least one stage");
  return out;
}

#define CCRL_DOUBLE(name, field) \
  Option{name, [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); }, [](const RunConfig& c) { return fmt_double(c.field); }}
#define CCRL_SIZE(name, field) \
  Option{name, [](RunConfig& c, const std::string& v) { c.field = parse_u64(name, v); }, [](const RunConfig& c) { return std::to_string(c.field); }}
#define CCRL_BOOL(name, field)                                                         \
  Option{name, [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }, \
         [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }}

const std::vector<Option>& registry() {
  static const std::vector<Option> opts = {
      CCRL_SIZE("batch_size", train.batch_size),
      CCRL_SIZE("epochs", train.epochs),
      CCRL_SIZE("warmup_epochs", train.warmup_epochs),
      CCRL_DOUBLE("base_lr", train.base_lr),
      CCRL_DOUBLE("weight_decay", train.weight_decay),
      CCRL_BOOL("decoupled_weight_decay", train.decoupled_weight_decay),
      CCRL_DOUBLE("temperature", train.temperature),
      CCRL_DOUBLE("momentum", train.momentum),
      CCRL_SIZE("queue_capacity", train.queue_capacity),
      Option{"negatives",
             [](RunConfig& c, const std::string& v) {
               if (v == "batch_and_queue")
                 c.train.negatives = NegativeSet::batch_and_queue;
               else if (v == "queue_only")
                 c.train.negatives = NegativeSet::queue_only;
               else
                 throw ConfigError("negatives: expected batch_and_queue or queue_only, got '" + v + "'");
             },
             [](const RunConfig& c) {
               return std::string(c.train.negatives == NegativeSet::queue_only ? "queue_only" : "batch_and_queue");
             }},
      CCRL_SIZE("checkpoint_every", train.checkpoint_every),
      CCRL_SIZE("seed", train.seed),
      CCRL_BOOL("local_global", train.local_global),
      CCRL_BOOL("ensembling", train.ensembling),
      CCRL_BOOL("prediction_head", train.prediction_head),
      CCRL_DOUBLE("augment.brightness", augment.brightness),
      CCRL_DOUBLE("augment.contrast", augment.contrast),
      CCRL_DOUBLE("augment.saturation", augment.saturation),
      CCRL_DOUBLE("augment.hue", augment.hue),
      CCRL_DOUBLE("augment.p_jitter", augment.p_jitter),
      CCRL_DOUBLE("augment.p_grayscale", augment.p_grayscale),
      CCRL_DOUBLE("augment.blur_sigma_min", augment.blur_sigma_min),
      CCRL_DOUBLE("augment.blur_sigma_max", augment.blur_sigma_max),
      CCRL_DOUBLE("augment.p_blur", augment.p_blur),
      CCRL_DOUBLE("augment.p_hflip", augment.p_hflip),
      CCRL_DOUBLE("augment.p_vflip", augment.p_vflip),
      CCRL_DOUBLE("augment.rotation_min", augment.rotation_min),
      CCRL_DOUBLE("augment.rotation_max", augment.rotation_max),
      CCRL_DOUBLE("augment.p_rotate", augment.p_rotate),
      CCRL_DOUBLE("augment.crop_scale_min", augment.crop_scale_min),
      CCRL_DOUBLE("augment.crop_scale_max", augment.crop_scale_max),
      CCRL_DOUBLE("augment.crop_ratio_min", augment.crop_ratio_min),
      CCRL_DOUBLE("augment.crop_ratio_max", augment.crop_ratio_max),
      CCRL_DOUBLE("augment.p_crop", augment.p_crop),
      CCRL_SIZE("backbone.stem_channels", backbone.stem_channels),
      CCRL_SIZE("backbone.stem_stride", backbone.stem_stride),
      Option{"backbone.stages",
             [](RunConfig& c, const std::string& v) { c.backbone.stages = parse_stages("backbone.stages", v); },
             [](const RunConfig& c) { return stages_str(c.backbone.stages); }},
      CCRL_SIZE("backbone.feature_dim", backbone.feature_dim),
      CCRL_SIZE("backbone.groups", backbone.groups),
      CCRL_SIZE("head.projector_in", head.projector_in),
      CCRL_SIZE("head.projector_hidden", head.projector_hidden),
      CCRL_SIZE("head.projector_out", head.projector_out),
      CCRL_SIZE("head.predictor_hidden", head.predictor_hidden),
      CCRL_BOOL("eval.projected", eval.projected),
      CCRL_SIZE("eval.k", eval.k),
      CCRL_SIZE("eval.restarts", eval.restarts),
  };
  return opts;
}

#undef CCRL_DOUBLE
#undef CCRL_SIZE
#undef CCRL_BOOL

}  // namespace

void set_option(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "profile") {
    if (value == "desk")
      cfg = RunConfig::desk();
    else if (value == "paper")
      cfg = RunConfig::paper();
    else
      throw ConfigError("profile: expected desk or paper, got '" + value + "'");
    return;
  }
  for (const auto& o : registry())
    if (o.key == key) {
      o.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_settings(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string profile;
  for (const auto& [k, v] : kv)
    if (k == "profile") profile = v;
  if (!profile.empty()) set_option(cfg, "profile", profile);
  for (const auto& [k, v] : kv)
    if (k != "profile") set_option(cfg, k, v);
}

std::string to_key_values(const RunConfig& cfg) {
  std::string out = "profile = " + cfg.profile + "\n";
  for (const auto& o : registry()) out += o.key + " = " + o.get(cfg) + "\n";
  return out;
}

std::vector<std::string> option_keys() {
  std::vector<std::string> keys{"profile"};
  for (const auto& o : registry()) keys.push_back(o.key);
  return keys;
}

}  // namespace ccrl
