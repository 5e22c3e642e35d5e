#include "aqa/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "aqa/error.hpp"

namespace aqa {

void RunConfig::validate() const {
  encoder.validate();
  DecoderConfig d = decoder;
  d.dim = encoder.dim;
  d.validate();
  if (encoder.dim % 4 != 0) throw ConfigError("encoder.dim: must be a multiple of 4 for the head");
  if (loss.iou < 0.0 || loss.l1 < 0.0) throw ConfigError("loss.lambda_iou/lambda_l1: must be non-negative");
  sampler.validate();
  synth.validate();
  if (data.train_sequences < 1) throw ConfigError("data.train_sequences: must be at least 1");
  if (data.eval_sequences < 0) throw ConfigError("data.eval_sequences: must be non-negative");
  if (train.iterations < 0) throw ConfigError("train.iterations: must be non-negative");
  if (train.decay_fraction < 0.0 || train.decay_fraction > 1.0) {
    throw ConfigError("train.decay_fraction: must lie in [0,1]");
  }
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every: must be non-negative");
  train.optim.validate();
  tracker.validate();
  if (ablation.decoder_off && (ablation.ta_as_self_attention || ablation.stm_as_attention || ablation.stm_off)) {
    throw ConfigError("ablation.decoder_off: cannot be combined with other decoder or fusion ablations");
  }
  if (ablation.stm_off && ablation.stm_as_attention) {
    throw ConfigError("ablation.stm_off: cannot be combined with ablation.stm_as_attention");
  }
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.encoder = encoder;
  m.decoder = decoder;
  m.decoder.dim = encoder.dim;
  m.decoder.self_attention = ablation.ta_as_self_attention;
  m.decoder_enabled = !ablation.decoder_off;
  m.fusion = ablation.stm_as_attention ? FusionMode::Attention : ablation.stm_off ? FusionMode::None : FusionMode::Stm;
  return m;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v, const char* kind) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected " + kind + ", got '" + v + "'");
  return out;
}

template <class T>
T parse_value(const std::string& key, const std::string& v);

template <>
int parse_value<int>(const std::string& key, const std::string& v) {
  return parse_number<int>(key, v, "an integer");
}
template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& v) {
  return parse_number<std::uint64_t>(key, v, "a non-negative integer");
}
template <>
double parse_value<double>(const std::string& key, const std::string& v) {
  return parse_number<double>(key, v, "a number");
}
template <>
bool parse_value<bool>(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}
template <>
std::vector<Shape2D> parse_value<std::vector<Shape2D>>(const std::string& key, const std::string& v) {
  std::vector<Shape2D> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item == "rectangle") {
      out.push_back(Shape2D::Rectangle);
    } else if (item == "ellipse") {
      out.push_back(Shape2D::Ellipse);
    } else {
      throw ConfigError(key + ": unknown shape '" + item + "' (expected rectangle or ellipse)");
    }
  }
  return out;
}

std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  static_cast<void>(ec);
  return std::string(buf, ptr);
}
std::string format_value(const std::vector<Shape2D>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i] == Shape2D::Rectangle ? "rectangle" : "ellipse";
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class Ref>
Field make_field(const char* key, Ref ref) {
  using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
  return {key, [ref](const RunConfig& c) { return format_value(ref(const_cast<RunConfig&>(c))); },
          [ref, k = std::string(key)](RunConfig& c, const std::string& v) { ref(c) = parse_value<T>(k, v); }};
}

#define AQA_FIELD(key, member) make_field(key, [](RunConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      AQA_FIELD("seed", seed),
      AQA_FIELD("encoder.template_size", encoder.template_size),
      AQA_FIELD("encoder.search_size", encoder.search_size),
      AQA_FIELD("encoder.dim", encoder.dim),
      AQA_FIELD("encoder.mlp_blocks", encoder.mlp_blocks),
      AQA_FIELD("encoder.layers", encoder.layers),
      AQA_FIELD("encoder.heads", encoder.heads),
      AQA_FIELD("encoder.mlp_ratio", encoder.mlp_ratio),
      AQA_FIELD("decoder.layers", decoder.layers),
      AQA_FIELD("decoder.heads", decoder.heads),
      AQA_FIELD("decoder.ffn_dim", decoder.ffn_dim),
      AQA_FIELD("decoder.window_m", decoder.window),
      AQA_FIELD("loss.lambda_iou", loss.iou),
      AQA_FIELD("loss.lambda_l1", loss.l1),
      AQA_FIELD("sampler.sequences", sampler.sequences),
      AQA_FIELD("sampler.pairs", sampler.pairs),
      AQA_FIELD("sampler.gap_min", sampler.gap_min),
      AQA_FIELD("sampler.gap_max", sampler.gap_max),
      AQA_FIELD("sampler.template_factor", sampler.template_factor),
      AQA_FIELD("sampler.search_factor", sampler.search_factor),
      AQA_FIELD("sampler.center_jitter", sampler.center_jitter),
      AQA_FIELD("sampler.scale_jitter", sampler.scale_jitter),
      AQA_FIELD("sampler.flip_prob", sampler.flip_prob),
      AQA_FIELD("sampler.brightness", sampler.brightness),
      AQA_FIELD("synth.seed", synth.seed),
      AQA_FIELD("synth.canvas", synth.canvas),
      AQA_FIELD("synth.length", synth.length),
      AQA_FIELD("synth.shapes", synth.shapes),
      AQA_FIELD("synth.min_size", synth.min_size),
      AQA_FIELD("synth.max_size", synth.max_size),
      AQA_FIELD("synth.max_aspect", synth.max_aspect),
      AQA_FIELD("synth.speed_min", synth.speed_min),
      AQA_FIELD("synth.speed_max", synth.speed_max),
      AQA_FIELD("synth.acceleration", synth.acceleration),
      AQA_FIELD("synth.scale_drift", synth.scale_drift),
      AQA_FIELD("synth.occluder_prob", synth.occluder_prob),
      AQA_FIELD("synth.occluders", synth.occluders),
      AQA_FIELD("synth.texture_scale", synth.texture_scale),
      AQA_FIELD("synth.distractors", synth.distractors),
      AQA_FIELD("synth.noise", synth.noise),
      AQA_FIELD("data.train_sequences", data.train_sequences),
      AQA_FIELD("data.eval_sequences", data.eval_sequences),
      AQA_FIELD("train.iterations", train.iterations),
      AQA_FIELD("train.decay_fraction", train.decay_fraction),
      AQA_FIELD("train.lr", train.optim.lr),
      AQA_FIELD("train.lr_encoder", train.optim.lr_encoder),
      AQA_FIELD("train.weight_decay", train.optim.weight_decay),
      AQA_FIELD("train.beta1", train.optim.beta1),
      AQA_FIELD("train.beta2", train.optim.beta2),
      AQA_FIELD("train.eps", train.optim.eps),
      AQA_FIELD("train.grad_clip", train.optim.grad_clip),
      AQA_FIELD("train.checkpoint_every", train.checkpoint_every),
      AQA_FIELD("tracker.template_factor", tracker.template_factor),
      AQA_FIELD("tracker.search_factor", tracker.search_factor),
      AQA_FIELD("tracker.hamming", tracker.hamming),
      AQA_FIELD("ablation.decoder_off", ablation.decoder_off),
      AQA_FIELD("ablation.ta_as_self_attention", ablation.ta_as_self_attention),
      AQA_FIELD("ablation.stm_as_attention", ablation.stm_as_attention),
      AQA_FIELD("ablation.stm_off", ablation.stm_off),
  };
  return table;
}

#undef AQA_FIELD

const Field* find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void assign(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError(where + "unknown key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  }
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_config_text(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    assign(cfg, key, value, where);
  }
  cfg.decoder.dim = cfg.encoder.dim;
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments) {
  for (const std::string& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "': expected key=value");
    assign(cfg, trim(a.substr(0, eq)), trim(a.substr(eq + 1)), "override: ");
  }
  cfg.decoder.dim = cfg.encoder.dim;
  cfg.validate();
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

void write_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << serialize_config(cfg);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace aqa
