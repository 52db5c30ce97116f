#include "swimvg/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "swimvg/budget.hpp"
#include "swimvg/error.hpp"

namespace swimvg {

bool ModelConfig::has_cia_at(int vision_layer) const {
  return cia_enabled && std::binary_search(cia_layers.begin(), cia_layers.end(), vision_layer);
}

bool ModelConfig::has_dosa_at(int text_layer) const {
  return dosa_enabled && std::binary_search(dosa_layers.begin(), dosa_layers.end(), text_layer);
}

namespace {

struct KeySpec {
  std::string_view name;
  std::string_view section;
  std::function<void(ModelConfig&, const Json&)> read;
  std::function<Json(const ModelConfig&)> write;
};

[[noreturn]] void invalid(std::string_view key, const std::string& reason) {
  throw Error(ErrorKind::InvalidValue, std::string(key), reason);
}

int as_int(std::string_view key, const Json& v) {
  if (!v.is_number_integer()) {
    invalid(key, "expected an integer, got " + v.dump());
  }
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    invalid(key, "integer out of range");
  }
  return static_cast<int>(x);
}

std::uint64_t as_seed(std::string_view key, const Json& v) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    invalid(key, "expected a non-negative integer, got " + v.dump());
  }
  return v.get<std::uint64_t>();
}

double as_real(std::string_view key, const Json& v) {
  if (!v.is_number()) {
    invalid(key, "expected a number, got " + v.dump());
  }
  return v.get<double>();
}

bool as_bool(std::string_view key, const Json& v) {
  if (!v.is_boolean()) {
    invalid(key, "expected true/false, got " + v.dump());
  }
  return v.get<bool>();
}

std::vector<int> as_int_list(std::string_view key, const Json& v) {
  if (!v.is_array()) {
    invalid(key, "expected an array of integers, got " + v.dump());
  }
  std::set<int> unique;
  for (const auto& e : v) {
    unique.insert(as_int(key, e));
  }
  return {unique.begin(), unique.end()};
}

#define SWIMVG_INT_KEY(section, field)                                                 \
  KeySpec {                                                                            \
    #field, section, [](ModelConfig& c, const Json& v) { c.field = as_int(#field, v); }, \
        [](const ModelConfig& c) { return Json(c.field); }                             \
  }
#define SWIMVG_REAL_KEY(section, field)                                                 \
  KeySpec {                                                                             \
    #field, section, [](ModelConfig& c, const Json& v) { c.field = as_real(#field, v); }, \
        [](const ModelConfig& c) { return Json(c.field); }                              \
  }
#define SWIMVG_BOOL_KEY(section, field)                                                 \
  KeySpec {                                                                             \
    #field, section, [](ModelConfig& c, const Json& v) { c.field = as_bool(#field, v); }, \
        [](const ModelConfig& c) { return Json(c.field); }                              \
  }
#define SWIMVG_SEED_KEY(section, field)                                                 \
  KeySpec {                                                                             \
    #field, section, [](ModelConfig& c, const Json& v) { c.field = as_seed(#field, v); }, \
        [](const ModelConfig& c) { return Json(c.field); }                              \
  }
#define SWIMVG_LIST_KEY(section, field)                                                     \
  KeySpec {                                                                                 \
    #field, section, [](ModelConfig& c, const Json& v) { c.field = as_int_list(#field, v); }, \
        [](const ModelConfig& c) { return Json(c.field); }                                  \
  }

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      SWIMVG_INT_KEY("text", text_depth),
      SWIMVG_INT_KEY("text", text_dim),
      SWIMVG_INT_KEY("text", text_heads),
      SWIMVG_INT_KEY("text", max_text_len),
      SWIMVG_INT_KEY("text", vocab_size),
      SWIMVG_INT_KEY("vision", vision_depth),
      SWIMVG_INT_KEY("vision", vision_dim),
      SWIMVG_INT_KEY("vision", vision_heads),
      SWIMVG_INT_KEY("vision", image_size),
      SWIMVG_INT_KEY("vision", patch_size),
      SWIMVG_INT_KEY("vision", in_channels),
      SWIMVG_REAL_KEY("vision", backbone_init_std),
      KeySpec{"vision_pos_init", "vision",
              [](ModelConfig& c, const Json& v) {
                if (v == "normal") {
                  c.vision_pos_init = PosInit::Normal;
                } else if (v == "sincos") {
                  c.vision_pos_init = PosInit::Sincos;
                } else {
                  invalid("vision_pos_init", "expected \"normal\" or \"sincos\", got " + v.dump());
                }
              },
              [](const ModelConfig& c) { return Json(c.vision_pos_init == PosInit::Sincos ? "sincos" : "normal"); }},
      SWIMVG_REAL_KEY("vision", vision_pos_scale),
      SWIMVG_INT_KEY("fusion", bottleneck_dim),
      SWIMVG_INT_KEY("fusion", cia_heads),
      SWIMVG_REAL_KEY("fusion", adapter_scale_vt),
      SWIMVG_REAL_KEY("fusion", adapter_scale_t),
      SWIMVG_LIST_KEY("fusion", cia_layers),
      SWIMVG_LIST_KEY("fusion", dosa_layers),
      SWIMVG_BOOL_KEY("fusion", swip_enabled),
      SWIMVG_BOOL_KEY("fusion", cia_enabled),
      SWIMVG_BOOL_KEY("fusion", dosa_enabled),
      SWIMVG_BOOL_KEY("fusion", swip_bridge_shared),
      SWIMVG_BOOL_KEY("fusion", cia_bridge_shared),
      SWIMVG_INT_KEY("head", head_hidden_dim),
      SWIMVG_REAL_KEY("head", lambda_l1),
      SWIMVG_REAL_KEY("head", lambda_giou),
      SWIMVG_SEED_KEY("train", seed),
      KeySpec{"precision", "train",
              [](ModelConfig& c, const Json& v) {
                if (v == "float32") {
                  c.precision = Precision::Float32;
                } else if (v == "float64") {
                  c.precision = Precision::Float64;
                } else {
                  invalid("precision", "expected \"float32\" or \"float64\", got " + v.dump());
                }
              },
              [](const ModelConfig& c) { return Json(c.precision == Precision::Float64 ? "float64" : "float32"); }},
      SWIMVG_REAL_KEY("train", learning_rate),
      SWIMVG_REAL_KEY("train", weight_decay),
      SWIMVG_REAL_KEY("train", beta1),
      SWIMVG_REAL_KEY("train", beta2),
      SWIMVG_REAL_KEY("train", adam_eps),
      SWIMVG_REAL_KEY("train", grad_clip),
      SWIMVG_INT_KEY("train", warmup_steps),
      SWIMVG_INT_KEY("train", batch_size),
      SWIMVG_INT_KEY("train", epochs),
      SWIMVG_INT_KEY("train", eval_every),
      SWIMVG_SEED_KEY("data", data_seed),
      SWIMVG_INT_KEY("data", n_train),
      SWIMVG_INT_KEY("data", n_eval),
      SWIMVG_INT_KEY("data", min_objects),
      SWIMVG_INT_KEY("data", max_objects),
      SWIMVG_REAL_KEY("data", ambiguity_rate),
  };
  return table;
}

#undef SWIMVG_INT_KEY
#undef SWIMVG_REAL_KEY
#undef SWIMVG_BOOL_KEY
#undef SWIMVG_SEED_KEY
#undef SWIMVG_LIST_KEY

const KeySpec* find_key(std::string_view name) {
  for (const auto& k : key_table()) {
    if (k.name == name) {
      return &k;
    }
  }
  return nullptr;
}

// Maps "section.name" or "name" onto its table entry.
const KeySpec* resolve_key(std::string_view raw_key) {
  const auto dot = raw_key.find('.');
  if (dot == std::string_view::npos) {
    return find_key(raw_key);
  }
  const auto* spec = find_key(raw_key.substr(dot + 1));
  if (spec == nullptr || spec->section != raw_key.substr(0, dot)) {
    return nullptr;
  }
  return spec;
}

void require_positive(std::string_view key, int v) {
  if (v < 1) {
    invalid(key, "must be >= 1, got " + std::to_string(v));
  }
}

void require_finite(std::string_view key, double v) {
  if (!std::isfinite(v)) {
    invalid(key, "must be finite");
  }
}

void require_nonnegative(std::string_view key, double v) {
  require_finite(key, v);
  if (v < 0.0) {
    invalid(key, "must be >= 0");
  }
}

void check_invariants(const ModelConfig& c) {
  require_positive("text_depth", c.text_depth);
  require_positive("text_dim", c.text_dim);
  require_positive("text_heads", c.text_heads);
  require_positive("max_text_len", c.max_text_len);
  if (c.vocab_size < 2) {
    invalid("vocab_size", "must hold at least PAD and UNK");
  }
  require_positive("vision_depth", c.vision_depth);
  require_positive("vision_dim", c.vision_dim);
  require_positive("vision_heads", c.vision_heads);
  require_positive("image_size", c.image_size);
  require_positive("patch_size", c.patch_size);
  require_positive("in_channels", c.in_channels);
  require_positive("bottleneck_dim", c.bottleneck_dim);
  require_positive("cia_heads", c.cia_heads);
  require_positive("head_hidden_dim", c.head_hidden_dim);
  require_positive("batch_size", c.batch_size);
  require_positive("eval_every", c.eval_every);
  require_positive("n_train", c.n_train);
  require_positive("n_eval", c.n_eval);
  if (c.epochs < 0) {
    invalid("epochs", "must be >= 0");
  }
  if (c.warmup_steps < 0) {
    invalid("warmup_steps", "must be >= 0");
  }

  if (c.image_size % c.patch_size != 0) {
    invalid("patch_size", std::to_string(c.image_size) + " mod " + std::to_string(c.patch_size) + " != 0");
  }
  if (c.vision_dim % c.vision_heads != 0) {
    invalid("vision_heads", "vision_dim is not divisible by vision_heads");
  }
  if (c.text_dim % c.text_heads != 0) {
    invalid("text_heads", "text_dim is not divisible by text_heads");
  }
  if (c.bottleneck_dim > std::min(c.text_dim, c.vision_dim)) {
    invalid("bottleneck_dim", "must not exceed min(text_dim, vision_dim)");
  }
  if (c.bottleneck_dim % c.cia_heads != 0) {
    invalid("cia_heads", "bottleneck_dim is not divisible by cia_heads");
  }
  for (int layer : c.cia_layers) {
    if (layer < 0 || layer >= c.vision_depth) {
      invalid("cia_layers", "index " + std::to_string(layer) + " outside [0, vision_depth)");
    }
  }
  for (int layer : c.dosa_layers) {
    if (layer < 0 || layer >= c.text_depth) {
      invalid("dosa_layers", "index " + std::to_string(layer) + " outside [0, text_depth)");
    }
  }

  require_finite("adapter_scale_vt", c.adapter_scale_vt);
  require_finite("adapter_scale_t", c.adapter_scale_t);
  require_nonnegative("lambda_l1", c.lambda_l1);
  require_nonnegative("lambda_giou", c.lambda_giou);
  require_nonnegative("backbone_init_std", c.backbone_init_std);
  require_finite("vision_pos_scale", c.vision_pos_scale);
  if (c.vision_pos_init == PosInit::Sincos && c.vision_dim % 4 != 0) {
    invalid("vision_pos_init", "sincos needs vision_dim divisible by 4");
  }
  require_nonnegative("learning_rate", c.learning_rate);
  require_nonnegative("weight_decay", c.weight_decay);
  require_nonnegative("grad_clip", c.grad_clip);
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) {
    invalid("beta1", "must lie in [0, 1)");
  }
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    invalid("beta2", "must lie in [0, 1)");
  }
  if (!(c.adam_eps > 0.0) || !std::isfinite(c.adam_eps)) {
    invalid("adam_eps", "must be a positive finite number");
  }
  if (c.min_objects < 2 || c.max_objects > 4 || c.min_objects > c.max_objects) {
    invalid(c.min_objects < 2 || c.min_objects > c.max_objects ? "min_objects" : "max_objects",
            "object count bounds must satisfy 2 <= min_objects <= max_objects <= 4");
  }
  if (!(c.ambiguity_rate >= 0.0 && c.ambiguity_rate <= 1.0)) {
    invalid("ambiguity_rate", "must lie in [0, 1]");
  }
}

}  // namespace

const std::vector<std::string_view>& required_config_keys() {
  static const std::vector<std::string_view> keys = {"text_dim",   "text_depth", "vision_dim",    "vision_depth",
                                                     "patch_size", "image_size", "bottleneck_dim"};
  return keys;
}

ModelConfig validate_config(const Json& raw) {
  if (!raw.is_object()) {
    throw Error(ErrorKind::InvalidValue, "<config>", "config must be a JSON object");
  }
  ModelConfig cfg;
  std::set<std::string_view> seen;
  for (const auto& [key, value] : raw.items()) {
    const KeySpec* spec = resolve_key(key);
    if (spec == nullptr) {
      invalid(key, "unknown config key");
    }
    if (!seen.insert(spec->name).second) {
      invalid(key, "given more than once");
    }
    spec->read(cfg, value);
  }
  for (auto key : required_config_keys()) {
    if (!seen.contains(key)) {
      throw Error(ErrorKind::MissingKey, std::string(key), "required config key is absent");
    }
  }
  if (!seen.contains("cia_layers")) {
    cfg.cia_layers.clear();
    for (int i = cfg.vision_depth / 2; i < cfg.vision_depth; ++i) {
      cfg.cia_layers.push_back(i);
    }
  }
  if (!seen.contains("dosa_layers")) {
    cfg.dosa_layers.clear();
    for (int i = 0; i < cfg.text_depth; ++i) {
      cfg.dosa_layers.push_back(i);
    }
  }
  if (!seen.contains("head_hidden_dim")) {
    cfg.head_hidden_dim = cfg.vision_dim;
  }
  check_invariants(cfg);
  return cfg;
}

Json to_json(const ModelConfig& cfg) {
  Json out = Json::object();
  for (const auto& k : key_table()) {
    out[std::string(k.name)] = k.write(cfg);
  }
  return out;
}

void apply_override(Json& raw, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(ErrorKind::InvalidValue, std::string(assignment), "override must look like key=value");
  }
  const auto key = assignment.substr(0, eq);
  const auto text = std::string(assignment.substr(eq + 1));
  const KeySpec* spec = resolve_key(key);
  if (spec == nullptr) {
    invalid(key, "unknown config key");
  }
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) {
    value = text;
  }
  // Drop any alias spelling of the same key before writing the bare one.
  for (auto it = raw.begin(); it != raw.end();) {
    if (resolve_key(it.key()) == spec) {
      it = raw.erase(it);
    } else {
      ++it;
    }
  }
  raw[std::string(spec->name)] = std::move(value);
}

ShapeReport derive_shapes(const ModelConfig& cfg) {
  ShapeReport r;
  r.patch_count = cfg.patch_count();
  r.text_tokens = 1 + cfg.max_text_len;
  r.vision_tokens_at_layer.reserve(static_cast<std::size_t>(cfg.vision_depth));
  for (int i = 0; i < cfg.vision_depth; ++i) {
    const int swips = cfg.swip_enabled ? std::min(i + 1, cfg.text_depth) : 0;
    r.vision_tokens_at_layer.push_back(1 + swips + r.patch_count);
  }
  r.tunable_fraction_estimate = closed_form_budget(cfg).tunable_fraction;
  return r;
}

Json toy_profile() {
  return Json{{"text_dim", 32},   {"text_depth", 2}, {"text_heads", 2},     {"vision_dim", 48},
              {"vision_depth", 4}, {"vision_heads", 4}, {"patch_size", 8},  {"image_size", 64},
              {"bottleneck_dim", 8}, {"max_text_len", 12}, {"vocab_size", 40}};
}

Json paper_profile() {
  // Text branch sized like CLIP-B (49408-token vocabulary, 77-token context).
  std::vector<int> cia_layers;
  for (int i = 12; i < 24; ++i) {
    cia_layers.push_back(i);
  }
  return Json{{"text_dim", 512},     {"text_depth", 12},       {"text_heads", 8},          {"vision_dim", 768},
              {"vision_depth", 24},  {"vision_heads", 12},     {"patch_size", 14},         {"image_size", 224},
              {"bottleneck_dim", 56}, {"cia_heads", 8},        {"adapter_scale_vt", 0.2},  {"adapter_scale_t", 0.2},
              {"max_text_len", 77},  {"vocab_size", 49408},    {"head_hidden_dim", 768},   {"cia_layers", cia_layers}};
}

Json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::Io, path, "cannot open config file");
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  Json raw = Json::parse(buffer.str(), nullptr, false);
  if (raw.is_discarded()) {
    throw Error(ErrorKind::InvalidValue, path, "config file is not valid JSON");
  }
  return raw;
}

}  // namespace swimvg
