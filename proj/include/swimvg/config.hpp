#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace swimvg {

using Json = nlohmann::json;

enum class Precision { Float32, Float64 };

// Frozen patch positional table: random normal like every other backbone
// weight, or a fixed 2D sine/cosine table scaled by vision_pos_scale.
enum class PosInit { Normal, Sincos };

// Every architectural, training and data hyperparameter. Built only through
// validate_config, so a ModelConfig in hand always satisfies its invariants.
struct ModelConfig {
  // Text encoder.
  int text_depth = 2;
  int text_dim = 32;
  int text_heads = 2;
  int max_text_len = 12;
  int vocab_size = 40;

  // Vision encoder.
  int vision_depth = 4;
  int vision_dim = 48;
  int vision_heads = 4;
  int image_size = 64;
  int patch_size = 8;
  int in_channels = 3;
  double backbone_init_std = 0.02;
  PosInit vision_pos_init = PosInit::Normal;
  double vision_pos_scale = 1.0;

  // Fusion components.
  int bottleneck_dim = 8;
  int cia_heads = 2;
  double adapter_scale_vt = 0.2;
  double adapter_scale_t = 0.2;
  std::vector<int> cia_layers;   // sorted, unique, vision-layer indices
  std::vector<int> dosa_layers;  // sorted, unique, text-layer indices
  bool swip_enabled = true;
  bool cia_enabled = true;
  bool dosa_enabled = true;
  bool swip_bridge_shared = true;
  bool cia_bridge_shared = true;

  // Head and objective.
  int head_hidden_dim = 48;
  double lambda_l1 = 1.0;
  double lambda_giou = 1.0;

  // Training.
  std::uint64_t seed = 0;
  Precision precision = Precision::Float32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  int warmup_steps = 0;
  int batch_size = 32;
  int epochs = 10;
  int eval_every = 1;

  // Synthetic data.
  std::uint64_t data_seed = 7;
  int n_train = 2000;
  int n_eval = 500;
  int min_objects = 2;
  int max_objects = 4;
  double ambiguity_rate = 0.5;

  bool cia_active() const { return cia_enabled && !cia_layers.empty(); }
  bool dosa_active() const { return dosa_enabled && !dosa_layers.empty(); }
  // The text branch only matters when something carries its output into vision.
  bool text_branch_used() const { return swip_enabled || cia_active(); }
  bool has_cia_at(int vision_layer) const;
  bool has_dosa_at(int text_layer) const;
  int patch_count() const { return (image_size / patch_size) * (image_size / patch_size); }

  bool operator==(const ModelConfig&) const = default;
};

struct ShapeReport {
  int patch_count = 0;
  std::vector<int> vision_tokens_at_layer;
  int text_tokens = 0;
  double tunable_fraction_estimate = 0.0;

  bool operator==(const ShapeReport&) const = default;
};

// Keys that must be present in a raw config; everything else has a default.
const std::vector<std::string_view>& required_config_keys();

// Parses and validates a flat JSON object. Unknown keys are rejected. Keys may
// be given bare ("swip_enabled") or with their section prefix
// ("fusion.swip_enabled"). Throws Error{MissingKey|InvalidValue}.
ModelConfig validate_config(const Json& raw);

// Fully resolved flat object; validate_config(to_json(c)) == c.
Json to_json(const ModelConfig& cfg);

// Applies "dotted.key=value" on top of a raw object. The value is parsed as
// JSON when possible, otherwise taken as a string.
void apply_override(Json& raw, std::string_view assignment);

ShapeReport derive_shapes(const ModelConfig& cfg);

// Named profiles as raw key maps (before validation).
Json toy_profile();
Json paper_profile();

Json load_config_file(const std::string& path);

}  // namespace swimvg
