#include "swimvg/budget.hpp"

#include <algorithm>

namespace swimvg {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::TextBackbone: return "text_backbone";
    case ParamGroup::VisionBackbone: return "vision_backbone";
    case ParamGroup::Prompt: return "prompts";
    case ParamGroup::Bridge: return "bridges";
    case ParamGroup::Cia: return "cia";
    case ParamGroup::Dosa: return "dosa";
    case ParamGroup::Head: return "head";
    case ParamGroup::Reg: return "reg";
  }
  return "unknown";
}

std::size_t encoder_layer_param_count(std::size_t dim) { return 12 * dim * dim + 13 * dim; }

std::size_t cia_param_count(std::size_t vision_dim, std::size_t bottleneck_dim) {
  const auto v = vision_dim;
  const auto d = bottleneck_dim;
  return v * d + d * d + d * v + d * d + 2 * v * d;
}

std::size_t dosa_param_count(std::size_t text_dim, std::size_t bottleneck_dim) { return 2 * text_dim * bottleneck_dim; }

ParamBudget closed_form_budget(const ModelConfig& cfg) {
  const auto ct = static_cast<std::size_t>(cfg.text_dim);
  const auto cv = static_cast<std::size_t>(cfg.vision_dim);
  const auto cd = static_cast<std::size_t>(cfg.bottleneck_dim);
  const auto p = static_cast<std::size_t>(cfg.patch_size);
  const auto n_patches = static_cast<std::size_t>(cfg.patch_count());
  const auto hidden = static_cast<std::size_t>(cfg.head_hidden_dim);

  ParamBudget b;
  b.frozen_count += static_cast<std::size_t>(cfg.vocab_size) * ct + static_cast<std::size_t>(cfg.max_text_len) * ct;
  b.frozen_count += static_cast<std::size_t>(cfg.text_depth) * encoder_layer_param_count(ct) + 2 * ct;
  b.frozen_count += p * p * static_cast<std::size_t>(cfg.in_channels) * cv + cv + n_patches * cv;
  b.frozen_count += static_cast<std::size_t>(cfg.vision_depth) * encoder_layer_param_count(cv) + 2 * cv;

  b.per_group[ParamGroup::Reg] = cv;
  b.per_group[ParamGroup::Head] = cv * hidden + hidden + hidden * 4 + 4;
  if (cfg.text_branch_used()) {
    b.per_group[ParamGroup::Prompt] = ct;
  }

  std::size_t bridges = 0;
  const bool shared = (cfg.swip_enabled && cfg.swip_bridge_shared) || (cfg.cia_active() && cfg.cia_bridge_shared);
  if (shared) {
    bridges += 1;
  }
  if (cfg.swip_enabled && !cfg.swip_bridge_shared) {
    bridges += static_cast<std::size_t>(std::min(cfg.text_depth, cfg.vision_depth));
  }
  if (cfg.cia_active() && !cfg.cia_bridge_shared) {
    bridges += cfg.cia_layers.size();
  }
  if (bridges > 0) {
    b.per_group[ParamGroup::Bridge] = bridges * ct * cv;
  }
  if (cfg.cia_active()) {
    b.per_group[ParamGroup::Cia] = cfg.cia_layers.size() * cia_param_count(cv, cd);
  }
  if (cfg.dosa_active()) {
    b.per_group[ParamGroup::Dosa] = cfg.dosa_layers.size() * dosa_param_count(ct, cd);
  }

  for (const auto& [group, count] : b.per_group) {
    b.tunable_count += count;
  }
  const auto total = b.frozen_count + b.tunable_count;
  b.tunable_fraction = static_cast<double>(b.tunable_count) / static_cast<double>(total);
  return b;
}

std::vector<std::string> budget_differences(const ParamBudget& enumerated, const ParamBudget& closed_form) {
  std::vector<std::string> diffs;
  auto check = [&](const std::string& what, std::size_t a, std::size_t b) {
    if (a != b) {
      diffs.push_back(what + ": enumerated " + std::to_string(a) + " vs closed-form " + std::to_string(b));
    }
  };
  check("frozen", enumerated.frozen_count, closed_form.frozen_count);
  check("tunable", enumerated.tunable_count, closed_form.tunable_count);
  for (auto group : kTunableGroups) {
    const auto a = enumerated.per_group.contains(group) ? enumerated.per_group.at(group) : 0;
    const auto b = closed_form.per_group.contains(group) ? closed_form.per_group.at(group) : 0;
    check(std::string(to_string(group)), a, b);
  }
  return diffs;
}

}  // namespace swimvg
