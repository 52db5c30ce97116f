#include "swimvg/fusion.hpp"

#include <algorithm>

namespace swimvg {

std::vector<SwipStep> swip_schedule(const ModelConfig& cfg) {
  std::vector<SwipStep> steps(static_cast<std::size_t>(cfg.vision_depth));
  if (!cfg.swip_enabled) {
    return steps;
  }
  for (int i = 0; i < cfg.vision_depth && i < cfg.text_depth; ++i) {
    steps[static_cast<std::size_t>(i)] = SwipStep{true, i};
  }
  return steps;
}

std::vector<int> swip_counts(const ModelConfig& cfg) {
  std::vector<int> counts;
  int carried = 0;
  for (const auto& step : swip_schedule(cfg)) {
    carried += step.inject ? 1 : 0;
    counts.push_back(carried);
  }
  return counts;
}

}  // namespace swimvg
