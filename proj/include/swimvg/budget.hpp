#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "swimvg/config.hpp"
#include "swimvg/error.hpp"
#include "swimvg/params.hpp"

namespace swimvg {

struct ParamBudget {
  std::size_t frozen_count = 0;
  std::size_t tunable_count = 0;
  double tunable_fraction = 0.0;
  std::map<ParamGroup, std::size_t> per_group;  // tunable groups only

  bool operator==(const ParamBudget&) const = default;
};

// Reference figure for the paper-scale profile.
inline constexpr double kReferenceTunableFraction = 0.0204;

// Closed-form counts from configured shapes (all adapters bias-free):
//   encoder layer  12C^2 + 13C   (qkv+out with bias, two norms, 4x MLP with bias)
//   text frozen    vocab*C_t + L*C_t + l*layer(C_t) + 2C_t
//   vision frozen  (P^2*ch*C_v + C_v) + N*C_v + n*layer(C_v) + 2C_v
//   CIA            C_v*C_d + C_d^2 + C_d*C_v  +  C_d^2 + 2*C_v*C_d  (Wq, Wk, Wv)
//   DoSA           2*C_t*C_d
//   bridge         C_t*C_v, one shared or one per Swip injection / CIA layer
//   head           C_v*H + H + 4H + 4;  REG C_v;  prompt C_t
ParamBudget closed_form_budget(const ModelConfig& cfg);

std::size_t encoder_layer_param_count(std::size_t dim);
std::size_t cia_param_count(std::size_t vision_dim, std::size_t bottleneck_dim);
std::size_t dosa_param_count(std::size_t text_dim, std::size_t bottleneck_dim);

// Exact enumeration over a constructed parameter set.
template <typename T>
ParamBudget enumerate_budget(const ParamSet<T>& params) {
  ParamBudget b;
  for (const auto& info : params.infos()) {
    switch (info.tag) {
      case Trainability::Untagged:
        throw Error(ErrorKind::UntaggedParameter, info.name, "parameter has no frozen/tunable tag");
      case Trainability::Frozen:
        b.frozen_count += info.size();
        break;
      case Trainability::Tunable:
        b.tunable_count += info.size();
        b.per_group[info.group] += info.size();
        break;
    }
  }
  const auto total = b.frozen_count + b.tunable_count;
  b.tunable_fraction = total == 0 ? 0.0 : static_cast<double>(b.tunable_count) / static_cast<double>(total);
  return b;
}

// Human-readable differences; empty when the two budgets agree exactly.
std::vector<std::string> budget_differences(const ParamBudget& enumerated, const ParamBudget& closed_form);

}  // namespace swimvg
