#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "swimvg/tensor.hpp"

namespace swimvg {

enum class ParamGroup : std::uint8_t {
  TextBackbone,
  VisionBackbone,
  Prompt,
  Bridge,
  Cia,
  Dosa,
  Head,
  Reg,
};

inline constexpr ParamGroup kTunableGroups[] = {ParamGroup::Prompt, ParamGroup::Bridge, ParamGroup::Cia,
                                                ParamGroup::Dosa,   ParamGroup::Head,   ParamGroup::Reg};

std::string_view to_string(ParamGroup group);

enum class Trainability : std::uint8_t { Untagged, Frozen, Tunable };

using ParamId = std::size_t;

struct ParamInfo {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  ParamGroup group = ParamGroup::TextBackbone;
  Trainability tag = Trainability::Untagged;
  bool decay = false;           // receives decoupled weight decay
  std::size_t offset = 0;       // into the value buffer
  std::ptrdiff_t grad_offset = -1;  // into a tunable-only gradient buffer, -1 if none

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
  bool tunable() const { return tag == Trainability::Tunable; }
};

// Flat storage for every named weight of a model. Tags are fixed at add() time
// and there is no way to change them afterwards. Gradient buffers are sized by
// tunable_count() and only tunable tensors have a slot in them.
template <typename T>
class ParamSet {
 public:
  ParamId add(std::string name, Index rows, Index cols, ParamGroup group, Trainability tag, bool decay = false) {
    ParamInfo info;
    info.name = std::move(name);
    info.rows = rows;
    info.cols = cols;
    info.group = group;
    info.tag = tag;
    info.decay = decay;
    info.offset = values_.size();
    if (tag == Trainability::Tunable) {
      info.grad_offset = static_cast<std::ptrdiff_t>(tunable_);
      tunable_ += info.size();
    }
    values_.resize(values_.size() + info.size(), T(0));
    infos_.push_back(std::move(info));
    return infos_.size() - 1;
  }

  MatMap<T> operator[](ParamId id) {
    const auto& i = infos_.at(id);
    return MatMap<T>(values_.data() + i.offset, i.rows, i.cols);
  }
  ConstMatMap<T> operator[](ParamId id) const {
    const auto& i = infos_.at(id);
    return ConstMatMap<T>(values_.data() + i.offset, i.rows, i.cols);
  }

  const ParamInfo& info(ParamId id) const { return infos_.at(id); }
  const std::vector<ParamInfo>& infos() const { return infos_; }
  std::size_t count() const { return infos_.size(); }

  std::optional<ParamId> find(std::string_view name) const {
    for (std::size_t i = 0; i < infos_.size(); ++i) {
      if (infos_[i].name == name) {
        return i;
      }
    }
    return std::nullopt;
  }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  std::size_t total_count() const { return values_.size(); }
  std::size_t tunable_count() const { return tunable_; }

  // Gradient slot of a parameter inside a tunable-only buffer, or nullptr when
  // the parameter is frozen or the buffer is empty (no-grad pass).
  T* grad_slot(std::span<T> grads, ParamId id) const {
    const auto& i = infos_.at(id);
    if (grads.empty() || i.grad_offset < 0) {
      return nullptr;
    }
    return grads.data() + i.grad_offset;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& i : infos_) {
      out.add(i.name, i.rows, i.cols, i.group, i.tag, i.decay);
    }
    auto dst = out.values();
    for (std::size_t k = 0; k < values_.size(); ++k) {
      dst[k] = static_cast<U>(values_[k]);
    }
    return out;
  }

  // Hash of the raw bytes of the selected tensors.
  std::uint64_t hash(Trainability which) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& i : infos_) {
      if (i.tag == which) {
        h = fnv1a(values_.data() + i.offset, i.size() * sizeof(T), h);
      }
    }
    return h;
  }

 private:
  std::vector<ParamInfo> infos_;
  std::vector<T> values_;
  std::size_t tunable_ = 0;
};

// Adds into a gradient slot viewed as a [rows x cols] matrix.
template <typename T>
MatMap<T> grad_view(T* slot, Index rows, Index cols) {
  return MatMap<T>(slot, rows, cols);
}

}  // namespace swimvg
