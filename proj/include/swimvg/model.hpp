#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "swimvg/backbone.hpp"
#include "swimvg/config.hpp"
#include "swimvg/fusion.hpp"
#include "swimvg/head.hpp"

namespace swimvg {

struct ModelIds {
  // Frozen text backbone.
  ParamId word_embed = 0;
  ParamId text_pos = 0;
  std::vector<EncoderLayerIds> text_layers;
  ops::LayerNormIds text_norm;
  // Frozen vision backbone.
  ops::LinearIds patch_embed;
  ParamId vision_pos = 0;
  std::vector<EncoderLayerIds> vision_layers;
  ops::LayerNormIds vision_norm;
  // Tunable.
  std::optional<ParamId> prompt;
  ParamId reg = 0;
  std::vector<ParamId> swip_bridges;          // one per scheduled injection; may repeat when shared
  std::vector<std::optional<CiaIds>> cia;     // per vision layer
  std::vector<std::optional<DosaIds>> dosa;   // per text layer
  HeadIds head;
};

template <typename T>
struct LayerTrace {
  std::vector<Mat<T>> post_mha;          // per layer, before any adapter
  std::vector<Mat<T>> final_attention;   // per head, [T x T] of the last layer
};

template <typename T>
struct TextEncoding {
  Mat<T> final_tokens;             // after the final norm
  std::vector<Mat<T>> prompts;     // p_1..p_l, each [1 x C_t]
  std::vector<std::uint8_t> pad;   // over [prompt, words...]
  LayerTrace<T> trace;
};

template <typename T>
struct VisionInputs {
  std::vector<Mat<T>> swip_tokens;    // [1 x C_v] each, in injection order
  std::vector<Mat<T>> text_features;  // per text layer, post-MHA [1+L x C_t]; needed when CIA is active
  std::vector<std::uint8_t> text_pad;
};

template <typename T>
struct VisionEncoding {
  TokenSequence<T> final_tokens;  // after the final norm
  std::vector<int> tokens_per_layer;
  LayerTrace<T> trace;
};

// ------------------------------------------------------------------ caches --

template <typename T>
struct TextLayerCache {
  AttentionBlockCache<T> attn;
  Mat<T> post_mha;
  std::optional<DosaCache<T>> dosa;
  FfnBlockCache<T> ffn;
};

template <typename T>
struct VisionLayerCache {
  std::vector<TokenRole> roles;
  std::optional<Index> injected_row;  // where this layer's Swip token was inserted
  AttentionBlockCache<T> attn;
  Mat<T> post_mha;
  std::optional<CiaCache<T>> cia;
  int cia_text_layer = -1;
  FfnBlockCache<T> ffn;
};

template <typename T>
struct ForwardCache {
  bool text_used = false;
  std::vector<std::uint8_t> text_pad;
  std::vector<TextLayerCache<T>> text_layers;
  std::vector<Mat<T>> prompts;  // p_1..p_l
  std::vector<VisionLayerCache<T>> vision_layers;
  ops::LayerNormCache<T> vision_norm;
  std::vector<TokenRole> final_roles;
  HeadCache<T> head;
};

enum class AttentionQuery { Reg, Swip };

// The full grounding model: frozen text and vision transformers, a learnable
// text prompt whose per-layer states are bridged into the vision stream as
// Swip tokens, CIA adapters on selected vision layers, DoSA adapters on
// selected text layers, and a [REG]-token box head.
struct LayoutOnly {};

template <typename T>
class Model {
 public:
  // Builds the parameter layout and initializes it from cfg.seed.
  explicit Model(const ModelConfig& cfg);
  // Layout with all-zero values, for budget accounting or loading weights.
  Model(const ModelConfig& cfg, LayoutOnly);

  const ModelConfig& config() const { return cfg_; }
  const ModelIds& ids() const { return ids_; }
  const ParamSet<T>& params() const { return params_; }
  ParamSet<T>& params() { return params_; }

  // [REG] followed by N patch embeddings (+ positional embeddings).
  TokenSequence<T> embed_patches(const ImageView& image) const;

  // Input layout [p, t^1..t^L]; ids are padded/truncated to max_text_len.
  TextEncoding<T> encode_text(std::span<const int> word_ids) const;

  VisionEncoding<T> encode_vision(const TokenSequence<T>& tokens, const VisionInputs<T>& inputs) const;

  // Full forward pass to (cx, cy, w, h). Fills `cache` when given.
  std::array<T, 4> forward(const ImageView& image, std::span<const int> word_ids, ForwardCache<T>* cache) const;

  // Accumulates d(loss)/d(tunable params) into `grads` (size tunable_count()).
  void backward(const ForwardCache<T>& cache, const std::array<T, 4>& d_box, std::span<T> grads) const;

  // Final-layer attention from the query rows to the patch keys, averaged over
  // heads and reshaped to the patch grid.
  Mat<double> attention_grid(const ForwardCache<T>& cache, AttentionQuery query = AttentionQuery::Reg) const;

 private:
  std::vector<int> checked_ids(std::span<const int> word_ids) const;
  void run_text(const std::vector<int>& ids, ForwardCache<T>& cache, std::vector<Mat<T>>* post_mha,
                Mat<T>* final_tokens) const;
  Mat<T> run_vision(const TokenSequence<T>& tokens, const VisionInputs<T>& inputs, ForwardCache<T>& cache,
                    std::vector<Mat<T>>* post_mha, std::vector<int>* counts) const;
  void build_layout();
  void initialize();

  ModelConfig cfg_;
  ParamSet<T> params_;
  ModelIds ids_;
};

template <typename U, typename T>
Model<U> model_cast(const Model<T>& m) {
  Model<U> out(m.config());
  const auto src = m.params().values();
  auto dst = out.params().values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<U>(src[i]);
  }
  return out;
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace swimvg
