#pragma once

// Multimodal fusion: the bridge projection, the step-wise prompt (Swip)
// schedule, the cross-modal interactive adapter (CIA) with its multi-head
// cross-attention, and the text-side domain adapter (DoSA).

#include <optional>
#include <span>
#include <vector>

#include "swimvg/config.hpp"
#include "swimvg/ops.hpp"

namespace swimvg {

struct SwipStep {
  bool inject = false;
  std::optional<int> source_text_layer;  // its output prompt p_{i+1} becomes the new token
};

// Vision layer i (0-based) receives a new Swip token from text layer i while
// i < text_depth; injected tokens stay in the sequence for all later layers.
std::vector<SwipStep> swip_schedule(const ModelConfig& cfg);

// Number of Swip tokens present in the input of each vision layer.
std::vector<int> swip_counts(const ModelConfig& cfg);

struct CiaIds {
  ParamId down = 0;    // [C_v x C_d]
  ParamId linear = 0;  // [C_d x C_d]
  ParamId up = 0;      // [C_d x C_v]
  ParamId wq = 0;      // [C_d x C_d]
  ParamId wk = 0;      // [C_v x C_d]
  ParamId wv = 0;      // [C_v x C_d]
  ParamId bridge = 0;  // [C_t x C_v], possibly shared with other layers
};

struct DosaIds {
  ParamId down = 0;  // [C_t x C_d]
  ParamId up = 0;    // [C_d x C_t]
};

// Pure linear map C_t -> C_v, no bias.
template <typename T>
Mat<T> bridge_project(const Mat<T>& text, const ParamSet<T>& ps, ParamId bridge) {
  return ops::linear(text, ps, ops::LinearIds{bridge, std::nullopt});
}

template <typename T>
Mat<T> bridge_project_backward(const Mat<T>& text, const Mat<T>& dout, const ParamSet<T>& ps, ParamId bridge,
                               std::span<T> grads) {
  return ops::linear_backward(text, dout, ps, ops::LinearIds{bridge, std::nullopt}, grads);
}

// ---------------------------------------------------------- cross-attention --

struct CrossAttentionIds {
  ParamId wq = 0;
  ParamId wk = 0;
  ParamId wv = 0;
};

template <typename T>
struct CrossAttentionCache {
  Mat<T> query;
  Mat<T> context;
  Mat<T> q, k, v;
  std::vector<Mat<T>> probs;
};

// softmax((query Wq)(context Wk)^T / sqrt(C_d / heads)) (context Wv), heads
// concatenated, masked context tokens excluded. No output projection.
template <typename T>
Mat<T> cross_attention(const Mat<T>& query, const Mat<T>& context, const ParamSet<T>& ps,
                       const CrossAttentionIds& ids, int heads, std::span<const std::uint8_t> context_pad,
                       CrossAttentionCache<T>* cache) {
  Mat<T> q = ops::linear(query, ps, ops::LinearIds{ids.wq, std::nullopt});
  Mat<T> k = ops::linear(context, ps, ops::LinearIds{ids.wk, std::nullopt});
  Mat<T> v = ops::linear(context, ps, ops::LinearIds{ids.wv, std::nullopt});
  std::vector<Mat<T>> probs;
  Mat<T> out = ops::attention_core(q, k, v, heads, context_pad, cache ? &probs : nullptr);
  if (cache != nullptr) {
    cache->query = query;
    cache->context = context;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
  }
  return out;
}

template <typename T>
void cross_attention_backward(const Mat<T>& dout, const CrossAttentionCache<T>& c, const ParamSet<T>& ps,
                              const CrossAttentionIds& ids, int heads, std::span<T> grads, Mat<T>& dquery,
                              Mat<T>& dcontext) {
  Mat<T> dq, dk, dv;
  ops::attention_core_backward(c.q, c.k, c.v, c.probs, dout, heads, dq, dk, dv);
  dquery = ops::linear_backward(c.query, dq, ps, ops::LinearIds{ids.wq, std::nullopt}, grads);
  dcontext = ops::linear_backward(c.context, dk, ps, ops::LinearIds{ids.wk, std::nullopt}, grads);
  dcontext += ops::linear_backward(c.context, dv, ps, ops::LinearIds{ids.wv, std::nullopt}, grads);
}

// ---------------------------------------------------------------------- CIA --

template <typename T>
struct CiaCache {
  Mat<T> f_v;
  Mat<T> text;
  Mat<T> context;  // bridged text
  Mat<T> down;
  Mat<T> act;
  Mat<T> low;      // f_l
  CrossAttentionCache<T> attn;
  Mat<T> fused;    // f_l + MHCA(f_l, c)
};

// c = text W_bridge; f_l = ReLU(f_v W_down) W_linear;
// f_up = (f_l + MHCA(f_l, c)) W_up; out = f_v + scale * f_up.
template <typename T>
Mat<T> cia_forward(const Mat<T>& f_v, const Mat<T>& text, const ParamSet<T>& ps, const CiaIds& ids, int heads,
                   T scale, std::span<const std::uint8_t> text_pad, CiaCache<T>* cache) {
  Mat<T> context = bridge_project(text, ps, ids.bridge);
  Mat<T> down = ops::linear(f_v, ps, ops::LinearIds{ids.down, std::nullopt});
  Mat<T> act = ops::relu(down);
  Mat<T> low = ops::linear(act, ps, ops::LinearIds{ids.linear, std::nullopt});
  Mat<T> fused = low + cross_attention(low, context, ps, CrossAttentionIds{ids.wq, ids.wk, ids.wv}, heads, text_pad,
                                       cache ? &cache->attn : nullptr);
  Mat<T> out = f_v + scale * ops::linear(fused, ps, ops::LinearIds{ids.up, std::nullopt});
  if (cache != nullptr) {
    cache->f_v = f_v;
    cache->text = text;
    cache->context = std::move(context);
    cache->down = std::move(down);
    cache->act = std::move(act);
    cache->low = std::move(low);
    cache->fused = std::move(fused);
  }
  return out;
}

// Returns d f_v; writes the gradient w.r.t. the (un-bridged) text features.
template <typename T>
Mat<T> cia_backward(const Mat<T>& dout, const CiaCache<T>& c, const ParamSet<T>& ps, const CiaIds& ids, int heads,
                    T scale, std::span<T> grads, Mat<T>& dtext) {
  const Mat<T> dup = scale * dout;
  const Mat<T> dfused = ops::linear_backward(c.fused, dup, ps, ops::LinearIds{ids.up, std::nullopt}, grads);
  Mat<T> dquery, dcontext;
  cross_attention_backward(dfused, c.attn, ps, CrossAttentionIds{ids.wq, ids.wk, ids.wv}, heads, grads, dquery,
                           dcontext);
  const Mat<T> dlow = dfused + dquery;
  const Mat<T> dact = ops::linear_backward(c.act, dlow, ps, ops::LinearIds{ids.linear, std::nullopt}, grads);
  const Mat<T> ddown = ops::relu_backward(c.down, dact);
  Mat<T> df_v = dout + ops::linear_backward(c.f_v, ddown, ps, ops::LinearIds{ids.down, std::nullopt}, grads);
  dtext = bridge_project_backward(c.text, dcontext, ps, ids.bridge, grads);
  return df_v;
}

// --------------------------------------------------------------------- DoSA --

template <typename T>
struct DosaCache {
  Mat<T> f_t;
  Mat<T> down;
  Mat<T> act;
};

// out = f_t + scale * ReLU(f_t W_down) W_up
template <typename T>
Mat<T> dosa_forward(const Mat<T>& f_t, const ParamSet<T>& ps, const DosaIds& ids, T scale, DosaCache<T>* cache) {
  Mat<T> down = ops::linear(f_t, ps, ops::LinearIds{ids.down, std::nullopt});
  Mat<T> act = ops::relu(down);
  Mat<T> out = f_t + scale * ops::linear(act, ps, ops::LinearIds{ids.up, std::nullopt});
  if (cache != nullptr) {
    cache->f_t = f_t;
    cache->down = std::move(down);
    cache->act = std::move(act);
  }
  return out;
}

template <typename T>
Mat<T> dosa_backward(const Mat<T>& dout, const DosaCache<T>& c, const ParamSet<T>& ps, const DosaIds& ids, T scale,
                     std::span<T> grads) {
  const Mat<T> dact = ops::linear_backward(c.act, Mat<T>(scale * dout), ps, ops::LinearIds{ids.up, std::nullopt}, grads);
  const Mat<T> ddown = ops::relu_backward(c.down, dact);
  return dout + ops::linear_backward(c.f_t, ddown, ps, ops::LinearIds{ids.down, std::nullopt}, grads);
}

}  // namespace swimvg
