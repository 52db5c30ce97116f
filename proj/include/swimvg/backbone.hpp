#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "swimvg/ops.hpp"

namespace swimvg {

enum class TokenRole : std::uint8_t { Reg, Swip, Patch, Prompt, Word, Pad };

template <typename T>
struct TokenSequence {
  Mat<T> data;  // [tokens x channels]
  std::vector<TokenRole> roles;

  Index size() const { return data.rows(); }

  std::vector<std::uint8_t> pad_mask() const {
    std::vector<std::uint8_t> mask(roles.size());
    for (std::size_t i = 0; i < roles.size(); ++i) {
      mask[i] = roles[i] == TokenRole::Pad ? 1 : 0;
    }
    return mask;
  }

  // First index with the given role, or -1.
  Index find(TokenRole role) const {
    for (std::size_t i = 0; i < roles.size(); ++i) {
      if (roles[i] == role) {
        return static_cast<Index>(i);
      }
    }
    return -1;
  }

  std::size_t count(TokenRole role) const {
    std::size_t n = 0;
    for (auto r : roles) {
      n += r == role ? 1 : 0;
    }
    return n;
  }
};

struct ImageView {
  std::span<const float> pixels;  // row-major [height x width x channels]
  int height = 0;
  int width = 0;
  int channels = 0;
};

struct EncoderLayerIds {
  ops::LayerNormIds ln1;
  ops::AttentionIds attn;
  ops::LayerNormIds ln2;
  ops::LinearIds fc1;
  ops::LinearIds fc2;
};

template <typename T>
struct AttentionBlockCache {
  ops::LayerNormCache<T> norm;
  ops::SelfAttentionCache<T> attn;
};

template <typename T>
struct FfnBlockCache {
  ops::LayerNormCache<T> norm;
  Mat<T> normed;
  Mat<T> hidden;  // pre-activation
  Mat<T> activated;
};

// Pre-norm sub-blocks. A full encoder layer is
//   h = x + MHA(norm1(x));  h' = hook(h);  y = h' + FFN(norm2(h'))
// where h is the "post-MHA" feature that adapters consume.
template <typename T>
Mat<T> attention_block(const Mat<T>& x, const ParamSet<T>& ps, const EncoderLayerIds& ids, int heads,
                       std::span<const std::uint8_t> key_pad, AttentionBlockCache<T>* cache) {
  const Mat<T> normed = ops::layer_norm(x, ps, ids.ln1, cache ? &cache->norm : nullptr);
  return x + ops::self_attention(normed, ps, ids.attn, heads, key_pad, cache ? &cache->attn : nullptr);
}

template <typename T>
Mat<T> attention_block_backward(const Mat<T>& dh, const AttentionBlockCache<T>& c, const ParamSet<T>& ps,
                                const EncoderLayerIds& ids, int heads, std::span<T> grads) {
  const Mat<T> dnormed = ops::self_attention_backward(dh, c.attn, ps, ids.attn, heads, grads);
  return dh + ops::layer_norm_backward(dnormed, c.norm, ps, ids.ln1, grads);
}

template <typename T>
Mat<T> ffn_block(const Mat<T>& h, const ParamSet<T>& ps, const EncoderLayerIds& ids, FfnBlockCache<T>* cache) {
  ops::LayerNormCache<T> norm_cache;
  Mat<T> normed = ops::layer_norm(h, ps, ids.ln2, cache ? &norm_cache : nullptr);
  Mat<T> hidden = ops::linear(normed, ps, ids.fc1);
  Mat<T> activated = ops::gelu(hidden);
  Mat<T> out = h + ops::linear(activated, ps, ids.fc2);
  if (cache != nullptr) {
    cache->norm = std::move(norm_cache);
    cache->normed = std::move(normed);
    cache->hidden = std::move(hidden);
    cache->activated = std::move(activated);
  }
  return out;
}

template <typename T>
Mat<T> ffn_block_backward(const Mat<T>& dy, const FfnBlockCache<T>& c, const ParamSet<T>& ps,
                          const EncoderLayerIds& ids, std::span<T> grads) {
  const Mat<T> dact = ops::linear_backward(c.activated, dy, ps, ids.fc2, grads);
  const Mat<T> dhidden = ops::gelu_backward(c.hidden, dact);
  const Mat<T> dnormed = ops::linear_backward(c.normed, dhidden, ps, ids.fc1, grads);
  return dy + ops::layer_norm_backward(dnormed, c.norm, ps, ids.ln2, grads);
}

template <typename T>
struct LayerHooks {
  // Receives post-MHA features, returns the features that enter the FFN block.
  std::function<Mat<T>(const Mat<T>&)> post_mha;
};

template <typename T>
struct LayerOutput {
  TokenSequence<T> tokens;
  Mat<T> post_mha;                  // before the hook
  std::vector<Mat<T>> attention;    // per head [T x T]
};

template <typename T>
LayerOutput<T> encoder_layer_forward(const TokenSequence<T>& in, const ParamSet<T>& ps, const EncoderLayerIds& ids,
                                     int heads, const LayerHooks<T>& hooks = {}) {
  if (static_cast<std::size_t>(in.data.rows()) != in.roles.size()) {
    throw Error(ErrorKind::ShapeMismatch, "tokens", "role count differs from token count");
  }
  const auto pad = in.pad_mask();
  AttentionBlockCache<T> cache;
  LayerOutput<T> out;
  out.post_mha = attention_block(in.data, ps, ids, heads, pad, &cache);
  const Mat<T> adapted = hooks.post_mha ? hooks.post_mha(out.post_mha) : out.post_mha;
  out.tokens.data = ffn_block<T>(adapted, ps, ids, nullptr);
  out.tokens.roles = in.roles;
  out.attention = std::move(cache.attn.probs);
  return out;
}

// [N x patch*patch*channels]; patches in raster order, pixels inside a patch
// in (row, column, channel) order.
template <typename T>
Mat<T> patchify(const ImageView& image, int patch_size) {
  const int per_side_y = image.height / patch_size;
  const int per_side_x = image.width / patch_size;
  const int c = image.channels;
  Mat<T> out(per_side_y * per_side_x, patch_size * patch_size * c);
  for (int py = 0; py < per_side_y; ++py) {
    for (int px = 0; px < per_side_x; ++px) {
      const Index row = py * per_side_x + px;
      Index col = 0;
      for (int y = 0; y < patch_size; ++y) {
        for (int x = 0; x < patch_size; ++x) {
          const std::size_t base =
              (static_cast<std::size_t>(py * patch_size + y) * static_cast<std::size_t>(image.width) +
               static_cast<std::size_t>(px * patch_size + x)) *
              static_cast<std::size_t>(c);
          for (int ch = 0; ch < c; ++ch) {
            out(row, col++) = static_cast<T>(image.pixels[base + static_cast<std::size_t>(ch)]);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace swimvg
