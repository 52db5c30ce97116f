#pragma once

// Forward/backward kernels shared by the encoders and the fusion adapters.
// Backward functions accumulate into a tunable-only gradient buffer through
// ParamSet::grad_slot, so frozen weights never receive a gradient write; the
// input gradient is always returned so signal can still flow through frozen
// layers to tunable ones upstream.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swimvg/error.hpp"
#include "swimvg/params.hpp"
#include "swimvg/tensor.hpp"

namespace swimvg::ops {

struct LinearIds {
  ParamId weight = 0;  // [in x out]
  std::optional<ParamId> bias;  // [1 x out]
};

struct LayerNormIds {
  ParamId gamma = 0;
  ParamId beta = 0;
};

struct AttentionIds {
  LinearIds q, k, v, o;
};

inline void check_cols(Index got, Index want, const std::string& what) {
  if (got != want) {
    throw Error(ErrorKind::ShapeMismatch, what,
                "expected " + std::to_string(want) + " columns, got " + std::to_string(got));
  }
}

// ---------------------------------------------------------------- linear ----

template <typename T>
Mat<T> linear(const Mat<T>& x, const ParamSet<T>& ps, const LinearIds& ids) {
  const auto w = ps[ids.weight];
  check_cols(x.cols(), w.rows(), ps.info(ids.weight).name);
  Mat<T> y = x * w;
  if (ids.bias) {
    y.rowwise() += ps[*ids.bias].row(0);
  }
  return y;
}

template <typename T>
Mat<T> linear_backward(const Mat<T>& x, const Mat<T>& dy, const ParamSet<T>& ps, const LinearIds& ids,
                       std::span<T> grads) {
  const auto w = ps[ids.weight];
  if (T* gw = ps.grad_slot(grads, ids.weight)) {
    grad_view(gw, w.rows(), w.cols()).noalias() += x.transpose() * dy;
  }
  if (ids.bias) {
    if (T* gb = ps.grad_slot(grads, *ids.bias)) {
      grad_view(gb, 1, w.cols()) += dy.colwise().sum();
    }
  }
  return dy * w.transpose();
}

// ------------------------------------------------------------ layer norm ----

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const ParamSet<T>& ps, const LayerNormIds& ids, LayerNormCache<T>* cache) {
  const auto gamma = ps[ids.gamma];
  const auto beta = ps[ids.beta];
  check_cols(x.cols(), gamma.cols(), ps.info(ids.gamma).name);
  const Index n = x.cols();
  Mat<T> xhat(x.rows(), n);
  std::vector<T> rstd(static_cast<std::size_t>(x.rows()));
  for (Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
    xhat.row(r) = (x.row(r).array() - mean) * rs;
    rstd[static_cast<std::size_t>(r)] = rs;
  }
  Mat<T> y = (xhat.array().rowwise() * gamma.row(0).array()).matrix();
  y.rowwise() += beta.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LayerNormCache<T>& cache, const ParamSet<T>& ps,
                           const LayerNormIds& ids, std::span<T> grads) {
  const auto gamma = ps[ids.gamma];
  const Index n = dy.cols();
  if (T* gg = ps.grad_slot(grads, ids.gamma)) {
    grad_view(gg, 1, n) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  }
  if (T* gb = ps.grad_slot(grads, ids.beta)) {
    grad_view(gb, 1, n) += dy.colwise().sum();
  }
  Mat<T> dx(dy.rows(), n);
  for (Index r = 0; r < dy.rows(); ++r) {
    const auto dxhat = (dy.row(r).array() * gamma.row(0).array()).eval();
    const T mean_d = dxhat.mean();
    const T mean_dx = (dxhat * cache.xhat.row(r).array()).mean();
    dx.row(r) = cache.rstd[static_cast<std::size_t>(r)] *
                (dxhat - mean_d - cache.xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

// ------------------------------------------------------------ activations ----

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  const T k = std::sqrt(T(2) / T(3.14159265358979323846));
  return x.unaryExpr([k](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + T(0.044715) * v * v * v))); });
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy) {
  const T k = std::sqrt(T(2) / T(3.14159265358979323846));
  const Mat<T> slope = x.unaryExpr([k](T v) {
    const T t = std::tanh(k * (v + T(0.044715) * v * v * v));
    return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3) * T(0.044715) * v * v);
  });
  return (dy.array() * slope.array()).matrix();
}

template <typename T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

// Gradient passes where the forward input was strictly positive.
template <typename T>
Mat<T> relu_backward(const Mat<T>& x, const Mat<T>& dy) {
  return (x.array() > T(0)).select(dy, T(0));
}

// ------------------------------------------------------------- attention ----

// Multi-head scaled dot-product attention over pre-projected q/k/v. `key_pad`
// marks keys excluded from every softmax (1 = masked); empty means none.
// probs[h] is [Tq x Tk] and has exact zeros in masked columns.
template <typename T>
Mat<T> attention_core(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, int heads,
                      std::span<const std::uint8_t> key_pad, std::vector<Mat<T>>* probs_out) {
  const Index d = q.cols();
  check_cols(k.cols(), d, "attention.key");
  check_cols(v.cols(), d, "attention.value");
  if (k.rows() != v.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "attention.value", "key/value token counts differ");
  }
  if (!key_pad.empty() && static_cast<Index>(key_pad.size()) != k.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "attention.mask", "pad mask length differs from key count");
  }
  bool any_open = false;
  for (Index j = 0; j < k.rows(); ++j) {
    any_open = any_open || key_pad.empty() || key_pad[static_cast<std::size_t>(j)] == 0;
  }
  if (!any_open) {
    throw Error(ErrorKind::EmptyContext, "attention", "every key is masked");
  }
  const Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Mat<T> out(q.rows(), d);
  if (probs_out != nullptr) {
    probs_out->resize(static_cast<std::size_t>(heads));
  }
  for (int h = 0; h < heads; ++h) {
    Mat<T> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    for (Index i = 0; i < s.rows(); ++i) {
      T m = -std::numeric_limits<T>::infinity();
      for (Index j = 0; j < s.cols(); ++j) {
        if (key_pad.empty() || key_pad[static_cast<std::size_t>(j)] == 0) {
          m = std::max(m, s(i, j));
        }
      }
      T sum = 0;
      for (Index j = 0; j < s.cols(); ++j) {
        if (key_pad.empty() || key_pad[static_cast<std::size_t>(j)] == 0) {
          s(i, j) = std::exp(s(i, j) - m);
          sum += s(i, j);
        } else {
          s(i, j) = 0;
        }
      }
      s.row(i) /= sum;
    }
    out.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    if (probs_out != nullptr) {
      (*probs_out)[static_cast<std::size_t>(h)] = std::move(s);
    }
  }
  return out;
}

template <typename T>
void attention_core_backward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, const std::vector<Mat<T>>& probs,
                             const Mat<T>& dout, int heads, Mat<T>& dq, Mat<T>& dk, Mat<T>& dv) {
  const Index d = q.cols();
  const Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  dq.setZero(q.rows(), d);
  dk.setZero(k.rows(), d);
  dv.setZero(v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto& p = probs[static_cast<std::size_t>(h)];
    const auto dout_h = dout.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * dout_h;
    const Mat<T> dp = dout_h * v.middleCols(h * dh, dh).transpose();
    // softmax backward: ds = p * (dp - rowsum(dp * p))
    const auto row_dot = (dp.array() * p.array()).rowwise().sum().eval();
    Mat<T> ds = (p.array() * (dp.array().colwise() - row_dot)).matrix() * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * q.middleCols(h * dh, dh);
  }
}

template <typename T>
struct SelfAttentionCache {
  Mat<T> input;
  Mat<T> q, k, v;
  std::vector<Mat<T>> probs;
  Mat<T> mixed;  // concatenated head outputs, input of the output projection
};

template <typename T>
Mat<T> self_attention(const Mat<T>& x, const ParamSet<T>& ps, const AttentionIds& ids, int heads,
                      std::span<const std::uint8_t> key_pad, SelfAttentionCache<T>* cache) {
  Mat<T> q = linear(x, ps, ids.q);
  Mat<T> k = linear(x, ps, ids.k);
  Mat<T> v = linear(x, ps, ids.v);
  std::vector<Mat<T>> probs;
  Mat<T> mixed = attention_core(q, k, v, heads, key_pad, &probs);
  Mat<T> out = linear(mixed, ps, ids.o);
  if (cache != nullptr) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->mixed = std::move(mixed);
  }
  return out;
}

template <typename T>
Mat<T> self_attention_backward(const Mat<T>& dout, const SelfAttentionCache<T>& c, const ParamSet<T>& ps,
                               const AttentionIds& ids, int heads, std::span<T> grads) {
  const Mat<T> dmixed = linear_backward(c.mixed, dout, ps, ids.o, grads);
  Mat<T> dq, dk, dv;
  attention_core_backward(c.q, c.k, c.v, c.probs, dmixed, heads, dq, dk, dv);
  Mat<T> dx = linear_backward(c.input, dq, ps, ids.q, grads);
  dx += linear_backward(c.input, dk, ps, ids.k, grads);
  dx += linear_backward(c.input, dv, ps, ids.v, grads);
  return dx;
}

}  // namespace swimvg::ops
