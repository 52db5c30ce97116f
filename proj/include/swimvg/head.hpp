#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "swimvg/ops.hpp"

namespace swimvg {

// Normalized center form.
struct BoundingBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.5;
  double h = 0.5;

  bool operator==(const BoundingBox&) const = default;
};

struct Corners {
  double x1 = 0;
  double y1 = 0;
  double x2 = 0;
  double y2 = 0;
};

inline Corners to_corners(const BoundingBox& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

inline BoundingBox from_corners(const Corners& c) {
  return {(c.x1 + c.x2) / 2, (c.y1 + c.y2) / 2, c.x2 - c.x1, c.y2 - c.y1};
}

double iou(const Corners& a, const Corners& b);
double iou(const BoundingBox& a, const BoundingBox& b);

// IoU - (area(C) - area(A u B)) / area(C), C the smallest enclosing box.
// Throws DegenerateBox for non-positive width or height.
double giou(const Corners& a, const Corners& b);
double giou(const BoundingBox& a, const BoundingBox& b);

struct LossBreakdown {
  double l1 = 0;
  double giou_loss = 0;
  double total = 0;
};

// l1 is the mean absolute difference over (cx, cy, w, h); giou_loss = 1 - GIoU;
// total = lambda_l1 * l1 + lambda_giou * giou_loss.
LossBreakdown grounding_loss(const BoundingBox& pred, const BoundingBox& gt, double lambda_l1, double lambda_giou);

// Same, plus d(total)/d(cx, cy, w, h) of the prediction.
LossBreakdown grounding_loss_grad(const BoundingBox& pred, const BoundingBox& gt, double lambda_l1,
                                  double lambda_giou, std::array<double, 4>& d_pred);

// Fraction of pairs with IoU >= tau.
double precision_at(std::span<const BoundingBox> preds, std::span<const BoundingBox> gts, double tau);

// ------------------------------------------------------------------- MLP head --

struct HeadIds {
  ops::LinearIds hidden;  // C_v -> H, ReLU
  ops::LinearIds out;     // H -> 4, sigmoid
};

template <typename T>
struct HeadCache {
  Mat<T> input;
  Mat<T> hidden_pre;
  Mat<T> hidden;
  std::array<T, 4> box{};
  std::array<bool, 4> clamped{};
};

// Logits are clamped so the sigmoid stays strictly inside (0, 1) in float.
inline constexpr double kLogitLimit = 12.0;

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// reg: [1 x C_v]. Output (cx, cy, w, h) strictly inside (0, 1).
// A NaN logit passes through so the trainer can report it.
template <typename T>
std::array<T, 4> head_forward(const Mat<T>& reg, const ParamSet<T>& ps, const HeadIds& ids, HeadCache<T>* cache) {
  if (reg.rows() != 1) {
    throw Error(ErrorKind::ShapeMismatch, "reg_embedding", "expected a single row");
  }
  Mat<T> hidden_pre = ops::linear(reg, ps, ids.hidden);
  Mat<T> hidden = ops::relu(hidden_pre);
  const Mat<T> logits = ops::linear(hidden, ps, ids.out);
  std::array<T, 4> box{};
  std::array<bool, 4> clamped{};
  const T limit = static_cast<T>(kLogitLimit);
  for (int i = 0; i < 4; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const T z = logits(0, i);
    clamped[k] = std::abs(z) > limit;
    box[k] = sigmoid(clamped[k] ? (z > 0 ? limit : -limit) : z);
  }
  if (cache != nullptr) {
    cache->input = reg;
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
    cache->box = box;
    cache->clamped = clamped;
  }
  return box;
}

template <typename T>
Mat<T> head_backward(const std::array<T, 4>& d_box, const HeadCache<T>& c, const ParamSet<T>& ps, const HeadIds& ids,
                     std::span<T> grads) {
  Mat<T> dlogits(1, 4);
  for (int i = 0; i < 4; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const T s = c.box[k];
    dlogits(0, i) = c.clamped[k] ? T(0) : d_box[k] * s * (T(1) - s);
  }
  const Mat<T> dhidden = ops::linear_backward(c.hidden, dlogits, ps, ids.out, grads);
  const Mat<T> dpre = ops::relu_backward(c.hidden_pre, dhidden);
  return ops::linear_backward(c.input, dpre, ps, ids.hidden, grads);
}

template <typename T>
BoundingBox to_box(const std::array<T, 4>& v) {
  return {static_cast<double>(v[0]), static_cast<double>(v[1]), static_cast<double>(v[2]), static_cast<double>(v[3])};
}

template <typename T>
BoundingBox predict_box(const Mat<T>& reg_embedding, const ParamSet<T>& ps, const HeadIds& ids) {
  return to_box(head_forward<T>(reg_embedding, ps, ids, nullptr));
}

}  // namespace swimvg
