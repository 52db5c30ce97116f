#include "swimvg/head.hpp"

#include <algorithm>

namespace swimvg {

namespace {

void check_box(const Corners& c, const char* which) {
  if (!(c.x2 > c.x1) || !(c.y2 > c.y1)) {
    throw Error(ErrorKind::DegenerateBox, which, "box has non-positive width or height");
  }
}

struct Overlap {
  double inter = 0;
  double uni = 0;
  double enclosing = 0;
};

Overlap overlap(const Corners& a, const Corners& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  Overlap o;
  o.inter = iw * ih;
  o.uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - o.inter;
  o.enclosing = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) * (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  return o;
}

}  // namespace

double iou(const Corners& a, const Corners& b) {
  check_box(a, "a");
  check_box(b, "b");
  const auto o = overlap(a, b);
  return o.inter / o.uni;
}

double iou(const BoundingBox& a, const BoundingBox& b) { return iou(to_corners(a), to_corners(b)); }

double giou(const Corners& a, const Corners& b) {
  check_box(a, "a");
  check_box(b, "b");
  const auto o = overlap(a, b);
  return o.inter / o.uni - std::max(0.0, o.enclosing - o.uni) / o.enclosing;
}

double giou(const BoundingBox& a, const BoundingBox& b) { return giou(to_corners(a), to_corners(b)); }

LossBreakdown grounding_loss(const BoundingBox& pred, const BoundingBox& gt, double lambda_l1, double lambda_giou) {
  std::array<double, 4> unused{};
  return grounding_loss_grad(pred, gt, lambda_l1, lambda_giou, unused);
}

LossBreakdown grounding_loss_grad(const BoundingBox& pred, const BoundingBox& gt, double lambda_l1,
                                  double lambda_giou, std::array<double, 4>& d_pred) {
  const Corners p = to_corners(pred);
  const Corners g = to_corners(gt);
  check_box(p, "pred");
  check_box(g, "gt");

  LossBreakdown loss;
  const std::array<double, 4> pv{pred.cx, pred.cy, pred.w, pred.h};
  const std::array<double, 4> gv{gt.cx, gt.cy, gt.w, gt.h};
  std::array<double, 4> d_l1{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double diff = pv[i] - gv[i];
    loss.l1 += std::abs(diff) / 4.0;
    d_l1[i] = diff > 0 ? 0.25 : (diff < 0 ? -0.25 : 0.0);
  }

  // Intersection extents; ties resolved toward the prediction.
  const bool px2_min = p.x2 <= g.x2;
  const bool px1_max = p.x1 >= g.x1;
  const bool py2_min = p.y2 <= g.y2;
  const bool py1_max = p.y1 >= g.y1;
  const double iw_raw = (px2_min ? p.x2 : g.x2) - (px1_max ? p.x1 : g.x1);
  const double ih_raw = (py2_min ? p.y2 : g.y2) - (py1_max ? p.y1 : g.y1);
  const bool w_overlap = iw_raw > 0;
  const bool h_overlap = ih_raw > 0;
  const double iw = w_overlap ? iw_raw : 0.0;
  const double ih = h_overlap ? ih_raw : 0.0;
  const double inter = iw * ih;

  const double pw = p.x2 - p.x1;
  const double ph = p.y2 - p.y1;
  const double uni = pw * ph + (g.x2 - g.x1) * (g.y2 - g.y1) - inter;

  const bool px2_max = p.x2 >= g.x2;
  const bool px1_min = p.x1 <= g.x1;
  const bool py2_max = p.y2 >= g.y2;
  const bool py1_min = p.y1 <= g.y1;
  const double cw = (px2_max ? p.x2 : g.x2) - (px1_min ? p.x1 : g.x1);
  const double ch = (py2_max ? p.y2 : g.y2) - (py1_min ? p.y1 : g.y1);
  const double enclosing = cw * ch;

  const double g_iou = inter / uni - std::max(0.0, enclosing - uni) / enclosing;
  loss.giou_loss = 1.0 - g_iou;
  loss.total = lambda_l1 * loss.l1 + lambda_giou * loss.giou_loss;

  // Partials w.r.t. prediction corners, order (x1, y1, x2, y2).
  std::array<double, 4> d_inter{};
  if (w_overlap && h_overlap) {
    d_inter[0] = px1_max ? -ih : 0.0;
    d_inter[2] = px2_min ? ih : 0.0;
    d_inter[1] = py1_max ? -iw : 0.0;
    d_inter[3] = py2_min ? iw : 0.0;
  }
  const std::array<double, 4> d_area{-ph, -pw, ph, pw};
  const std::array<double, 4> d_encl{px1_min ? -ch : 0.0, py1_min ? -cw : 0.0, px2_max ? ch : 0.0,
                                     py2_max ? cw : 0.0};
  std::array<double, 4> d_giou_corner{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double d_uni = d_area[i] - d_inter[i];
    // giou = inter/uni - 1 + uni/enclosing
    d_giou_corner[i] = (d_inter[i] * uni - inter * d_uni) / (uni * uni) +
                       (d_uni * enclosing - uni * d_encl[i]) / (enclosing * enclosing);
  }
  // Corners -> center form: x1 = cx - w/2, x2 = cx + w/2.
  const std::array<double, 4> d_giou{
      d_giou_corner[0] + d_giou_corner[2],
      d_giou_corner[1] + d_giou_corner[3],
      0.5 * (d_giou_corner[2] - d_giou_corner[0]),
      0.5 * (d_giou_corner[3] - d_giou_corner[1]),
  };
  for (std::size_t i = 0; i < 4; ++i) {
    d_pred[i] = lambda_l1 * d_l1[i] - lambda_giou * d_giou[i];
  }
  return loss;
}

double precision_at(std::span<const BoundingBox> preds, std::span<const BoundingBox> gts, double tau) {
  if (preds.empty()) {
    throw Error(ErrorKind::EmptyList, "preds", "precision needs at least one prediction");
  }
  if (preds.size() != gts.size()) {
    throw Error(ErrorKind::ShapeMismatch, "gts", "prediction and ground-truth lists differ in length");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    hits += iou(preds[i], gts[i]) >= tau ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace swimvg
