#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "support.hpp"
#include "swimvg/head.hpp"

namespace swimvg {
namespace {

using testing::pixel_overlap;
using testing::rel_error;

BoundingBox random_box(Rng& rng) {
  return {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)};
}

// No two corner coordinates on the same axis closer than gap, and no equal components.
bool clear_of_ties(const BoundingBox& a, const BoundingBox& b, double gap) {
  const Corners p = to_corners(a);
  const Corners g = to_corners(b);
  const double xs[] = {p.x1, p.x2, g.x1, g.x2};
  const double ys[] = {p.y1, p.y2, g.y1, g.y2};
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      if (std::abs(xs[i] - xs[j]) < gap || std::abs(ys[i] - ys[j]) < gap) {
        return false;
      }
    }
  }
  return std::abs(a.cx - b.cx) > gap && std::abs(a.cy - b.cy) > gap && std::abs(a.w - b.w) > gap &&
         std::abs(a.h - b.h) > gap;
}

TEST(Giou, IdenticalBoxesGiveOne) {
  const Corners a{0.1, 0.2, 0.6, 0.9};
  EXPECT_DOUBLE_EQ(giou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
}

TEST(Giou, HandGeometry) {
  EXPECT_NEAR(giou(Corners{0, 0, 1, 1}, Corners{2, 0, 3, 1}), -1.0 / 3.0, 1e-12);
  EXPECT_NEAR(giou(Corners{0, 0, 1, 1}, Corners{1, 0, 2, 1}), 0.0, 1e-12);
  // Pixel oracle agrees on both.
  Rng rng(30);
  EXPECT_NEAR(pixel_overlap(Corners{0, 0, 1, 1}, Corners{2, 0, 3, 1}, rng).giou, -1.0 / 3.0, 2e-3);
  EXPECT_NEAR(pixel_overlap(Corners{0, 0, 1, 1}, Corners{1, 0, 2, 1}, rng).giou, 0.0, 2e-3);
}

TEST(Giou, MatchesPixelOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const Corners a = to_corners(random_box(rng));
    const Corners b = to_corners(random_box(rng));
    const auto o = pixel_overlap(a, b, rng);
    EXPECT_NEAR(giou(a, b), o.giou, 2e-3);
    EXPECT_NEAR(iou(a, b), o.iou, 2e-3);
  }
}

TEST(Giou, SymmetricBoundedByIouAndScaleInvariant) {
  Rng rng(32);
  for (int trial = 0; trial < 1000; ++trial) {
    const Corners a = to_corners(random_box(rng));
    const Corners b = to_corners(random_box(rng));
    const double g = giou(a, b);
    EXPECT_EQ(g, giou(b, a));
    EXPECT_LE(g, iou(a, b));
    EXPECT_GE(g, -1.0);
    const double k = rng.uniform(0.1, 10.0);
    const Corners ka{a.x1 * k, a.y1 * k, a.x2 * k, a.y2 * k};
    const Corners kb{b.x1 * k, b.y1 * k, b.x2 * k, b.y2 * k};
    EXPECT_NEAR(giou(ka, kb), g, 1e-9);
    EXPECT_NEAR(iou(ka, kb), iou(a, b), 1e-9);
  }
}

TEST(Giou, EqualsIouWhenEnclosingIsTheUnion) {
  const Corners outer{0, 0, 1, 1};
  const Corners inner{0.2, 0.3, 0.5, 0.9};
  EXPECT_DOUBLE_EQ(giou(outer, inner), iou(outer, inner));
  EXPECT_LT(giou(Corners{0, 0, 1, 1}, Corners{0.5, 0.5, 1.5, 1.5}), iou(Corners{0, 0, 1, 1}, Corners{0.5, 0.5, 1.5, 1.5}));
}

TEST(Giou, DegenerateBoxIsRejected) {
  for (const Corners& bad : {Corners{0, 0, 0, 1}, Corners{0, 0, 1, -1}, Corners{0, 0, NAN, 1}}) {
    try {
      giou(bad, Corners{0, 0, 1, 1});
      FAIL() << "expected DegenerateBox";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::DegenerateBox);
    }
  }
  EXPECT_THROW(grounding_loss(BoundingBox{0.5, 0.5, 0.0, 0.2}, BoundingBox{}, 1, 1), Error);
}

TEST(Loss, PerfectPredictionIsZero) {
  const BoundingBox b{0.3, 0.6, 0.2, 0.4};
  const auto loss = grounding_loss(b, b, 5.0, 2.0);
  EXPECT_DOUBLE_EQ(loss.l1, 0.0);
  EXPECT_DOUBLE_EQ(loss.giou_loss, 0.0);
  EXPECT_DOUBLE_EQ(loss.total, 0.0);
}

TEST(Loss, ZeroL1WeightLeavesOnlyGiou) {
  Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_box(rng);
    const auto g = random_box(rng);
    EXPECT_NEAR(grounding_loss(p, g, 0.0, 2.0).total, 2.0 * (1.0 - giou(p, g)), 1e-12);
  }
}

TEST(Loss, DirectEvaluationOracle) {
  // Corners (0.25,0.25,0.75,0.75) and (0.125,0.125,0.375,0.375):
  // intersection 0.125^2, union 0.25 + 0.0625 - 0.015625, enclosing 0.625^2.
  const double inter = 0.015625;
  const double uni = 0.25 + 0.0625 - inter;
  const double encl = 0.390625;
  const double g = inter / uni - (encl - uni) / encl;
  const double l1 = 0.25;
  const auto loss = grounding_loss(BoundingBox{0.5, 0.5, 0.5, 0.5}, BoundingBox{0.25, 0.25, 0.25, 0.25}, 1.0, 1.0);
  EXPECT_NEAR(loss.l1, l1, 1e-12);
  EXPECT_NEAR(loss.giou_loss, 1.0 - g, 1e-12);
  EXPECT_NEAR(loss.total, 1.4373684210526316, 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(34);
  int checked = 0;
  while (checked < 200) {
    BoundingBox p = random_box(rng);
    const BoundingBox g = random_box(rng);
    if (!clear_of_ties(p, g, 1e-3)) {
      continue;
    }
    std::array<double, 4> d{};
    grounding_loss_grad(p, g, 5.0, 2.0, d);
    double* fields[] = {&p.cx, &p.cy, &p.w, &p.h};
    for (int i = 0; i < 4; ++i) {
      const double numeric = testing::central_diff(*fields[i], [&] { return grounding_loss(p, g, 5.0, 2.0).total; });
      EXPECT_LT(rel_error(d[static_cast<std::size_t>(i)], numeric), 1e-4);
    }
    ++checked;
  }
}

struct HeadFixture {
  ParamSet<double> ps;
  HeadIds ids;

  HeadFixture(Index cv, Index hidden) {
    ids.hidden = {ps.add("hidden.w", cv, hidden, ParamGroup::Head, Trainability::Tunable),
                  ps.add("hidden.b", 1, hidden, ParamGroup::Head, Trainability::Tunable)};
    ids.out = {ps.add("out.w", hidden, 4, ParamGroup::Head, Trainability::Tunable),
               ps.add("out.b", 1, 4, ParamGroup::Head, Trainability::Tunable)};
  }
};

TEST(Head, ZeroEverythingGivesCenteredHalfBox) {
  HeadFixture f(6, 5);
  const Mat<double> reg = Mat<double>::Zero(1, 6);
  EXPECT_EQ(predict_box(reg, f.ps, f.ids), (BoundingBox{0.5, 0.5, 0.5, 0.5}));
}

TEST(Head, OutputsStayInsideUnitInterval) {
  Rng rng(35);
  HeadFixture f(6, 5);
  for (auto& v : f.ps.values()) {
    v = rng.normal(0.0, 3.0);
  }
  for (int trial = 0; trial < 200; ++trial) {
    const auto box = head_forward<double>(testing::random_mat(rng, 1, 6, 2.0), f.ps, f.ids, nullptr);
    for (double v : box) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Head, MatchesHandComputedMlp) {
  HeadFixture f(2, 3);
  f.ps[f.ids.hidden.weight] << 1, -1, 0.5, 2, 0, -1;
  f.ps[*f.ids.hidden.bias] << 0.1, 0.2, -0.3;
  f.ps[f.ids.out.weight] << 1, 0, -1, 0.5, 0, 1, 2, -0.5, -1, 0.25, 0, 1;
  f.ps[*f.ids.out.bias] << 0, 0.1, -0.2, 0.3;
  Mat<double> reg(1, 2);
  reg << 0.5, 0.25;
  // hidden pre (1.1, -0.3, -0.3), relu -> (1.1, 0, 0); logits (1.1, 0.1, -1.3, 0.85)
  const std::array<double, 4> logits{1.1, 0.1, -1.3, 0.85};
  const auto box = head_forward<double>(reg, f.ps, f.ids, nullptr);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(box[i], 1.0 / (1.0 + std::exp(-logits[i])), 1e-12);
  }
}

TEST(Head, WrongRowCountIsShapeMismatch) {
  HeadFixture f(2, 3);
  EXPECT_THROW(head_forward<double>(Mat<double>::Zero(2, 2), f.ps, f.ids, nullptr), Error);
}

TEST(Head, BackwardMatchesFiniteDifferences) {
  Rng rng(36);
  HeadFixture f(5, 4);
  for (auto& v : f.ps.values()) {
    v = rng.normal(0.0, 0.7);
  }
  Mat<double> reg = testing::random_mat(rng, 1, 5);
  const std::array<double, 4> probe{0.3, -1.2, 0.8, 0.5};
  auto loss = [&] {
    const auto b = head_forward<double>(reg, f.ps, f.ids, nullptr);
    return probe[0] * b[0] + probe[1] * b[1] + probe[2] * b[2] + probe[3] * b[3];
  };
  HeadCache<double> cache;
  head_forward<double>(reg, f.ps, f.ids, &cache);
  std::vector<double> grads(f.ps.tunable_count(), 0.0);
  const Mat<double> dreg = head_backward<double>(probe, cache, f.ps, f.ids, grads);
  for (Index i = 0; i < reg.size(); ++i) {
    EXPECT_LT(rel_error(dreg.data()[i], testing::central_diff(reg.data()[i], loss)), 1e-6);
  }
  auto values = f.ps.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    EXPECT_LT(rel_error(grads[i], testing::central_diff(values[i], loss)), 1e-6);
  }
}

TEST(Precision, DirectCount) {
  // Left-aligned copies of gt with width scaled by r have IoU r.
  const BoundingBox gt{0.5, 0.5, 0.5, 0.5};
  std::vector<BoundingBox> preds;
  for (double r : {0.6, 0.4, 0.9}) {
    preds.push_back({0.25 + 0.25 * r, 0.5, 0.5 * r, 0.5});
  }
  const std::vector<BoundingBox> gts(3, gt);
  EXPECT_NEAR(iou(preds[0], gt), 0.6, 1e-12);
  EXPECT_NEAR(precision_at(preds, gts, 0.5), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(precision_at(gts, gts, 1.0), 1.0);
  const std::vector<BoundingBox> far(3, BoundingBox{0.1, 0.1, 0.1, 0.1});
  const std::vector<BoundingBox> near(3, BoundingBox{0.9, 0.9, 0.1, 0.1});
  EXPECT_DOUBLE_EQ(precision_at(far, near, 0.01), 0.0);
}

TEST(Precision, EmptyListAndLengthMismatch) {
  const std::vector<BoundingBox> none;
  const std::vector<BoundingBox> one(1);
  try {
    precision_at(none, none, 0.5);
    FAIL() << "expected EmptyList";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyList);
  }
  EXPECT_THROW(precision_at(one, none, 0.5), Error);
}

TEST(Precision, NonincreasingInThreshold) {
  Rng rng(37);
  std::vector<BoundingBox> preds;
  std::vector<BoundingBox> gts;
  for (int i = 0; i < 1000; ++i) {
    preds.push_back(random_box(rng));
    gts.push_back(random_box(rng));
  }
  double last = 1.0;
  for (double tau = 0.05; tau <= 1.0; tau += 0.05) {
    const double p = precision_at(preds, gts, tau);
    EXPECT_LE(p, last);
    last = p;
  }
}

}  // namespace
}  // namespace swimvg
