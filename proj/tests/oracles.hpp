#pragma once

#include <algorithm>

#include "swimvg/head.hpp"
#include "swimvg/tensor.hpp"

namespace swimvg::testing {

struct PixelOverlap {
  double iou = 0;
  double giou = 0;
};

// Monte-Carlo estimate over a res x res pixel grid laid on the enclosing box,
// one jittered sample per pixel.
inline PixelOverlap pixel_overlap(const Corners& a, const Corners& b, Rng& rng, int res = 512) {
  const double x0 = std::min(a.x1, b.x1), x1 = std::max(a.x2, b.x2);
  const double y0 = std::min(a.y1, b.y1), y1 = std::max(a.y2, b.y2);
  const double dx = (x1 - x0) / res;
  const double dy = (y1 - y0) / res;
  long in_a = 0, in_b = 0, both = 0;
  for (int j = 0; j < res; ++j) {
    for (int i = 0; i < res; ++i) {
      const double x = x0 + (i + rng.uniform()) * dx;
      const double y = y0 + (j + rng.uniform()) * dy;
      const bool ia = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
      const bool ib = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
      in_a += ia;
      in_b += ib;
      both += ia && ib;
    }
  }
  const double total = static_cast<double>(res) * res;
  const double uni = static_cast<double>(in_a + in_b - both);
  PixelOverlap o;
  o.iou = uni > 0 ? static_cast<double>(both) / uni : 0.0;
  o.giou = o.iou - (total - uni) / total;
  return o;
}

}  // namespace swimvg::testing
