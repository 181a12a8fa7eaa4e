#pragma once

// Pixel-domain geometry: bounding boxes, polygon rasterization, IoU.
//
// Inside test (shared by the rasterizer and the point query): nonzero
// winding accumulated from scanline crossings. For the horizontal ray
// through py, an edge A->B contributes
//   +1 if A.y <= py < B.y   (upward crossing)
//   -1 if B.y <= py < A.y   (downward crossing)
// at crossing abscissa
//   x_cross = A.x + (py - A.y) * (B.x - A.x) / (B.y - A.y)
// and the point (px, py) counts crossings with x_cross <= px. The
// half-open vertical spans and the inclusive comparison give every
// boundary point one deterministic owner (top/left edges included).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cpn/efd.hpp"
#include "cpn/errors.hpp"

namespace cpn {

struct Box {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
};

inline Box bbox_of(const Polyline& p) {
  if (p.empty()) throw std::invalid_argument("bbox_of: empty polyline");
  Box box{p[0][0], p[0][1], p[0][0], p[0][1]};
  for (const Point& pt : p) {
    box.x_min = std::min(box.x_min, pt[0]);
    box.y_min = std::min(box.y_min, pt[1]);
    box.x_max = std::max(box.x_max, pt[0]);
    box.y_max = std::max(box.y_max, pt[1]);
  }
  return box;
}

inline double iou_box(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bits;

  static Mask zeros(std::size_t height, std::size_t width) {
    return Mask{height, width, std::vector<std::uint8_t>(height * width, 0)};
  }
  bool at(std::size_t row, std::size_t col) const { return bits[row * width + col] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (std::uint8_t b : bits) n += b != 0;
    return n;
  }
};

inline int winding_number(const Polyline& p, double px, double py) {
  int winding = 0;
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = p[i];
    const Point& b = p[(i + 1) % n];
    if (a[1] <= py && py < b[1]) {
      const double x_cross = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
      if (x_cross <= px) ++winding;
    } else if (b[1] <= py && py < a[1]) {
      const double x_cross = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
      if (x_cross <= px) --winding;
    }
  }
  return winding;
}

inline bool point_inside(const Polyline& p, double px, double py) {
  return winding_number(p, px, py) != 0;
}

// Scanline fill over pixel centers (j + 0.5, i + 0.5). Degenerate input
// (under 3 vertices, zero area) yields an empty mask rather than an error;
// polygon parts outside the image are clipped by the pixel sweep itself.
inline Mask rasterize(const Polyline& p, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("rasterize: empty raster dims");
  Mask mask = Mask::zeros(height, width);
  if (p.size() < 3) return mask;

  std::vector<std::pair<double, int>> crossings;
  const std::size_t n = p.size();
  for (std::size_t row = 0; row < height; ++row) {
    const double py = static_cast<double>(row) + 0.5;
    crossings.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& a = p[i];
      const Point& b = p[(i + 1) % n];
      if (a[1] <= py && py < b[1]) {
        crossings.emplace_back(a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]), +1);
      } else if (b[1] <= py && py < a[1]) {
        crossings.emplace_back(a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]), -1);
      }
    }
    if (crossings.empty()) continue;
    std::sort(crossings.begin(), crossings.end());
    std::size_t next = 0;
    int winding = 0;
    for (std::size_t col = 0; col < width; ++col) {
      const double px = static_cast<double>(col) + 0.5;
      while (next < crossings.size() && crossings[next].first <= px)
        winding += crossings[next++].second;
      mask.bits[row * width + col] = winding != 0 ? 1 : 0;
    }
  }
  return mask;
}

inline double iou_mask(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("iou_mask: dimension mismatch " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width));
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool av = a.bits[i] != 0, bv = b.bits[i] != 0;
    inter += av && bv;
    uni += av || bv;
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace cpn
