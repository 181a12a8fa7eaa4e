#pragma once

// Greedy non-maximum suppression over detection bounding boxes.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cpn/efd.hpp"
#include "cpn/geometry.hpp"

namespace cpn {

struct Detection {
  double score = 0.0;
  FourierDescriptor descriptor;
  Polyline contour;
  Box box;
};

// Keeps the highest-scoring remaining detection and discards every
// remaining one whose box IoU with it strictly exceeds the threshold.
// Score ties resolve toward the earlier list index (extraction emits
// row-major grid order), making the result permutation-independent given
// that rule. Returns kept indices in descending score order.
inline std::vector<std::size_t> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw std::invalid_argument("nms: iou_threshold must lie in (0,1]");
  for (const Detection& d : dets)
    if (!std::isfinite(d.score)) throw numerical_error("nms: non-finite score");

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&dets](std::size_t i, std::size_t j) {
    return dets[i].score > dets[j].score;
  });

  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : kept)
      if (iou_box(dets[idx].box, dets[k].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

}  // namespace cpn
