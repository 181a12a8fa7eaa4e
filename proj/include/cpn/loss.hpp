#pragma once

// Training objectives, combined per grid pixel:
//
//   total = detection_loss(o)  +  mean over positive pixels of
//           [ contour_loss + refine_loss + lambda * repr_loss ]
//
// detection_loss averages over all grid pixels; the masked terms exist
// only where o = 1. Every term is differentiable through the autodiff
// graph; coordinate errors use the L1 form 0.5 * (|dx| + |dy|).

#include <cmath>
#include <string>
#include <vector>

#include "cpn/efd.hpp"
#include "cpn/ops.hpp"
#include "cpn/refine.hpp"
#include "cpn/tensor.hpp"

namespace cpn {

struct LossWeights {
  double lambda = 1.0;
  // beta[n] weights harmonic n in repr_loss; beta[0] applies to the
  // offsets a_0, c_0. Empty means the default beta_n = 2^-n at the
  // configured order.
  std::vector<double> beta;
};

inline std::vector<double> default_beta(std::size_t order) {
  std::vector<double> beta(order + 1);
  for (std::size_t n = 0; n <= order; ++n) beta[n] = std::pow(2.0, -static_cast<double>(n));
  return beta;
}

inline double coord_loss(double x, double y, double x_ref, double y_ref) {
  return 0.5 * (std::fabs(x - x_ref) + std::fabs(y - y_ref));
}

inline Tensor detection_loss(const Tensor& score_logits, const std::vector<double>& objectness) {
  return bce_with_logits(score_logits, objectness);
}

namespace detail {

inline std::size_t descriptor_order_of(const Tensor& predicted, const char* op) {
  if (predicted.size() < 6 || (predicted.size() - 2) % 4 != 0)
    throw std::invalid_argument(std::string(op) + ": predicted tensor length " +
                                std::to_string(predicted.size()) + " is not 4N+2");
  return (predicted.size() - 2) / 4;
}

inline Tensor constant_points(const Polyline& pts) {
  std::vector<double> flat(pts.size() * 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    flat[i * 2 + 0] = pts[i][0];
    flat[i * 2 + 1] = pts[i][1];
  }
  return Tensor::from_values({pts.size(), 2}, std::move(flat));
}

inline Tensor mean_coord_loss(const Tensor& pred_points, const Polyline& target_points) {
  const Tensor diff = sub(pred_points, constant_points(target_points));
  return scale(sum(abs(diff)), 0.5 / static_cast<double>(target_points.size()));
}

}  // namespace detail

// Mean coordinate loss between target and predicted contours sampled at
// the same positions; gradients flow into the predicted coefficients.
inline Tensor contour_loss(const FourierDescriptor& target, const Tensor& predicted,
                           const std::vector<double>& ts) {
  const std::size_t order = detail::descriptor_order_of(predicted, "contour_loss");
  if (order != target.order)
    throw std::invalid_argument("contour_loss: descriptor orders disagree");
  const Polyline target_points = sample_contour(target, ts);
  return detail::mean_coord_loss(efd_sample(predicted, ts), target_points);
}

// Contour loss after refining each predicted coordinate through the
// residual field. The predicted coordinates enter as constants, so the
// gradient reaches the field alone.
inline Tensor refine_loss(const FourierDescriptor& target, const Tensor& predicted,
                          const Tensor& field, const std::vector<double>& ts, int iterations,
                          double sigma) {
  const std::size_t order = detail::descriptor_order_of(predicted, "refine_loss");
  if (order != target.order)
    throw std::invalid_argument("refine_loss: descriptor orders disagree");
  check_finite(predicted, "refine_loss");
  const FourierDescriptor pred_desc = FourierDescriptor::from_flat(order, predicted.values());
  const Polyline pred_points = sample_contour(pred_desc, ts);
  const Polyline target_points = sample_contour(target, ts);
  return detail::mean_coord_loss(refine_coords(pred_points, field, iterations, sigma),
                                 target_points);
}

// Sum of beta-weighted absolute coefficient errors; beta[0] weights the
// offsets a_0 and c_0, harmonics use beta[1..N] for all four families.
inline Tensor repr_loss(const FourierDescriptor& target, const Tensor& predicted,
                        const std::vector<double>& beta) {
  const std::size_t order = detail::descriptor_order_of(predicted, "repr_loss");
  if (order != target.order)
    throw std::invalid_argument("repr_loss: descriptor orders disagree");
  if (beta.size() != order + 1)
    throw std::invalid_argument("repr_loss: beta length " + std::to_string(beta.size()) +
                                ", expected " + std::to_string(order + 1));
  for (double b : beta)
    if (!(b >= 0.0)) throw std::invalid_argument("repr_loss: beta entries must be >= 0");

  std::vector<double> weights(descriptor_dim(order));
  for (std::size_t n = 0; n <= order; ++n) {
    weights[n] = beta[n];                  // a_n
    weights[2 * order + 1 + n] = beta[n];  // c_n
  }
  for (std::size_t n = 1; n <= order; ++n) {
    weights[order + n] = beta[n];          // b_n
    weights[3 * order + 1 + n] = beta[n];  // d_n
  }
  const Tensor diff = abs(sub(predicted, Tensor::from_values(predicted.shape(), target.flat())));
  return sum(mul(diff, Tensor::from_values(predicted.shape(), std::move(weights))));
}

// One positive grid cell: its row/col and the canonical target descriptor
// (absolute coordinates, offsets included).
struct CellTarget {
  std::size_t row = 0, col = 0;
  FourierDescriptor desc;
};

// Full training objective over one image's prediction grids.
//   logits       (1, h2, w2)   classification head output
//   shape_grid   (4N, h2, w2)  shape head output (absolute coefficients)
//   offset_grid  (2, h2, w2)   location head output (cell-relative, in
//                              units of the stride)
//   field        (2, H, W)     refinement head output
//   objectness   h2*w2 row-major 0/1 targets
//   cells        one entry per positive pixel
inline Tensor cpn_loss(const Tensor& logits, const Tensor& shape_grid, const Tensor& offset_grid,
                       const Tensor& field, const std::vector<double>& objectness,
                       const std::vector<CellTarget>& cells, const LossWeights& weights,
                       const std::vector<double>& ts, std::size_t stride, int iterations,
                       double sigma) {
  check_rank(logits, 3, "cpn_loss");
  check_rank(shape_grid, 3, "cpn_loss");
  check_rank(offset_grid, 3, "cpn_loss");
  if (logits.dim(0) != 1) throw std::invalid_argument("cpn_loss: logits must have one channel");
  const std::size_t h2 = logits.dim(1), w2 = logits.dim(2);
  if (shape_grid.dim(1) != h2 || shape_grid.dim(2) != w2 || offset_grid.dim(1) != h2 ||
      offset_grid.dim(2) != w2)
    throw std::invalid_argument("cpn_loss: prediction grids are not aligned");
  if (offset_grid.dim(0) != 2)
    throw std::invalid_argument("cpn_loss: offset grid must have 2 channels");
  if (shape_grid.dim(0) < 4 || shape_grid.dim(0) % 4 != 0)
    throw std::invalid_argument("cpn_loss: shape grid must have 4N channels");
  if (objectness.size() != h2 * w2)
    throw std::invalid_argument("cpn_loss: objectness size does not match the grid");
  if (stride == 0) throw std::invalid_argument("cpn_loss: stride must be positive");
  if (!(weights.lambda >= 0.0)) throw std::invalid_argument("cpn_loss: lambda must be >= 0");

  const std::size_t order = shape_grid.dim(0) / 4;
  std::size_t positives = 0;
  for (double o : objectness) positives += o == 1.0 ? 1 : 0;
  if (positives != cells.size())
    throw std::invalid_argument("cpn_loss: " + std::to_string(cells.size()) +
                                " cell targets for " + std::to_string(positives) +
                                " positive pixels");

  const Tensor inst = detection_loss(logits, objectness);
  if (cells.empty()) return inst;

  const std::vector<double> beta = weights.beta.empty() ? default_beta(order) : weights.beta;
  Tensor masked;
  bool first = true;
  for (const CellTarget& cell : cells) {
    if (cell.row >= h2 || cell.col >= w2)
      throw std::invalid_argument("cpn_loss: cell target outside the grid");
    if (objectness[cell.row * w2 + cell.col] != 1.0)
      throw std::invalid_argument("cpn_loss: cell target on a non-positive pixel");
    if (cell.desc.order != order)
      throw std::invalid_argument("cpn_loss: cell descriptor order does not match the shape grid");

    const double center_x = (static_cast<double>(cell.col) + 0.5) * static_cast<double>(stride);
    const double center_y = (static_cast<double>(cell.row) + 0.5) * static_cast<double>(stride);
    const Tensor rel_off = gather_pixels(offset_grid, {{cell.row, cell.col}});
    const Tensor abs_off = add(scale(rel_off, static_cast<double>(stride)),
                               Tensor::from_values({1, 2}, {center_x, center_y}));
    const Tensor coeffs = gather_pixels(shape_grid, {{cell.row, cell.col}});
    const Tensor desc = assemble_descriptor(abs_off, coeffs);

    Tensor cell_loss = add(contour_loss(cell.desc, desc, ts),
                           refine_loss(cell.desc, desc, field, ts, iterations, sigma));
    cell_loss = add(cell_loss, scale(repr_loss(cell.desc, desc, beta), weights.lambda));
    masked = first ? cell_loss : add(masked, cell_loss);
    first = false;
  }
  return add(inst, scale(masked, 1.0 / static_cast<double>(cells.size())));
}

}  // namespace cpn
