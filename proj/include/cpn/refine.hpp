#pragma once

// Iterative local refinement of contour coordinates through a learned
// 2-channel residual field. One iteration of the update, applied to both
// axes simultaneously from the pre-update position:
//
//   (x, y) <- (round(x), round(y)) + sigma * tanh(v[round(y), round(x)])
//
// round(.) is round-half-to-even; the rounded lookup indices are clamped
// to the field, the rounded base coordinate itself is not. Because the
// rounded positions have zero derivative almost everywhere, gradients
// reach the field only through the tanh of the final iteration's lookup,
// never the coordinates that produced the lookup position.

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cpn/efd.hpp"
#include "cpn/tensor.hpp"

namespace cpn {

inline double round_half_even(double v) {
  const double fl = std::floor(v);
  const double frac = v - fl;
  if (frac > 0.5) return fl + 1.0;
  if (frac < 0.5) return fl;
  return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

struct ResidualField {
  std::size_t height = 0, width = 0;
  std::vector<double> v;  // height*width*2, interleaved (dx, dy) per pixel

  static ResidualField zeros(std::size_t height, std::size_t width) {
    return ResidualField{height, width, std::vector<double>(height * width * 2, 0.0)};
  }
  // From a planar (2, H, W) tensor, channel 0 = x residuals.
  static ResidualField from_tensor(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 2)
      throw std::invalid_argument("ResidualField: expected a (2,H,W) tensor, got " + shape_str(t.shape()));
    ResidualField f = zeros(t.dim(1), t.dim(2));
    const std::size_t plane = f.height * f.width;
    for (std::size_t i = 0; i < plane; ++i) {
      f.v[i * 2 + 0] = t[i];
      f.v[i * 2 + 1] = t[plane + i];
    }
    return f;
  }
  double at(std::size_t row, std::size_t col, std::size_t channel) const {
    return v[(row * width + col) * 2 + channel];
  }
};

namespace detail {

inline std::size_t clamp_index(double rounded, std::size_t extent) {
  if (!(rounded > 0.0)) return 0;
  const double last = static_cast<double>(extent - 1);
  if (rounded >= last) return extent - 1;
  return static_cast<std::size_t>(rounded);
}

// Shared iteration core so the plain and the differentiable entry points
// stay numerically identical. `lookup(row, col, channel)` reads the field;
// the final iteration's lookup site and tanh values are reported for the
// backward pass.
template <class Lookup>
inline std::array<double, 2> refine_iterate(double x, double y, std::size_t width,
                                            std::size_t height, int iterations, double sigma,
                                            Lookup&& lookup, std::size_t* last_row = nullptr,
                                            std::size_t* last_col = nullptr,
                                            double* last_tanh_x = nullptr,
                                            double* last_tanh_y = nullptr) {
  double rx = x, ry = y;
  for (int k = 0; k < iterations; ++k) {
    const double bx = round_half_even(rx);
    const double by = round_half_even(ry);
    const std::size_t col = clamp_index(bx, width);
    const std::size_t row = clamp_index(by, height);
    const double tx = std::tanh(lookup(row, col, 0));
    const double ty = std::tanh(lookup(row, col, 1));
    rx = bx + sigma * tx;
    ry = by + sigma * ty;
    if (k + 1 == iterations) {
      if (last_row) *last_row = row;
      if (last_col) *last_col = col;
      if (last_tanh_x) *last_tanh_x = tx;
      if (last_tanh_y) *last_tanh_y = ty;
    }
  }
  return {rx, ry};
}

inline void check_refine_args(int iterations, double sigma) {
  if (iterations < 0) throw std::invalid_argument("refine: iterations must be >= 0");
  if (!(sigma > 0.0)) throw std::invalid_argument("refine: sigma must be positive");
}

}  // namespace detail

inline std::array<double, 2> refine(double x, double y, const ResidualField& field,
                                    int iterations, double sigma) {
  detail::check_refine_args(iterations, sigma);
  if (field.height == 0 || field.width == 0)
    throw std::invalid_argument("refine: empty residual field");
  if (!std::isfinite(x) || !std::isfinite(y))
    throw numerical_error("refine: non-finite coordinate");
  return detail::refine_iterate(x, y, field.width, field.height, iterations, sigma,
                                [&field](std::size_t row, std::size_t col, std::size_t ch) {
                                  return field.at(row, col, ch);
                                });
}

// Differentiable variant over a planar (2,H,W) field tensor. The input
// coordinates are constants; only the field receives gradients, and only
// at each point's final lookup site.
inline Tensor refine_coords(const Polyline& coords, const Tensor& field, int iterations,
                            double sigma) {
  detail::check_refine_args(iterations, sigma);
  if (field.rank() != 3 || field.dim(0) != 2)
    throw std::invalid_argument("refine_coords: expected a (2,H,W) field tensor, got " +
                                shape_str(field.shape()));
  if (coords.empty()) throw std::invalid_argument("refine_coords: empty coordinate list");
  check_finite(field, "refine_coords");
  const std::size_t h = field.dim(1), w = field.dim(2);
  const std::size_t plane = h * w;
  const std::size_t count = coords.size();

  std::vector<double> out(count * 2);
  std::vector<std::size_t> site(count, 0);
  std::vector<double> tanh_x(count, 0.0), tanh_y(count, 0.0);
  for (std::size_t s = 0; s < count; ++s) {
    if (!std::isfinite(coords[s][0]) || !std::isfinite(coords[s][1]))
      throw numerical_error("refine_coords: non-finite coordinate");
    std::size_t row = 0, col = 0;
    const auto r = detail::refine_iterate(
        coords[s][0], coords[s][1], w, h, iterations, sigma,
        [&field, plane, w](std::size_t rr, std::size_t cc, std::size_t ch) {
          return field[ch * plane + rr * w + cc];
        },
        &row, &col, &tanh_x[s], &tanh_y[s]);
    out[s * 2 + 0] = r[0];
    out[s * 2 + 1] = r[1];
    site[s] = row * w + col;
  }

  const bool touches_field = iterations > 0;
  return make_op({count, 2}, std::move(out), {field},
                 [count, plane, sigma, touches_field, site = std::move(site),
                  tanh_x = std::move(tanh_x), tanh_y = std::move(tanh_y)](TensorNode& self) {
    if (!touches_field) return;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t s = 0; s < count; ++s) {
      g[site[s]] += self.grad[s * 2 + 0] * sigma * (1.0 - tanh_x[s] * tanh_x[s]);
      g[plane + site[s]] += self.grad[s * 2 + 1] * sigma * (1.0 - tanh_y[s] * tanh_y[s]);
    }
  });
}

}  // namespace cpn
