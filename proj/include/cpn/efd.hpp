#pragma once

// Elliptic Fourier contour descriptors. A closed curve is represented by
// offsets (a_0, c_0) plus N harmonics, evaluated over one period T = 1:
//
//   x(t) = a_0 + sum_n a_n sin(2*pi*n*t) + b_n cos(2*pi*n*t)
//   y(t) = c_0 + sum_n c_n sin(2*pi*n*t) + d_n cos(2*pi*n*t)
//
// Flattened coefficient layout (length 4N+2):
//   [a_0..a_N, b_1..b_N, c_0..c_N, d_1..d_N]
//
// Fitting integrates the arc-length-parameterized polygon against each
// basis function in closed form per linear segment, which is exact for
// polygons at any vertex count.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cpn/ops.hpp"
#include "cpn/rng.hpp"
#include "cpn/tensor.hpp"

namespace cpn {

using Point = std::array<double, 2>;
using Polyline = std::vector<Point>;

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline std::size_t descriptor_dim(std::size_t order) {
  if (order < 1) throw std::invalid_argument("descriptor_dim: order must be >= 1");
  return 4 * order + 2;
}

struct FourierDescriptor {
  std::size_t order = 0;
  std::vector<double> a;  // a[0..N], a[0] is the x offset
  std::vector<double> b;  // b[0] holds b_1, ..., b[N-1] holds b_N
  std::vector<double> c;  // c[0..N], c[0] is the y offset
  std::vector<double> d;  // like b

  static FourierDescriptor zeros(std::size_t order) {
    if (order < 1) throw std::invalid_argument("FourierDescriptor: order must be >= 1");
    FourierDescriptor out;
    out.order = order;
    out.a.assign(order + 1, 0.0);
    out.b.assign(order, 0.0);
    out.c.assign(order + 1, 0.0);
    out.d.assign(order, 0.0);
    return out;
  }

  void validate() const {
    if (order < 1) throw std::invalid_argument("FourierDescriptor: order must be >= 1");
    if (a.size() != order + 1 || c.size() != order + 1 || b.size() != order || d.size() != order)
      throw std::invalid_argument("FourierDescriptor: coefficient lengths do not match order " +
                                  std::to_string(order));
    for (const auto* coeffs : {&a, &b, &c, &d})
      for (double v : *coeffs)
        if (!std::isfinite(v)) throw numerical_error("FourierDescriptor: non-finite coefficient");
  }

  std::vector<double> flat() const {
    validate();
    std::vector<double> out;
    out.reserve(descriptor_dim(order));
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    out.insert(out.end(), c.begin(), c.end());
    out.insert(out.end(), d.begin(), d.end());
    return out;
  }

  static FourierDescriptor from_flat(std::size_t order, const std::vector<double>& v) {
    if (v.size() != descriptor_dim(order))
      throw std::invalid_argument("FourierDescriptor: flat length " + std::to_string(v.size()) +
                                  " does not match order " + std::to_string(order));
    FourierDescriptor out = zeros(order);
    std::copy(v.begin(), v.begin() + order + 1, out.a.begin());
    std::copy(v.begin() + order + 1, v.begin() + 2 * order + 1, out.b.begin());
    std::copy(v.begin() + 2 * order + 1, v.begin() + 3 * order + 2, out.c.begin());
    std::copy(v.begin() + 3 * order + 2, v.end(), out.d.begin());
    return out;
  }
};

// Sampling positions must be nonempty, each within [0,1], strictly increasing.
inline void check_ts(const std::vector<double>& ts) {
  if (ts.empty()) throw std::invalid_argument("sampling positions: empty");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (!(ts[i] >= 0.0 && ts[i] <= 1.0))
      throw std::invalid_argument("sampling positions: t must lie in [0,1]");
    if (i > 0 && !(ts[i] > ts[i - 1]))
      throw std::invalid_argument("sampling positions: must be strictly increasing");
  }
}

inline std::vector<double> uniform_ts(std::size_t count) {
  if (count == 0) throw std::invalid_argument("uniform_ts: count must be positive");
  std::vector<double> ts(count);
  for (std::size_t s = 0; s < count; ++s) ts[s] = static_cast<double>(s) / static_cast<double>(count);
  return ts;
}

// Sorted uniform draws; redrawn wholesale in the (measure-zero) event of a
// duplicate so the strictly-increasing contract always holds.
inline std::vector<double> random_ts(std::size_t count, Rng& rng) {
  if (count == 0) throw std::invalid_argument("random_ts: count must be positive");
  std::vector<double> ts(count);
  for (;;) {
    for (auto& t : ts) t = rng.uniform01();
    std::sort(ts.begin(), ts.end());
    bool distinct = true;
    for (std::size_t i = 1; i < count; ++i)
      if (ts[i] == ts[i - 1]) { distinct = false; break; }
    if (distinct) return ts;
  }
}

inline Point eval_descriptor(const FourierDescriptor& desc, double t) {
  double x = desc.a[0], y = desc.c[0];
  for (std::size_t n = 1; n <= desc.order; ++n) {
    const double angle = kTwoPi * static_cast<double>(n) * t;
    const double s = std::sin(angle), co = std::cos(angle);
    x += desc.a[n] * s + desc.b[n - 1] * co;
    y += desc.c[n] * s + desc.d[n - 1] * co;
  }
  return {x, y};
}

inline Polyline sample_contour(const FourierDescriptor& desc, const std::vector<double>& ts) {
  desc.validate();
  check_ts(ts);
  Polyline out;
  out.reserve(ts.size());
  for (double t : ts) out.push_back(eval_descriptor(desc, t));
  return out;
}

inline double signed_area(const Polyline& p) {
  double twice = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point& u = p[i];
    const Point& v = p[(i + 1) % p.size()];
    twice += u[0] * v[1] - v[0] * u[1];
  }
  return 0.5 * twice;
}

inline double perimeter(const Polyline& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point& u = p[i];
    const Point& v = p[(i + 1) % p.size()];
    total += std::hypot(v[0] - u[0], v[1] - u[1]);
  }
  return total;
}

// Unique vertex ordering for supervision targets: consecutive duplicates
// (and a closing copy of the first vertex) dropped, orientation flipped to
// positive signed area, start rotated to the min-y (then min-x) vertex.
// The arc-length parameterization itself is applied by fit_descriptor.
inline Polyline canonicalize(const Polyline& p) {
  Polyline q;
  q.reserve(p.size());
  for (const Point& pt : p)
    if (q.empty() || pt != q.back()) q.push_back(pt);
  if (q.size() > 1 && q.front() == q.back()) q.pop_back();
  if (q.size() < 3) throw numerical_error("canonicalize: degenerate polygon (fewer than 3 distinct vertices)");

  const double area = signed_area(q);
  if (area == 0.0) throw numerical_error("canonicalize: zero-area polygon");
  if (area < 0.0) std::reverse(q.begin(), q.end());

  auto start = std::min_element(q.begin(), q.end(), [](const Point& u, const Point& v) {
    return u[1] != v[1] ? u[1] < v[1] : u[0] < v[0];
  });
  std::rotate(q.begin(), start, q.end());
  return q;
}

// Order-N truncated Fourier series of the arc-length-parameterized polygon.
// Per linear segment x(t) = alpha + m*t on [t0,t1] and omega = 2*pi*n:
//   integral x(t) sin(omega t) dt = [-(alpha + m t) cos(omega t)/omega + m sin(omega t)/omega^2]
//   integral x(t) cos(omega t) dt = [ (alpha + m t) sin(omega t)/omega + m cos(omega t)/omega^2]
// and the projections are a_n = 2 * integral x sin, b_n = 2 * integral x cos.
inline FourierDescriptor fit_descriptor(const Polyline& p, std::size_t order) {
  if (order < 1) throw std::invalid_argument("fit_descriptor: order must be >= 1");
  if (p.size() < 3) throw numerical_error("fit_descriptor: need at least 3 vertices");
  const std::size_t n = p.size();

  std::vector<double> t(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Point& u = p[i];
    const Point& v = p[(i + 1) % n];
    t[i + 1] = t[i] + std::hypot(v[0] - u[0], v[1] - u[1]);
  }
  const double total = t[n];
  if (!(total > 0.0)) throw numerical_error("fit_descriptor: zero-perimeter polygon");
  for (auto& ti : t) ti /= total;

  FourierDescriptor out = FourierDescriptor::zeros(order);

  for (std::size_t i = 0; i < n; ++i) {
    const double dt = t[i + 1] - t[i];
    if (dt == 0.0) continue;
    out.a[0] += dt * (p[i][0] + p[(i + 1) % n][0]) * 0.5;
    out.c[0] += dt * (p[i][1] + p[(i + 1) % n][1]) * 0.5;
  }

  for (std::size_t harm = 1; harm <= order; ++harm) {
    const double omega = kTwoPi * static_cast<double>(harm);
    const double inv_w = 1.0 / omega;
    const double inv_w2 = inv_w * inv_w;
    double ax = 0.0, bx = 0.0, cy = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t0 = t[i], t1 = t[i + 1];
      const double dt = t1 - t0;
      if (dt == 0.0) continue;
      const Point& u = p[i];
      const Point& v = p[(i + 1) % n];
      const double s0 = std::sin(omega * t0), c0 = std::cos(omega * t0);
      const double s1 = std::sin(omega * t1), c1 = std::cos(omega * t1);

      const double mx = (v[0] - u[0]) / dt;
      const double x0 = u[0], x1 = v[0];  // alpha + m*t at the endpoints
      ax += (-x1 * c1 + x0 * c0) * inv_w + mx * (s1 - s0) * inv_w2;
      bx += (x1 * s1 - x0 * s0) * inv_w + mx * (c1 - c0) * inv_w2;

      const double my = (v[1] - u[1]) / dt;
      const double y0 = u[1], y1 = v[1];
      cy += (-y1 * c1 + y0 * c0) * inv_w + my * (s1 - s0) * inv_w2;
      dy += (y1 * s1 - y0 * s0) * inv_w + my * (c1 - c0) * inv_w2;
    }
    out.a[harm] = 2.0 * ax;
    out.b[harm - 1] = 2.0 * bx;
    out.c[harm] = 2.0 * cy;
    out.d[harm - 1] = 2.0 * dy;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable bridges into the autodiff graph

// Samples a flattened descriptor tensor (length 4N+2, any shape) at the
// given positions -> (S, 2) coordinate tensor.
inline Tensor efd_sample(const Tensor& desc, const std::vector<double>& ts) {
  if (desc.size() < 6 || (desc.size() - 2) % 4 != 0)
    throw std::invalid_argument("efd_sample: descriptor length " + std::to_string(desc.size()) +
                                " is not 4N+2 for any N >= 1");
  check_finite(desc, "efd_sample");
  check_ts(ts);
  const std::size_t order = (desc.size() - 2) / 4;
  const std::size_t count = ts.size();
  // Flat layout offsets: a_n at n, b_n at order+n, c_n at 2*order+1+n,
  // d_n at 3*order+1+n.
  std::vector<double> out(count * 2);
  for (std::size_t s = 0; s < count; ++s) {
    double x = desc[0], y = desc[2 * order + 1];
    for (std::size_t nh = 1; nh <= order; ++nh) {
      const double angle = kTwoPi * static_cast<double>(nh) * ts[s];
      const double si = std::sin(angle), co = std::cos(angle);
      x += desc[nh] * si + desc[order + nh] * co;
      y += desc[2 * order + 1 + nh] * si + desc[3 * order + 1 + nh] * co;
    }
    out[s * 2 + 0] = x;
    out[s * 2 + 1] = y;
  }
  return make_op({count, 2}, std::move(out), {desc}, [order, ts](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t s = 0; s < ts.size(); ++s) {
      const double gx = self.grad[s * 2 + 0], gy = self.grad[s * 2 + 1];
      g[0] += gx;
      g[2 * order + 1] += gy;
      for (std::size_t nh = 1; nh <= order; ++nh) {
        const double angle = kTwoPi * static_cast<double>(nh) * ts[s];
        const double si = std::sin(angle), co = std::cos(angle);
        g[nh] += gx * si;
        g[order + nh] += gx * co;
        g[2 * order + 1 + nh] += gy * si;
        g[3 * order + 1 + nh] += gy * co;
      }
    }
  });
}

// Combines the location head's absolute offsets (a_0, c_0) with the shape
// head's 4N coefficients [a_1..a_N, b_1..b_N, c_1..c_N, d_1..d_N] into one
// flattened descriptor tensor of length 4N+2.
inline Tensor assemble_descriptor(const Tensor& offsets, const Tensor& shape_coeffs) {
  if (offsets.size() != 2)
    throw std::invalid_argument("assemble_descriptor: offsets must have 2 elements, got " +
                                std::to_string(offsets.size()));
  if (shape_coeffs.size() < 4 || shape_coeffs.size() % 4 != 0)
    throw std::invalid_argument("assemble_descriptor: shape coefficients must have 4N elements, got " +
                                std::to_string(shape_coeffs.size()));
  check_finite(offsets, "assemble_descriptor");
  check_finite(shape_coeffs, "assemble_descriptor");
  const std::size_t order = shape_coeffs.size() / 4;
  std::vector<double> out(descriptor_dim(order));
  out[0] = offsets[0];
  out[2 * order + 1] = offsets[1];
  for (std::size_t n = 1; n <= order; ++n) {
    out[n] = shape_coeffs[n - 1];                          // a_n
    out[order + n] = shape_coeffs[order + n - 1];          // b_n
    out[2 * order + 1 + n] = shape_coeffs[2 * order + n - 1];  // c_n
    out[3 * order + 1 + n] = shape_coeffs[3 * order + n - 1];  // d_n
  }
  return make_op({descriptor_dim(order)}, std::move(out), {offsets, shape_coeffs},
                 [order](TensorNode& self) {
    if (self.parents[0]->requires_grad) {
      auto& go = self.parents[0]->grad_buffer();
      go[0] += self.grad[0];
      go[1] += self.grad[2 * order + 1];
    }
    if (self.parents[1]->requires_grad) {
      auto& gs = self.parents[1]->grad_buffer();
      for (std::size_t n = 1; n <= order; ++n) {
        gs[n - 1] += self.grad[n];
        gs[order + n - 1] += self.grad[order + n];
        gs[2 * order + n - 1] += self.grad[2 * order + 1 + n];
        gs[3 * order + n - 1] += self.grad[3 * order + 1 + n];
      }
    }
  });
}

}  // namespace cpn
