#pragma once

// Differentiable operations on Tensor. Conventions used throughout:
//   - image tensors are (C, H, W), planar, row-major within a channel
//   - matrices are (rows, cols), row-major
//   - every op validates operand shapes (std::invalid_argument) and operand
//     finiteness (numerical_error), so a NaN surfaces where it first appears
//     instead of three modules later.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cpn/tensor.hpp"

namespace cpn {

inline void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values())
    if (!std::isfinite(v))
      throw numerical_error(std::string(op) + ": non-finite input value");
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void check_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(rank) + " tensor, got shape " +
                                shape_str(t.shape()));
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  check_finite(a, "add");
  check_finite(b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  check_finite(a, "sub");
  check_finite(b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  check_finite(a, "mul");
  check_finite(b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    const auto& av = self.parents[0]->values;
    const auto& bv = self.parents[1]->values;
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double factor) {
  check_finite(a, "scale");
  if (!std::isfinite(factor)) throw numerical_error("scale: non-finite factor");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_op(a.shape(), std::move(out), {a}, [factor](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities. abs uses subgradient 0 at the kink.

inline Tensor abs(const Tensor& a) {
  check_finite(a, "abs");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(a[i]);
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    const auto& x = self.parents[0]->values;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
      g[i] += self.grad[i] * s;
    }
  });
}

inline Tensor relu(const Tensor& a) {
  check_finite(a, "relu");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    const auto& x = self.parents[0]->values;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

inline Tensor sigmoid(const Tensor& a) {
  check_finite(a, "sigmoid");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = a[i];
    // Branch on sign to avoid exp overflow for large |z|.
    out[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                      : std::exp(z) / (1.0 + std::exp(z));
  }
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    const auto& y = self.values;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * y[i] * (1.0 - y[i]);
  });
}

inline Tensor tanh(const Tensor& a) {
  check_finite(a, "tanh");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    const auto& y = self.values;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * (1.0 - y[i] * y[i]);
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  check_finite(a, "sum");
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_op({1}, {total}, {a}, [](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& gi : g) gi += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  check_finite(a, "mean");
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double total = 0.0;
  for (double v : a.values()) total += v;
  const double inv_n = 1.0 / static_cast<double>(a.size());
  return make_op({1}, {total * inv_n}, {a}, [inv_n](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& gi : g) gi += self.grad[0] * inv_n;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dims disagree, " +
                                shape_str(a.shape()) + " x " + shape_str(b.shape()));
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
    const auto& av = self.parents[0]->values;
    const auto& bv = self.parents[1]->values;
    if (self.parents[0]->requires_grad) {
      auto& ga = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = self.grad[i * n + j];
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * bv[p * n + j];
        }
    }
    if (self.parents[1]->requires_grad) {
      auto& gb = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = self.grad[i * n + j];
          for (std::size_t p = 0; p < k; ++p) gb[p * n + j] += gv * av[i * k + p];
        }
    }
  });
}

// y = x * w^T + bias, with x (M,K), w (N,K), bias (N) -> (M,N).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  check_rank(x, 2, "linear");
  check_rank(w, 2, "linear");
  check_rank(bias, 1, "linear");
  if (x.dim(1) != w.dim(1))
    throw std::invalid_argument("linear: feature dims disagree, x " +
                                shape_str(x.shape()) + " vs w " + shape_str(w.shape()));
  if (bias.dim(0) != w.dim(0))
    throw std::invalid_argument("linear: bias length " + std::to_string(bias.dim(0)) +
                                " vs " + std::to_string(w.dim(0)) + " outputs");
  check_finite(x, "linear");
  check_finite(w, "linear");
  check_finite(bias, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = bias[j];
      for (std::size_t p = 0; p < k; ++p) acc += x[i * k + p] * w[j * k + p];
      out[i * n + j] = acc;
    }
  return make_op({m, n}, std::move(out), {x, w, bias}, [m, k, n](TensorNode& self) {
    const auto& xv = self.parents[0]->values;
    const auto& wv = self.parents[1]->values;
    if (self.parents[0]->requires_grad) {
      auto& gx = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = self.grad[i * n + j];
          for (std::size_t p = 0; p < k; ++p) gx[i * k + p] += gv * wv[j * k + p];
        }
    }
    if (self.parents[1]->requires_grad) {
      auto& gw = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = self.grad[i * n + j];
          for (std::size_t p = 0; p < k; ++p) gw[j * k + p] += gv * xv[i * k + p];
        }
    }
    if (self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial ops on (C, H, W) tensors

// Cross-correlation with zero padding. input (C,H,W), kernel (F,C,kh,kw),
// output (F,Ho,Wo) with Ho = (H + 2*padding - kh) / stride + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel,
                     std::size_t stride = 1, std::size_t padding = 0) {
  check_rank(input, 3, "conv2d");
  check_rank(kernel, 4, "conv2d");
  if (input.dim(0) != kernel.dim(1))
    throw std::invalid_argument("conv2d: input channels " + std::to_string(input.dim(0)) +
                                " vs kernel channels " + std::to_string(kernel.dim(1)));
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  check_finite(input, "conv2d");
  check_finite(kernel, "conv2d");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;

  std::vector<double> out(f * ho * wo, 0.0);
  for (std::size_t fo = 0; fo < f; ++fo)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += input[(ci * h + iy) * w + ix] *
                     kernel[((fo * c + ci) * kh + ky) * kw + kx];
            }
          }
        out[(fo * ho + oy) * wo + ox] = acc;
      }

  return make_op({f, ho, wo}, std::move(out), {input, kernel},
                 [c, h, w, f, kh, kw, ho, wo, stride, padding](TensorNode& self) {
    const auto& xv = self.parents[0]->values;
    const auto& kv = self.parents[1]->values;
    const bool need_x = self.parents[0]->requires_grad;
    const bool need_k = self.parents[1]->requires_grad;
    auto* gx = need_x ? &self.parents[0]->grad_buffer() : nullptr;
    auto* gk = need_k ? &self.parents[1]->grad_buffer() : nullptr;
    for (std::size_t fo = 0; fo < f; ++fo)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double gv = self.grad[(fo * ho + oy) * wo + ox];
          if (gv == 0.0) continue;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t xi = (ci * h + iy) * w + ix;
                const std::size_t ki = ((fo * c + ci) * kh + ky) * kw + kx;
                if (need_x) (*gx)[xi] += gv * kv[ki];
                if (need_k) (*gk)[ki] += gv * xv[xi];
              }
            }
        }
  });
}

// Adds bias[c] to every pixel of channel c.
inline Tensor channel_bias(const Tensor& x, const Tensor& bias) {
  check_rank(x, 3, "channel_bias");
  check_rank(bias, 1, "channel_bias");
  if (bias.dim(0) != x.dim(0))
    throw std::invalid_argument("channel_bias: bias length " + std::to_string(bias.dim(0)) +
                                " vs " + std::to_string(x.dim(0)) + " channels");
  check_finite(x, "channel_bias");
  check_finite(bias, "channel_bias");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<double> out(x.size());
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < plane; ++i)
      out[ci * plane + i] = x[ci * plane + i] + bias[ci];
  return make_op(x.shape(), std::move(out), {x, bias}, [c, plane](TensorNode& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      auto& gb = self.parents[1]->grad_buffer();
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < plane; ++i) gb[ci] += self.grad[ci * plane + i];
    }
  });
}

// 2x2 max pooling with stride 2; requires even H and W. Ties within a
// window route the gradient to the first maximal element in scan order.
inline Tensor maxpool2d(const Tensor& x) {
  check_rank(x, 3, "maxpool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("maxpool2d: H and W must be even, got " + shape_str(x.shape()));
  check_finite(x, "maxpool2d");
  const std::size_t ho = h / 2, wo = w / 2;
  std::vector<double> out(c * ho * wo);
  std::vector<std::size_t> argmax(c * ho * wo);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (ci * h + 2 * oy) * w + 2 * ox;
        double best_v = x[best];
        const std::size_t cand[3] = {(ci * h + 2 * oy) * w + 2 * ox + 1,
                                     (ci * h + 2 * oy + 1) * w + 2 * ox,
                                     (ci * h + 2 * oy + 1) * w + 2 * ox + 1};
        for (std::size_t idx : cand)
          if (x[idx] > best_v) { best_v = x[idx]; best = idx; }
        out[(ci * ho + oy) * wo + ox] = best_v;
        argmax[(ci * ho + oy) * wo + ox] = best;
      }
  return make_op({c, ho, wo}, std::move(out), {x},
                 [argmax = std::move(argmax)](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[argmax[i]] += self.grad[i];
  });
}

// Nearest-neighbor x2 upsampling: each input pixel becomes a 2x2 block.
inline Tensor upsample_nearest(const Tensor& x) {
  check_rank(x, 3, "upsample_nearest");
  check_finite(x, "upsample_nearest");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t ho = 2 * h, wo = 2 * w;
  std::vector<double> out(c * ho * wo);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xo = 0; xo < wo; ++xo)
        out[(ci * ho + y) * wo + xo] = x[(ci * h + y / 2) * w + xo / 2];
  return make_op({c, ho, wo}, std::move(out), {x}, [c, h, w, ho, wo](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xo = 0; xo < wo; ++xo)
          g[(ci * h + y / 2) * w + xo / 2] += self.grad[(ci * ho + y) * wo + xo];
  });
}

// Stacks b's channels after a's; spatial dims must match.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_rank(a, 3, "concat_channels");
  check_rank(b, 3, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw std::invalid_argument("concat_channels: spatial dims disagree, " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check_finite(a, "concat_channels");
  check_finite(b, "concat_channels");
  const std::size_t ca = a.dim(0), cb = b.dim(0), plane = a.dim(1) * a.dim(2);
  std::vector<double> out;
  out.reserve((ca + cb) * plane);
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  return make_op({ca + cb, a.dim(1), a.dim(2)}, std::move(out), {a, b},
                 [ca, plane](TensorNode& self) {
    const std::size_t split = ca * plane;
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < split; ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
    }
  });
}

// Normalizes each channel by the mean/variance of its own H*W values,
// then applies a learned affine: y = gamma * (x - mu) / sqrt(var + eps) + beta.
// Statistics are recomputed per call from the current input, so the same
// expression serves training and inference.
inline Tensor batch_stats_normalize(const Tensor& x, const Tensor& gamma,
                                    const Tensor& beta, double eps = 1e-5) {
  check_rank(x, 3, "batch_stats_normalize");
  check_rank(gamma, 1, "batch_stats_normalize");
  check_rank(beta, 1, "batch_stats_normalize");
  if (gamma.dim(0) != x.dim(0) || beta.dim(0) != x.dim(0))
    throw std::invalid_argument("batch_stats_normalize: affine params must have one entry per channel");
  if (eps <= 0.0) throw std::invalid_argument("batch_stats_normalize: eps must be positive");
  check_finite(x, "batch_stats_normalize");
  check_finite(gamma, "batch_stats_normalize");
  check_finite(beta, "batch_stats_normalize");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);

  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(c);
  std::vector<double> out(x.size());
  for (std::size_t ci = 0; ci < c; ++ci) {
    double mu = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mu += x[ci * plane + i];
    mu /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = x[ci * plane + i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(plane);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[ci] = inv;
    for (std::size_t i = 0; i < plane; ++i) {
      const double xh = (x[ci * plane + i] - mu) * inv;
      xhat[ci * plane + i] = xh;
      out[ci * plane + i] = gamma[ci] * xh + beta[ci];
    }
  }

  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [c, plane, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)](TensorNode& self) {
    const auto& gv = self.parents[1]->values;
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* xh = xhat.data() + ci * plane;
      const double* go = self.grad.data() + ci * plane;
      double g_sum = 0.0, gx_sum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        g_sum += go[i];
        gx_sum += go[i] * xh[i];
      }
      if (self.parents[0]->requires_grad) {
        auto& gx = self.parents[0]->grad_buffer();
        // d/dx of the per-channel standardization: remove the components of
        // the gradient that a shift or rescale of the statistics absorbs.
        const double inv_n = 1.0 / static_cast<double>(plane);
        const double k = gv[ci] * inv_std[ci];
        for (std::size_t i = 0; i < plane; ++i)
          gx[ci * plane + i] += k * (go[i] - g_sum * inv_n - xh[i] * gx_sum * inv_n);
      }
      if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer()[ci] += gx_sum;
      if (self.parents[2]->requires_grad) self.parents[2]->grad_buffer()[ci] += g_sum;
    }
  });
}

// Picks the feature column at each (row, col) position: x (C,H,W) and K
// positions -> (K, C).
inline Tensor gather_pixels(const Tensor& x,
                            const std::vector<std::array<std::size_t, 2>>& positions) {
  check_rank(x, 3, "gather_pixels");
  check_finite(x, "gather_pixels");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (const auto& rc : positions)
    if (rc[0] >= h || rc[1] >= w)
      throw std::invalid_argument("gather_pixels: position (" + std::to_string(rc[0]) + "," +
                                  std::to_string(rc[1]) + ") outside " + shape_str(x.shape()));
  const std::size_t k = positions.size();
  std::vector<double> out(k * c);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t ci = 0; ci < c; ++ci)
      out[p * c + ci] = x[(ci * h + positions[p][0]) * w + positions[p][1]];
  return make_op({k, c}, std::move(out), {x},
                 [c, h, w, positions](TensorNode& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < positions.size(); ++p)
      for (std::size_t ci = 0; ci < c; ++ci)
        g[(ci * h + positions[p][0]) * w + positions[p][1]] += self.grad[p * c + ci];
  });
}

// Mean binary cross-entropy evaluated directly on logits. The rearranged
// form max(z,0) - z*t + log1p(exp(-|z|)) never exponentiates a positive
// argument, so it stays finite for any logit.
inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  check_finite(logits, "bce_with_logits");
  if (logits.size() != targets.size())
    throw std::invalid_argument("bce_with_logits: " + std::to_string(logits.size()) +
                                " logits vs " + std::to_string(targets.size()) + " targets");
  if (logits.size() == 0) throw std::invalid_argument("bce_with_logits: empty input");
  for (double t : targets)
    if (t != 0.0 && t != 1.0)
      throw std::invalid_argument("bce_with_logits: targets must be 0 or 1");
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double z = logits[i];
    total += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::fabs(z)));
  }
  const double inv_m = 1.0 / static_cast<double>(targets.size());
  return make_op({1}, {total * inv_m}, {logits},
                 [targets, inv_m](TensorNode& self) {
    const auto& z = self.parents[0]->values;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double s = z[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-z[i]))
                                   : std::exp(z[i]) / (1.0 + std::exp(z[i]));
      g[i] += self.grad[0] * (s - targets[i]) * inv_m;
    }
  });
}

}  // namespace cpn
