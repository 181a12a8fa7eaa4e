#pragma once

// Finite-difference verification of every autodiff op, plus the full
// training loss through a real forward pass. Shared by the `gradcheck`
// CLI subcommand and the test suite.
//
// Inputs are drawn away from non-smooth points (abs/relu kinks, maxpool
// ties) so central differences with eps=1e-5 stay meaningful.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cpn/efd.hpp"
#include "cpn/gradcheck.hpp"
#include "cpn/loss.hpp"
#include "cpn/model.hpp"
#include "cpn/ops.hpp"
#include "cpn/refine.hpp"
#include "cpn/rng.hpp"
#include "cpn/tensor.hpp"

namespace cpn {

struct SuiteCase {
  std::string name;
  GradCheckReport report;
};

namespace detail {

inline Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

// Values bounded away from zero, for ops with a kink there.
inline Tensor rand_tensor_off_zero(Shape shape, Rng& rng, double min_mag = 0.2) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) {
    const double mag = rng.uniform(min_mag, 1.0);
    x = rng.uniform01() < 0.5 ? -mag : mag;
  }
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

// Distinct values with comfortable gaps, for argmax-based ops.
inline Tensor rand_tensor_distinct(Shape shape, Rng& rng) {
  const std::size_t n = shape_size(shape);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.1 * static_cast<double>(order[i]) - 0.3;
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

}  // namespace detail

inline std::vector<SuiteCase> run_gradcheck_suite(double epsilon = 1e-5) {
  std::vector<SuiteCase> cases;
  Rng rng(20240915);
  const auto run = [&](const std::string& name, const std::function<Tensor()>& build,
                       std::vector<Tensor> leaves) {
    cases.push_back({name, grad_check(build, std::move(leaves), epsilon)});
  };

  {
    Tensor a = detail::rand_tensor({2, 3}, rng), b = detail::rand_tensor({2, 3}, rng);
    run("add", [=] { return mean(add(a, b)); }, {a, b});
  }
  {
    Tensor a = detail::rand_tensor({2, 3}, rng), b = detail::rand_tensor({2, 3}, rng);
    run("sub", [=] { return mean(sub(a, b)); }, {a, b});
  }
  {
    Tensor a = detail::rand_tensor({2, 3}, rng), b = detail::rand_tensor({2, 3}, rng);
    run("mul", [=] { return mean(mul(a, b)); }, {a, b});
  }
  {
    Tensor a = detail::rand_tensor({2, 3}, rng);
    run("scale", [=] { return mean(scale(a, -0.7)); }, {a});
  }
  {
    Tensor a = detail::rand_tensor_off_zero({2, 4}, rng);
    run("abs", [=] { return mean(abs(a)); }, {a});
  }
  {
    Tensor a = detail::rand_tensor_off_zero({2, 4}, rng);
    run("relu", [=] { return mean(relu(a)); }, {a});
  }
  {
    Tensor a = detail::rand_tensor({3, 3}, rng, -3.0, 3.0);
    run("sigmoid", [=] { return mean(sigmoid(a)); }, {a});
  }
  {
    Tensor a = detail::rand_tensor({3, 3}, rng, -2.0, 2.0);
    run("tanh", [=] { return mean(tanh(a)); }, {a});
  }
  {
    Tensor a = detail::rand_tensor({7}, rng);
    run("sum", [=] { return sum(a); }, {a});
  }
  {
    Tensor a = detail::rand_tensor({7}, rng);
    run("mean", [=] { return mean(a); }, {a});
  }
  {
    Tensor a = detail::rand_tensor({2, 3}, rng), b = detail::rand_tensor({3, 4}, rng);
    run("matmul", [=] { return mean(matmul(a, b)); }, {a, b});
  }
  {
    Tensor x = detail::rand_tensor({2, 3}, rng);
    Tensor w = detail::rand_tensor({4, 3}, rng);
    Tensor b = detail::rand_tensor({4}, rng);
    run("linear", [=] { return mean(linear(x, w, b)); }, {x, w, b});
  }
  {
    Tensor x = detail::rand_tensor({2, 5, 5}, rng);
    Tensor k = detail::rand_tensor({3, 2, 3, 3}, rng);
    run("conv2d", [=] { return mean(conv2d(x, k, 2, 1)); }, {x, k});
  }
  {
    Tensor x = detail::rand_tensor({3, 2, 2}, rng);
    Tensor b = detail::rand_tensor({3}, rng);
    run("channel_bias", [=] { return mean(channel_bias(x, b)); }, {x, b});
  }
  {
    Tensor x = detail::rand_tensor_distinct({2, 4, 4}, rng);
    run("maxpool2d", [=] { return mean(maxpool2d(x)); }, {x});
  }
  {
    Tensor x = detail::rand_tensor({2, 3, 3}, rng);
    run("upsample_nearest", [=] { return mean(upsample_nearest(x)); }, {x});
  }
  {
    Tensor a = detail::rand_tensor({2, 3, 3}, rng), b = detail::rand_tensor({1, 3, 3}, rng);
    run("concat_channels", [=] { return mean(concat_channels(a, b)); }, {a, b});
  }
  {
    Tensor x = detail::rand_tensor({2, 3, 3}, rng);
    Tensor g = detail::rand_tensor({2}, rng, 0.5, 1.5);
    Tensor b = detail::rand_tensor({2}, rng);
    run("batch_stats_normalize", [=] { return mean(batch_stats_normalize(x, g, b)); }, {x, g, b});
  }
  {
    Tensor x = detail::rand_tensor({3, 4, 4}, rng);
    const std::vector<std::array<std::size_t, 2>> pos = {{{0, 1}}, {{2, 3}}, {{1, 1}}};
    run("gather_pixels", [=] { return mean(gather_pixels(x, pos)); }, {x});
  }
  {
    Tensor z = detail::rand_tensor({1, 2, 2}, rng, -2.0, 2.0);
    const std::vector<double> targets = {0.0, 1.0, 1.0, 0.0};
    run("bce_with_logits", [=] { return bce_with_logits(z, targets); }, {z});
  }
  {
    Tensor desc = detail::rand_tensor({descriptor_dim(3)}, rng, -2.0, 2.0);
    const std::vector<double> ts = uniform_ts(5);
    run("efd_sample", [=] { return mean(efd_sample(desc, ts)); }, {desc});
  }
  {
    Tensor off = detail::rand_tensor({2}, rng, -2.0, 2.0);
    Tensor coeffs = detail::rand_tensor({4 * 3}, rng);
    run("assemble_descriptor", [=] { return mean(assemble_descriptor(off, coeffs)); },
        {off, coeffs});
  }
  {
    Tensor field = detail::rand_tensor({2, 6, 6}, rng, -0.4, 0.4);
    const Polyline coords = {{1.3, 2.7}, {4.2, 0.8}, {2.6, 4.4}, {0.7, 1.2}};
    run("refine_coords", [=] { return mean(refine_coords(coords, field, 1, 2.0)); }, {field});
  }

  // Full training loss through a real forward pass on a 16x16 image, with
  // every network parameter as a finite-difference leaf.
  {
    CpnConfig cfg;
    cfg.order = 2;
    cfg.samples = 6;
    cfg.stride = 2;
    cfg.widths = {4, 8};
    cfg.refine_iterations = 2;
    cfg.seed = 7;
    CpnModel model(cfg);

    LabeledImage img;
    img.height = 16;
    img.width = 16;
    img.pixels.assign(256, 0.8);
    FourierDescriptor circle = FourierDescriptor::zeros(1);
    circle.a[0] = 8.0;
    circle.c[0] = 8.0;
    circle.b[0] = 4.5;
    circle.c[1] = 4.5;
    img.instances.push_back(sample_contour(circle, uniform_ts(24)));
    const Mask object = rasterize(img.instances[0], 16, 16);
    for (std::size_t p = 0; p < 256; ++p)
      if (object.bits[p]) img.pixels[p] = 0.25;
    const TargetGrid tg = build_targets(img, cfg);
    const std::vector<double> ts = uniform_ts(cfg.samples);

    std::vector<Tensor> leaves;
    for (auto& [name, t] : model.parameters()) leaves.push_back(t);
    run(
        "cpn_loss",
        [&model, &img, &tg, &ts, &cfg] {
          const auto raw = model.forward_raw(img.pixels, img.height, img.width);
          return cpn_loss(raw.logits, raw.shape, raw.offsets, raw.field, tg.objectness, tg.cells,
                          cfg.loss, ts, cfg.stride, cfg.refine_iterations, cfg.refine_margin);
        },
        leaves);
  }

  return cases;
}

inline bool suite_passed(const std::vector<SuiteCase>& cases, double tolerance = 1e-3) {
  for (const SuiteCase& c : cases)
    if (!(c.report.max_rel_err < tolerance)) return false;
  return true;
}

}  // namespace cpn
