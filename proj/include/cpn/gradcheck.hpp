#pragma once

// Central-difference gradient verification. `build` must reconstruct the
// scalar loss graph from the leaf tensors' current values on every call;
// leaves are perturbed in place one element at a time.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cpn/tensor.hpp"

namespace cpn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
};

inline GradCheckReport grad_check(const std::function<Tensor()>& build,
                                  std::vector<Tensor> leaves,
                                  double epsilon = 1e-5) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");
  for (const Tensor& leaf : leaves)
    if (!leaf.requires_grad())
      throw std::invalid_argument("grad_check: every leaf must require gradients");

  for (Tensor& leaf : leaves) leaf.zero_grad();
  Tensor out = build();
  backward(out);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& leaf : leaves)
    analytic.push_back(leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0));

  GradCheckReport report;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = leaves[li].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + epsilon;
      const double f_plus = build().value();
      vals[i] = orig - epsilon;
      const double f_minus = build().value();
      vals[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
      const double abs_err = std::fabs(analytic[li][i] - numeric);
      const double rel_err = abs_err / std::max(1.0, std::fabs(numeric));
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace cpn
