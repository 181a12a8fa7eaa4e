#pragma once

// Instance matching and F1 evaluation. A prediction matches at most one
// ground-truth instance and vice versa; candidate pairs are accepted in
// descending IoU order (ties toward lower prediction index, then lower
// ground-truth index) when IoU >= tau.

#include <algorithm>
#include <cmath>
#include <vector>

#include "cpn/geometry.hpp"

namespace cpn {

struct MatchResult {
  double tau = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred index, gt index)
};

// Matching on a precomputed IoU table; iou[p][g] for prediction p against
// ground truth g.
inline MatchResult match_from_iou(const std::vector<std::vector<double>>& iou, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("match: tau must lie in [0,1]");
  const std::size_t preds = iou.size();
  const std::size_t gts = preds == 0 ? 0 : iou[0].size();
  struct Cand {
    double iou;
    std::size_t p, g;
  };
  std::vector<Cand> cands;
  for (std::size_t p = 0; p < preds; ++p) {
    if (iou[p].size() != gts) throw std::invalid_argument("match: ragged IoU table");
    for (std::size_t g = 0; g < gts; ++g) {
      if (!(iou[p][g] >= 0.0 && iou[p][g] <= 1.0))
        throw std::invalid_argument("match: IoU values must lie in [0,1]");
      if (iou[p][g] >= tau) cands.push_back({iou[p][g], p, g});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
    if (x.iou != y.iou) return x.iou > y.iou;
    if (x.p != y.p) return x.p < y.p;
    return x.g < y.g;
  });

  MatchResult result;
  result.tau = tau;
  std::vector<char> p_used(preds, 0), g_used(gts, 0);
  for (const Cand& c : cands) {
    if (p_used[c.p] || g_used[c.g]) continue;
    p_used[c.p] = 1;
    g_used[c.g] = 1;
    result.pairs.emplace_back(c.p, c.g);
  }
  result.tp = result.pairs.size();
  result.fp = preds - result.tp;
  result.fn = gts - result.tp;
  return result;
}

inline MatchResult match(const std::vector<Mask>& preds, const std::vector<Mask>& gts, double tau) {
  std::vector<std::vector<double>> iou(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t g = 0; g < gts.size(); ++g) iou[p][g] = iou_mask(preds[p], gts[g]);
  MatchResult result = match_from_iou(iou, tau);
  result.fn = gts.size() - result.tp;  // an empty table cannot carry the gt count
  return result;
}

inline MatchResult match(const std::vector<Box>& preds, const std::vector<Box>& gts, double tau) {
  std::vector<std::vector<double>> iou(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t g = 0; g < gts.size(); ++g) iou[p][g] = iou_box(preds[p], gts[g]);
  MatchResult result = match_from_iou(iou, tau);
  result.fn = gts.size() - result.tp;
  return result;
}

// F1 = TP / (TP + (FP + FN)/2); an evaluation with nothing predicted and
// nothing to find counts as perfect agreement.
inline double f1(const MatchResult& m) {
  if (m.tp + m.fp + m.fn == 0) return 1.0;
  return static_cast<double>(m.tp) /
         (static_cast<double>(m.tp) + 0.5 * static_cast<double>(m.fp + m.fn));
}

inline double precision(const MatchResult& m) {
  return m.tp + m.fp == 0 ? 1.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
}

inline double recall(const MatchResult& m) {
  return m.tp + m.fn == 0 ? 1.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
}

// The nine standard thresholds 0.50, 0.55, ..., 0.90. Computed as integer
// ratios so each is the closest double to its decimal value.
inline std::vector<double> canonical_taus() {
  std::vector<double> taus(9);
  for (std::size_t i = 0; i < 9; ++i) taus[i] = static_cast<double>(50 + 5 * i) / 100.0;
  return taus;
}

inline double f1_avg(const std::vector<MatchResult>& per_tau) {
  if (per_tau.empty()) throw std::invalid_argument("f1_avg: no thresholds");
  double total = 0.0;
  for (const MatchResult& m : per_tau) total += f1(m);
  return total / static_cast<double>(per_tau.size());
}

}  // namespace cpn
