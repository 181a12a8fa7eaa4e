// Acceptance gate: ten end-to-end checks, one [PASS]/[FAIL] line each.
// Every check carries its own independent oracle (closed forms, literal
// step replays, quadratic references, brute-force scans); tolerances are
// pinned here, not configurable. The process exit code is the number of
// failed checks.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cpn/cpn.hpp"
#include "cpn/gradcheck_suite.hpp"
#include "test_util.hpp"

namespace {

using cpn::FourierDescriptor;
using cpn::Point;
using cpn::Polyline;
using testutil::kPi;

double seconds_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* format, ...) {
  char buf[256];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

// --- check 1: descriptor flat size for orders 1, 3, 8 -----------------------

bool check_descriptor_dims(std::string& detail) {
  const bool ok = cpn::descriptor_dim(1) == 6 && cpn::descriptor_dim(3) == 14 &&
                  cpn::descriptor_dim(8) == 34;
  detail = fmt("dims %zu/%zu/%zu want 6/14/34", cpn::descriptor_dim(1), cpn::descriptor_dim(3),
               cpn::descriptor_dim(8));
  return ok;
}

// --- check 2: order-1 circle identity ----------------------------------------

bool check_circle_identity(std::string& detail) {
  const double cx = 3.25, cy = -1.5, r = 7.0;
  FourierDescriptor d = FourierDescriptor::zeros(1);
  d.a[0] = cx;
  d.c[0] = cy;
  d.b[0] = r;  // first cosine coefficient of x
  d.c[1] = r;  // first sine coefficient of y

  const std::vector<double> ts = cpn::uniform_ts(256);
  const Polyline pts = cpn::sample_contour(d, ts);
  double worst = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double ang = 2.0 * kPi * ts[i];
    worst = std::max(worst, std::abs(pts[i][0] - (cx + r * std::cos(ang))));
    worst = std::max(worst, std::abs(pts[i][1] - (cy + r * std::sin(ang))));
    const double radius = std::hypot(pts[i][0] - cx, pts[i][1] - cy);
    worst = std::max(worst, std::abs(radius - r));
  }
  detail = fmt("max deviation %.2e (limit 1e-9) over 256 samples", worst);
  return worst <= 1e-9;
}

// --- check 3: square fit round trip plus projection oracle -------------------

// Midpoint-rule projection of the arc-length parameterized polygon onto
// each basis function; independent of the closed-form per-segment fit.
FourierDescriptor projection_fit(const Polyline& poly, std::size_t order, std::size_t samples) {
  const std::size_t V = poly.size();
  std::vector<double> cum(V + 1, 0.0);
  for (std::size_t i = 0; i < V; ++i) {
    const double dx = poly[(i + 1) % V][0] - poly[i][0];
    const double dy = poly[(i + 1) % V][1] - poly[i][1];
    cum[i + 1] = cum[i] + std::sqrt(dx * dx + dy * dy);
  }
  const double total = cum[V];

  FourierDescriptor out = FourierDescriptor::zeros(order);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < samples; ++k) {
    const double t = (static_cast<double>(k) + 0.5) / static_cast<double>(samples);
    const double s = t * total;
    while (seg + 1 < V && cum[seg + 1] < s) ++seg;
    const double seg_len = cum[seg + 1] - cum[seg];
    const double frac = seg_len > 0.0 ? (s - cum[seg]) / seg_len : 0.0;
    const double x = poly[seg][0] + frac * (poly[(seg + 1) % V][0] - poly[seg][0]);
    const double y = poly[seg][1] + frac * (poly[(seg + 1) % V][1] - poly[seg][1]);

    out.a[0] += x / static_cast<double>(samples);
    out.c[0] += y / static_cast<double>(samples);
    for (std::size_t n = 1; n <= order; ++n) {
      const double ang = 2.0 * kPi * static_cast<double>(n) * t;
      const double w = 2.0 / static_cast<double>(samples);
      out.a[n] += w * x * std::sin(ang);
      out.b[n - 1] += w * x * std::cos(ang);
      out.c[n] += w * y * std::sin(ang);
      out.d[n - 1] += w * y * std::cos(ang);
    }
  }
  return out;
}

bool check_square_round_trip(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();

  Polyline square;
  const double lo = 10.0, hi = 22.0;  // side 12
  for (int k = 0; k < 64; ++k) square.push_back({lo + (hi - lo) * k / 64.0, lo});
  for (int k = 0; k < 64; ++k) square.push_back({hi, lo + (hi - lo) * k / 64.0});
  for (int k = 0; k < 64; ++k) square.push_back({hi - (hi - lo) * k / 64.0, hi});
  for (int k = 0; k < 64; ++k) square.push_back({lo, hi - (hi - lo) * k / 64.0});

  const std::size_t order = 32;
  const FourierDescriptor fast = cpn::fit_descriptor(square, order);

  const Polyline resampled = cpn::sample_contour(fast, cpn::uniform_ts(1024));
  double worst_dist = 0.0;
  for (const Point& p : resampled)
    worst_dist = std::max(worst_dist, testutil::point_polygon_distance(p, square));

  const FourierDescriptor ref = projection_fit(square, order, std::size_t{1} << 16);
  double worst_coeff = 0.0;
  for (std::size_t n = 0; n <= order; ++n) {
    worst_coeff = std::max(worst_coeff, std::abs(fast.a[n] - ref.a[n]));
    worst_coeff = std::max(worst_coeff, std::abs(fast.c[n] - ref.c[n]));
  }
  for (std::size_t n = 0; n < order; ++n) {
    worst_coeff = std::max(worst_coeff, std::abs(fast.b[n] - ref.b[n]));
    worst_coeff = std::max(worst_coeff, std::abs(fast.d[n] - ref.d[n]));
  }

  const double elapsed = seconds_since(start);
  detail = fmt("round trip %.3f px (limit 0.1), oracle gap %.2e (limit 1e-6), %.2f s (limit 1)",
               worst_dist, worst_coeff, elapsed);
  return worst_dist < 0.1 && worst_coeff <= 1e-6 && elapsed < 1.0;
}

// --- check 4: finite-difference gradient suite -------------------------------

bool check_gradient_suite(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<cpn::SuiteCase> cases = cpn::run_gradcheck_suite(1e-5);
  double worst = 0.0;
  std::size_t checked = 0;
  for (const cpn::SuiteCase& c : cases) {
    worst = std::max(worst, c.report.max_rel_err);
    checked += c.report.checked;
  }
  const double elapsed = seconds_since(start);
  detail = fmt("%zu cases, %zu values, max rel err %.2e (limit 1e-3), %.1f s (limit 120)",
               cases.size(), checked, worst, elapsed);
  return worst < 1e-3 && elapsed < 120.0;
}

// --- check 5: refinement equals a literal step replay ------------------------

// Deliberately naive transcription of the update rule: round, clamp the
// lookup index, move from the rounded point by sigma * tanh(residual).
std::array<double, 2> refine_replay(double x, double y, const cpn::ResidualField& f, int r,
                                    double sigma) {
  for (int k = 0; k < r; ++k) {
    const double rx = cpn::round_half_even(x);
    const double ry = cpn::round_half_even(y);
    long col = static_cast<long>(rx), row = static_cast<long>(ry);
    col = std::clamp(col, 0L, static_cast<long>(f.width) - 1);
    row = std::clamp(row, 0L, static_cast<long>(f.height) - 1);
    x = rx + sigma * std::tanh(f.at(static_cast<std::size_t>(row),
                                    static_cast<std::size_t>(col), 0));
    y = ry + sigma * std::tanh(f.at(static_cast<std::size_t>(row),
                                    static_cast<std::size_t>(col), 1));
  }
  return {x, y};
}

bool check_refine_replay(std::string& detail) {
  cpn::Rng rng(501);
  const double sigma = 1.7;
  std::size_t mismatches = 0, displacement_breaks = 0, comparisons = 0;
  for (int trial = 0; trial < 100; ++trial) {
    cpn::ResidualField f = cpn::ResidualField::zeros(20, 20);
    for (double& v : f.v) v = rng.uniform(-3.0, 3.0);
    const double x0 = rng.uniform(-2.0, 22.0), y0 = rng.uniform(-2.0, 22.0);
    for (int r : {0, 1, 4}) {
      const auto got = cpn::refine(x0, y0, f, r, sigma);
      const auto want = refine_replay(x0, y0, f, r, sigma);
      ++comparisons;
      if (got[0] != want[0] || got[1] != want[1]) ++mismatches;
    }
    // Walk one iteration at a time; each move away from the rounded base
    // must stay within sigma per coordinate.
    double x = x0, y = y0;
    for (int k = 0; k < 4; ++k) {
      const double bx = cpn::round_half_even(x), by = cpn::round_half_even(y);
      const auto next = cpn::refine(x, y, f, 1, sigma);
      if (std::abs(next[0] - bx) > sigma || std::abs(next[1] - by) > sigma)
        ++displacement_breaks;
      x = next[0];
      y = next[1];
    }
  }
  detail = fmt("%zu/%zu exact replays, %zu displacement violations (limit sigma=%.1f)",
               comparisons - mismatches, comparisons, displacement_breaks, sigma);
  return mismatches == 0 && displacement_breaks == 0;
}

// --- check 6: suppression equals the quadratic reference ---------------------

std::vector<std::size_t> nms_reference(const std::vector<cpn::Detection>& dets, double thr) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<char> gone(dets.size(), 0);
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    if (gone[idx]) continue;
    kept.push_back(idx);
    for (std::size_t other : order)
      if (!gone[other] && other != idx &&
          cpn::iou_box(dets[idx].box, dets[other].box) > thr)
        gone[other] = 1;
  }
  return kept;
}

bool check_nms_reference(std::string& detail) {
  std::size_t mismatched_seeds = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    cpn::Rng rng(seed);
    std::vector<cpn::Detection> dets(1000);
    for (cpn::Detection& det : dets) {
      const double x = rng.uniform(0.0, 64.0), y = rng.uniform(0.0, 64.0);
      const double w = rng.uniform(2.0, 12.0), h = rng.uniform(2.0, 12.0);
      det.box = {x, y, x + w, y + h};
      // Quantized scores so ties genuinely occur.
      det.score = std::floor(rng.uniform01() * 50.0) / 50.0 + 0.01;
    }
    const double thr = seed % 3 == 0 ? 0.2 : (seed % 3 == 1 ? 0.5 : 0.8);
    if (cpn::nms(dets, thr) != nms_reference(dets, thr)) ++mismatched_seeds;
  }
  detail = fmt("%zu/100 seeds diverged on 1000 detections", mismatched_seeds);
  return mismatched_seeds == 0;
}

// --- check 7: f1 formula, threshold set, monotonicity ------------------------

bool check_metric_fidelity(std::string& detail) {
  cpn::MatchResult spot;
  spot.tp = 8;
  spot.fp = 2;
  spot.fn = 2;
  const bool spot_ok = cpn::f1(spot) == 0.8;

  const std::vector<double> taus = cpn::canonical_taus();
  bool taus_ok = taus.size() == 9;
  for (std::size_t i = 0; i < taus.size() && taus_ok; ++i)
    taus_ok = taus[i] == static_cast<double>(50 + 5 * i) / 100.0;

  cpn::Rng rng(901);
  std::size_t monotone_breaks = 0;
  for (int fixture = 0; fixture < 50; ++fixture) {
    const std::size_t preds = rng.uniform_int(9);
    const std::size_t gts = rng.uniform_int(9);
    std::vector<std::vector<double>> table(preds, std::vector<double>(gts));
    for (auto& row : table)
      for (double& v : row)
        v = static_cast<double>(rng.uniform_int(10)) / 10.0;
    double prev = 2.0;
    for (double tau : taus) {
      const double cur = cpn::f1(cpn::match_from_iou(table, tau));
      if (cur > prev) ++monotone_breaks;
      prev = cur;
    }
  }
  detail = fmt("f1(8,2,2)=%.3f, %zu thresholds, %zu monotonicity breaks", cpn::f1(spot),
               taus.size(), monotone_breaks);
  return spot_ok && taus_ok && monotone_breaks == 0;
}

// --- check 8: rasterizer equals brute-force point-in-polygon -----------------

bool check_rasterizer_oracle(std::string& detail) {
  cpn::Rng rng(811);
  std::size_t bad_pixels = 0, polygons = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 8 + rng.uniform_int(57);  // 8..64
    const std::size_t w = 8 + rng.uniform_int(57);
    const double span = static_cast<double>(std::max(h, w));
    Polyline poly;
    if (trial % 3 == 0) {
      poly = testutil::circle_polygon(rng.uniform(0.0, span), rng.uniform(0.0, span),
                                      rng.uniform(2.0, span / 2.0), 3 + rng.uniform_int(30));
    } else {
      poly = testutil::star_polygon(rng, rng.uniform(-3.0, span + 3.0),
                                    rng.uniform(-3.0, span + 3.0), rng.uniform(2.0, span / 2.0),
                                    8 + rng.uniform_int(25));
    }
    ++polygons;
    const cpn::Mask fast = cpn::rasterize(poly, h, w);
    for (std::size_t row = 0; row < h; ++row)
      for (std::size_t col = 0; col < w; ++col) {
        const bool ref = testutil::point_in_polygon_reference(
            poly, static_cast<double>(col) + 0.5, static_cast<double>(row) + 0.5);
        if (fast.at(row, col) != ref) ++bad_pixels;
      }
  }
  detail = fmt("%zu polygons, %zu pixel mismatches", polygons, bad_pixels);
  return bad_pixels == 0;
}

// --- checks 9 and 10: desk-scale training, then bit-identical retrain --------

struct DeskScaleRun {
  cpn::CpnConfig cfg;             // library defaults: order 4, 64 samples,
                                  // 4 refine iterations, widths 8/16/32
  cpn::TrainOptions opts;
  std::vector<cpn::LabeledImage> train_set, held_out;
  std::vector<double> loss_history;
  bool trained = false;
};

cpn::SynthConfig desk_scale_synth(std::size_t count, std::uint64_t seed) {
  cpn::SynthConfig synth;  // 32x32, 1..3 disjoint circles/ellipses
  synth.count = count;
  synth.seed = seed;
  return synth;
}

bool check_desk_scale_training(std::string& detail, DeskScaleRun& run) {
  run.cfg.seed = 1;
  run.opts.epochs = 30;
  run.opts.learning_rate = 0.02;
  run.opts.momentum = 0.9;
  run.opts.checkpoint_dir = testutil::scratch_dir("acceptance_desk_scale");

  run.train_set = cpn::generate(desk_scale_synth(200, 100));
  run.held_out = cpn::generate(desk_scale_synth(60, 9000));

  cpn::CpnModel model(run.cfg);
  const auto start = std::chrono::steady_clock::now();
  const cpn::TrainResult result = cpn::train(model, run.train_set, run.opts);
  const double train_seconds = seconds_since(start);
  run.loss_history = result.epoch_loss;
  run.trained = true;

  const cpn::EvalReport refined =
      cpn::run_evaluation(model, run.held_out, cpn::MatchKind::kMask);

  // Same weights, refinement switched off: reload the final checkpoint
  // into a model whose config runs zero refinement iterations.
  cpn::CpnConfig plain_cfg = run.cfg;
  plain_cfg.refine_iterations = 0;
  cpn::CpnModel plain(plain_cfg);
  plain.load(run.opts.checkpoint_dir + "/checkpoint_final.cpnw");
  const cpn::EvalReport coarse =
      cpn::run_evaluation(plain, run.held_out, cpn::MatchKind::kMask);

  double f1_50 = -1.0, f1_85_refined = -1.0, f1_85_plain = -1.0;
  for (const cpn::ThresholdReport& row : refined.thresholds) {
    if (std::abs(row.tau - 0.50) < 1e-12) f1_50 = row.f1;
    if (std::abs(row.tau - 0.85) < 1e-12) f1_85_refined = row.f1;
  }
  for (const cpn::ThresholdReport& row : coarse.thresholds)
    if (std::abs(row.tau - 0.85) < 1e-12) f1_85_plain = row.f1;

  detail = fmt(
      "held-out F1@0.50=%.4f (need >=0.9), train %.0f s (limit 600), "
      "F1@0.85 refined %.4f vs unrefined %.4f",
      f1_50, train_seconds, f1_85_refined, f1_85_plain);
  return f1_50 >= 0.9 && train_seconds < 600.0 && f1_85_refined >= f1_85_plain;
}

bool check_retrain_determinism(std::string& detail, const DeskScaleRun& run) {
  if (!run.trained) {
    detail = "skipped: desk-scale training run unavailable";
    return false;
  }
  cpn::TrainOptions opts = run.opts;
  opts.checkpoint_dir.clear();  // history comparison only, keep weights in memory
  cpn::CpnModel model(run.cfg);
  const cpn::TrainResult result = cpn::train(model, run.train_set, opts);

  const std::string dir = testutil::scratch_dir("acceptance_determinism");
  const std::string first_csv = dir + "/first.csv";
  const std::string second_csv = dir + "/second.csv";
  cpn::write_loss_history_csv(first_csv, run.loss_history);
  cpn::write_loss_history_csv(second_csv, result.epoch_loss);

  std::ifstream a(first_csv, std::ios::binary), b(second_csv, std::ios::binary);
  std::ostringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  const bool identical = sa.str() == sb.str() && !sa.str().empty();
  detail = fmt("loss history %zu epochs, files %s", result.epoch_loss.size(),
               identical ? "byte-identical" : "DIFFER");
  return identical;
}

}  // namespace

int main() {
  int failures = 0;
  const auto run = [&failures](int index, const char* name, auto&& fn) {
    std::string detail;
    bool ok = false;
    try {
      ok = fn(detail);
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] %2d %-36s %s\n", ok ? "PASS" : "FAIL", index, name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  };

  DeskScaleRun desk;
  run(1, "descriptor dimensions", check_descriptor_dims);
  run(2, "order-1 circle identity", check_circle_identity);
  run(3, "square fit round trip + oracle", check_square_round_trip);
  run(4, "gradient suite", check_gradient_suite);
  run(5, "refinement step replay", check_refine_replay);
  run(6, "suppression vs quadratic reference", check_nms_reference);
  run(7, "metric fidelity", check_metric_fidelity);
  run(8, "rasterizer vs brute force", check_rasterizer_oracle);
  run(9, "desk-scale training",
      [&desk](std::string& detail) { return check_desk_scale_training(detail, desk); });
  run(10, "bit-identical retraining",
      [&desk](std::string& detail) { return check_retrain_determinism(detail, desk); });

  std::printf("%d of 10 checks passed\n", 10 - failures);
  return failures;
}
