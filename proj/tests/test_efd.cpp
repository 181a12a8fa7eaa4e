#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cpn/efd.hpp"
#include "cpn/ops.hpp"
#include "cpn/rng.hpp"
#include "cpn/tensor.hpp"
#include "test_util.hpp"

namespace {

using cpn::FourierDescriptor;
using cpn::Point;
using cpn::Polyline;
using testutil::kPi;

// Term-by-term reference evaluation of the descriptor series, coded
// independently of sample_contour.
Point eval_reference(const FourierDescriptor& d, double t) {
  double x = d.a[0];
  double y = d.c[0];
  for (std::size_t n = 1; n <= d.order; ++n) {
    const double ang = 2.0 * kPi * static_cast<double>(n) * t;
    x += d.a[n] * std::sin(ang) + d.b[n - 1] * std::cos(ang);
    y += d.c[n] * std::sin(ang) + d.d[n - 1] * std::cos(ang);
  }
  return {x, y};
}

// Projection oracle for fit_descriptor: midpoint-rule integration of the
// arc-length parameterized polygon curve against each sine/cosine basis
// function. Independent of the closed-form per-segment fitting path.
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

FourierDescriptor random_descriptor(std::size_t order, cpn::Rng& rng) {
  FourierDescriptor d = FourierDescriptor::zeros(order);
  d.a[0] = rng.uniform(-10.0, 10.0);
  d.c[0] = rng.uniform(-10.0, 10.0);
  for (std::size_t n = 1; n <= order; ++n) {
    const double decay = 1.0 / static_cast<double>(n * n);
    d.a[n] = rng.uniform(-3.0, 3.0) * decay;
    d.b[n - 1] = rng.uniform(-3.0, 3.0) * decay;
    d.c[n] = rng.uniform(-3.0, 3.0) * decay;
    d.d[n - 1] = rng.uniform(-3.0, 3.0) * decay;
  }
  return d;
}

TEST(DescriptorDim, KnownSizes) {
  EXPECT_EQ(cpn::descriptor_dim(1), 6u);
  EXPECT_EQ(cpn::descriptor_dim(3), 14u);
  EXPECT_EQ(cpn::descriptor_dim(8), 34u);
  EXPECT_THROW(cpn::descriptor_dim(0), std::invalid_argument);
}

TEST(DescriptorDim, FlatLengthMatchesForAllOrders) {
  for (std::size_t n = 1; n <= 64; ++n) {
    const FourierDescriptor d = FourierDescriptor::zeros(n);
    EXPECT_EQ(d.flat().size(), cpn::descriptor_dim(n));
  }
}

TEST(Descriptor, FlatRoundTrip) {
  cpn::Rng rng(3);
  const FourierDescriptor d = random_descriptor(5, rng);
  const FourierDescriptor back = FourierDescriptor::from_flat(5, d.flat());
  EXPECT_EQ(back.a, d.a);
  EXPECT_EQ(back.b, d.b);
  EXPECT_EQ(back.c, d.c);
  EXPECT_EQ(back.d, d.d);
  EXPECT_THROW(FourierDescriptor::from_flat(5, std::vector<double>(21)), std::invalid_argument);
}

TEST(Descriptor, ValidateRejectsBadShapes) {
  FourierDescriptor d = FourierDescriptor::zeros(2);
  d.b.push_back(0.0);
  EXPECT_THROW(d.validate(), std::invalid_argument);
  FourierDescriptor nan_desc = FourierDescriptor::zeros(1);
  nan_desc.a[0] = std::nan("");
  EXPECT_THROW(nan_desc.validate(), cpn::numerical_error);
}

TEST(SampleContour, CircleIdentity) {
  const double cx = 7.0, cy = -2.0, r = 5.0;
  FourierDescriptor d = FourierDescriptor::zeros(1);
  d.a[0] = cx;
  d.c[0] = cy;
  d.b[0] = r;
  d.c[1] = r;
  const std::vector<double> ts = cpn::uniform_ts(256);
  const Polyline pts = cpn::sample_contour(d, ts);
  for (std::size_t s = 0; s < ts.size(); ++s) {
    const double ang = 2.0 * kPi * ts[s];
    EXPECT_NEAR(pts[s][0], cx + r * std::cos(ang), 1e-9);
    EXPECT_NEAR(pts[s][1], cy + r * std::sin(ang), 1e-9);
  }
}

TEST(SampleContour, ConstantWhenOnlyOffsetsSet) {
  FourierDescriptor d = FourierDescriptor::zeros(4);
  d.a[0] = 3.5;
  d.c[0] = -1.25;
  for (const Point& p : cpn::sample_contour(d, cpn::uniform_ts(17))) {
    EXPECT_EQ(p[0], 3.5);
    EXPECT_EQ(p[1], -1.25);
  }
}

TEST(SampleContour, MatchesTermByTermReference) {
  cpn::Rng rng(11);
  const FourierDescriptor d = random_descriptor(8, rng);
  std::vector<double> ts;
  for (int i = 0; i < 33; ++i) ts.push_back(rng.uniform01());
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  const Polyline pts = cpn::sample_contour(d, ts);
  for (std::size_t s = 0; s < ts.size(); ++s) {
    const Point ref = eval_reference(d, ts[s]);
    EXPECT_NEAR(pts[s][0], ref[0], 1e-12);
    EXPECT_NEAR(pts[s][1], ref[1], 1e-12);
  }
}

TEST(SampleContour, ClosedAtPeriodEnds) {
  cpn::Rng rng(12);
  const FourierDescriptor d = random_descriptor(6, rng);
  const Polyline pts = cpn::sample_contour(d, {0.0, 1.0});
  EXPECT_NEAR(pts[0][0], pts[1][0], 1e-12);
  EXPECT_NEAR(pts[0][1], pts[1][1], 1e-12);
}

TEST(SampleContour, RejectsBadSamplingPositions) {
  const FourierDescriptor d = FourierDescriptor::zeros(1);
  EXPECT_THROW(cpn::sample_contour(d, {}), std::invalid_argument);
  EXPECT_THROW(cpn::sample_contour(d, {-0.1, 0.5}), std::invalid_argument);
  EXPECT_THROW(cpn::sample_contour(d, {0.0, 1.5}), std::invalid_argument);
  EXPECT_THROW(cpn::sample_contour(d, {0.4, 0.4}), std::invalid_argument);
  EXPECT_THROW(cpn::sample_contour(d, {0.6, 0.2}), std::invalid_argument);
}

TEST(SamplingPositions, UniformGrid) {
  const std::vector<double> ts = cpn::uniform_ts(4);
  ASSERT_EQ(ts.size(), 4u);
  EXPECT_EQ(ts[0], 0.0);
  EXPECT_EQ(ts[1], 0.25);
  EXPECT_EQ(ts[2], 0.5);
  EXPECT_EQ(ts[3], 0.75);
  EXPECT_THROW(cpn::uniform_ts(0), std::invalid_argument);
}

TEST(SamplingPositions, RandomSortedAndDeterministic) {
  cpn::Rng rng_a(99), rng_b(99);
  const std::vector<double> a = cpn::random_ts(64, rng_a);
  const std::vector<double> b = cpn::random_ts(64, rng_b);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 64u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_GE(a[i], 0.0);
    EXPECT_LE(a[i], 1.0);
    if (i > 0) EXPECT_LT(a[i - 1], a[i]);
  }
}

TEST(Canonicalize, ReversesClockwiseAndRotatesStart) {
  // Clockwise square; canonical form walks counter-clockwise from the
  // vertex with minimal y (ties by minimal x).
  const Polyline cw = {{2.0, 2.0}, {2.0, 6.0}, {6.0, 6.0}, {6.0, 2.0}};
  const Polyline canon = cpn::canonicalize(cw);
  ASSERT_EQ(canon.size(), 4u);
  EXPECT_EQ(canon[0][0], 2.0);
  EXPECT_EQ(canon[0][1], 2.0);
  EXPECT_GT(cpn::signed_area(canon), 0.0);
  EXPECT_EQ(canon[1][0], 6.0);  // next vertex along the bottom edge
  EXPECT_EQ(canon[1][1], 2.0);
}

TEST(Canonicalize, IdempotentAndDropsDuplicates) {
  cpn::Rng rng(21);
  const Polyline star = testutil::star_polygon(rng, 0.0, 0.0, 8.0, 40);
  const Polyline once = cpn::canonicalize(star);
  EXPECT_EQ(cpn::canonicalize(once), once);

  Polyline with_dups = star;
  with_dups.insert(with_dups.begin() + 5, with_dups[5]);
  with_dups.push_back(with_dups.front());
  EXPECT_EQ(cpn::canonicalize(with_dups), once);
}

TEST(Canonicalize, RejectsDegenerate) {
  EXPECT_THROW(cpn::canonicalize({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}}), cpn::numerical_error);
  EXPECT_THROW(cpn::canonicalize({{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}}), cpn::numerical_error);
  EXPECT_THROW(cpn::canonicalize({{0.0, 0.0}, {1.0, 1.0}}), cpn::numerical_error);
}

TEST(AreaPerimeter, SquareValues) {
  const Polyline sq = {{2.0, 2.0}, {6.0, 2.0}, {6.0, 6.0}, {2.0, 6.0}};
  EXPECT_DOUBLE_EQ(cpn::signed_area(sq), 16.0);
  EXPECT_DOUBLE_EQ(cpn::perimeter(sq), 16.0);
  Polyline rev(sq.rbegin(), sq.rend());
  EXPECT_DOUBLE_EQ(cpn::signed_area(rev), -16.0);
}

TEST(FitDescriptor, CircleLowOrderCoefficients) {
  const Polyline circle = testutil::circle_polygon(32.0, 32.0, 20.0, 256);
  const FourierDescriptor d = cpn::fit_descriptor(circle, 1);
  EXPECT_NEAR(d.a[0], 32.0, 1e-2);
  EXPECT_NEAR(d.c[0], 32.0, 1e-2);
  EXPECT_NEAR(d.b[0], 20.0, 1e-2);
  EXPECT_NEAR(d.c[1], 20.0, 1e-2);
  EXPECT_LT(std::abs(d.a[1]), 1e-2);
  EXPECT_LT(std::abs(d.d[0]), 1e-2);
}

TEST(FitDescriptor, MatchesProjectionOracle) {
  cpn::Rng rng(31);
  const Polyline star = testutil::star_polygon(rng, 5.0, -3.0, 9.0, 48);
  const FourierDescriptor fast = cpn::fit_descriptor(star, 6);
  const FourierDescriptor ref = projection_fit(star, 6, 1 << 16);
  for (std::size_t n = 0; n <= 6; ++n) {
    EXPECT_NEAR(fast.a[n], ref.a[n], 1e-6);
    EXPECT_NEAR(fast.c[n], ref.c[n], 1e-6);
  }
  for (std::size_t n = 0; n < 6; ++n) {
    EXPECT_NEAR(fast.b[n], ref.b[n], 1e-6);
    EXPECT_NEAR(fast.d[n], ref.d[n], 1e-6);
  }
}

TEST(FitDescriptor, SquareRoundTripStaysTight) {
  // 256-vertex square, 64 per side.
  Polyline square;
  const double lo = 10.0, hi = 22.0;
  for (int k = 0; k < 64; ++k) square.push_back({lo + (hi - lo) * k / 64.0, lo});
  for (int k = 0; k < 64; ++k) square.push_back({hi, lo + (hi - lo) * k / 64.0});
  for (int k = 0; k < 64; ++k) square.push_back({hi - (hi - lo) * k / 64.0, hi});
  for (int k = 0; k < 64; ++k) square.push_back({lo, hi - (hi - lo) * k / 64.0});
  ASSERT_EQ(square.size(), 256u);

  const FourierDescriptor d = cpn::fit_descriptor(square, 32);
  const Polyline resampled = cpn::sample_contour(d, cpn::uniform_ts(1024));
  double worst = 0.0;
  for (const Point& p : resampled)
    worst = std::max(worst, testutil::point_polygon_distance(p, square));
  EXPECT_LT(worst, 0.1);
}

TEST(FitDescriptor, TranslationMovesOnlyOffsets) {
  cpn::Rng rng(41);
  const Polyline star = testutil::star_polygon(rng, 0.0, 0.0, 7.0, 36);
  Polyline moved = star;
  for (Point& p : moved) {
    p[0] += 3.25;
    p[1] -= 1.5;
  }
  const FourierDescriptor base = cpn::fit_descriptor(star, 5);
  const FourierDescriptor shifted = cpn::fit_descriptor(moved, 5);
  EXPECT_NEAR(shifted.a[0] - base.a[0], 3.25, 1e-9);
  EXPECT_NEAR(shifted.c[0] - base.c[0], -1.5, 1e-9);
  for (std::size_t n = 1; n <= 5; ++n) {
    EXPECT_NEAR(shifted.a[n], base.a[n], 1e-9);
    EXPECT_NEAR(shifted.b[n - 1], base.b[n - 1], 1e-9);
    EXPECT_NEAR(shifted.c[n], base.c[n], 1e-9);
    EXPECT_NEAR(shifted.d[n - 1], base.d[n - 1], 1e-9);
  }
}

TEST(FitDescriptor, RecoversCoefficientsFromDenseResampling) {
  // Sampling a fitted descriptor densely and refitting recovers its
  // coefficients up to the speed distortion of the truncated series: the
  // order-6 curve is only approximately traversed at constant speed, so
  // the refit (which re-parameterizes by arc length) shifts coefficients
  // by the size of the discarded tail, a few 1e-3 for these stars.
  cpn::Rng rng(51);
  for (int trial = 0; trial < 5; ++trial) {
    const Polyline star = testutil::star_polygon(rng, rng.uniform(-4.0, 4.0),
                                                 rng.uniform(-4.0, 4.0), 8.0, 72);
    const FourierDescriptor d = cpn::fit_descriptor(cpn::canonicalize(star), 6);
    const Polyline sampled = cpn::sample_contour(d, cpn::uniform_ts(1024));
    const FourierDescriptor refit = cpn::fit_descriptor(sampled, 6);
    for (std::size_t n = 0; n <= 6; ++n) {
      EXPECT_NEAR(refit.a[n], d.a[n], 5e-3);
      EXPECT_NEAR(refit.c[n], d.c[n], 5e-3);
    }
    for (std::size_t n = 0; n < 6; ++n) {
      EXPECT_NEAR(refit.b[n], d.b[n], 5e-3);
      EXPECT_NEAR(refit.d[n], d.d[n], 5e-3);
    }
  }
}

TEST(FitDescriptor, RejectsBadInput) {
  EXPECT_THROW(cpn::fit_descriptor({{0.0, 0.0}, {1.0, 0.0}}, 2), cpn::numerical_error);
  EXPECT_THROW(cpn::fit_descriptor({{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}}, 2),
               cpn::numerical_error);
  const Polyline tri = {{0.0, 0.0}, {4.0, 0.0}, {0.0, 4.0}};
  EXPECT_THROW(cpn::fit_descriptor(tri, 0), std::invalid_argument);
}

TEST(EfdSampleOp, MatchesSampleContour) {
  cpn::Rng rng(61);
  const FourierDescriptor d = random_descriptor(4, rng);
  const std::vector<double> ts = cpn::uniform_ts(9);
  const cpn::Tensor desc = cpn::Tensor::from_values({cpn::descriptor_dim(4)}, d.flat());
  const cpn::Tensor out = cpn::efd_sample(desc, ts);
  const Polyline ref = cpn::sample_contour(d, ts);
  ASSERT_EQ(out.shape(), (cpn::Shape{9, 2}));
  for (std::size_t s = 0; s < 9; ++s) {
    EXPECT_EQ(out[s * 2 + 0], ref[s][0]);
    EXPECT_EQ(out[s * 2 + 1], ref[s][1]);
  }
}

TEST(EfdSampleOp, GradientIsTheBasisFactor) {
  // d x_s / d a_n = sin(2 pi n t_s), d x_s / d b_n = cos(2 pi n t_s).
  const std::size_t order = 3;
  cpn::Rng rng(71);
  const FourierDescriptor d = random_descriptor(order, rng);
  const std::vector<double> ts = {0.05, 0.3, 0.62};
  for (std::size_t s = 0; s < ts.size(); ++s) {
    cpn::Tensor desc = cpn::Tensor::from_values({cpn::descriptor_dim(order)}, d.flat(), true);
    cpn::Tensor out = cpn::efd_sample(desc, ts);
    // Select x_s via a one-hot weighted sum.
    std::vector<double> onehot(out.size(), 0.0);
    onehot[s * 2] = 1.0;
    const cpn::Tensor picked =
        cpn::sum(cpn::mul(out, cpn::Tensor::from_values(out.shape(), onehot)));
    cpn::backward(picked);
    const auto& g = desc.grad();
    EXPECT_NEAR(g[0], 1.0, 1e-9);  // a_0
    for (std::size_t n = 1; n <= order; ++n) {
      const double ang = 2.0 * kPi * static_cast<double>(n) * ts[s];
      EXPECT_NEAR(g[n], std::sin(ang), 1e-9);
      EXPECT_NEAR(g[order + n], std::cos(ang), 1e-9);
      EXPECT_NEAR(g[2 * order + 1 + n], 0.0, 1e-9);
    }
  }
}

TEST(AssembleDescriptor, RoutesOffsetsAndCoefficients) {
  const std::size_t order = 2;
  const cpn::Tensor off = cpn::Tensor::from_values({2}, {10.0, 20.0});
  const cpn::Tensor coeffs =
      cpn::Tensor::from_values({4 * order}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0});
  const cpn::Tensor flat = cpn::assemble_descriptor(off, coeffs);
  ASSERT_EQ(flat.size(), cpn::descriptor_dim(order));
  const FourierDescriptor d = FourierDescriptor::from_flat(order, flat.values());
  EXPECT_EQ(d.a[0], 10.0);
  EXPECT_EQ(d.c[0], 20.0);
  EXPECT_EQ(d.a[1], 1.0);
  EXPECT_EQ(d.a[2], 2.0);
  EXPECT_EQ(d.b[0], 3.0);
  EXPECT_EQ(d.b[1], 4.0);
  EXPECT_EQ(d.c[1], 5.0);
  EXPECT_EQ(d.c[2], 6.0);
  EXPECT_EQ(d.d[0], 7.0);
  EXPECT_EQ(d.d[1], 8.0);
}

}  // namespace
