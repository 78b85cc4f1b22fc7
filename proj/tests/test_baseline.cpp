#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "qrater/baseline_clipping.hpp"
#include "qrater/errors.hpp"
#include "qrater/quantizer.hpp"
#include "support.hpp"

using namespace qrater;
using namespace qrater::baseline;

namespace {

double squared_error_oracle(const Tensor& w, double th, int q) {
  const double m = std::pow(2.0, q - 1) - 1, s = th / m;
  double e = 0.0;
  for (float v : w.data()) {
    const double c = std::clamp(static_cast<double>(v), -th, th);
    const double d = v - s * std::clamp(std::floor(c / s + 0.5), -m, m);
    e += d * d;
  }
  return e;
}

double fine_sweep(const Tensor& w, int q, int n) {
  const double mx = w.max_abs();
  double best = mx, best_err = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= n; ++k) {
    const double th = mx * k / n;
    const double e = squared_error_oracle(w, th, q);
    if (e < best_err) best_err = e, best = th;
  }
  return best;
}

// Entropy-calibration KL for one candidate bin count, written from the recipe.
double kl_oracle(const std::vector<double>& hist, int used, int levels) {
  std::vector<double> p(hist.begin(), hist.begin() + used);
  for (std::size_t j = static_cast<std::size_t>(used); j < hist.size(); ++j) p.back() += hist[j];
  std::vector<double> q(static_cast<std::size_t>(used), 0.0);
  for (int g = 0; g < levels; ++g) {
    const int lo = g * used / levels, hi = (g + 1) * used / levels;
    double mass = 0.0;
    int nz = 0;
    for (int j = lo; j < hi; ++j) mass += hist[j], nz += hist[j] > 0;
    for (int j = lo; j < hi; ++j) q[j] = hist[j] > 0 ? mass / nz : 0.0;
  }
  double ps = 0.0, qs = 0.0;
  for (int j = 0; j < used; ++j) ps += p[j], qs += q[j];
  double kl = 0.0;
  for (int j = 0; j < used; ++j) {
    if (p[j] <= 0) continue;
    kl += p[j] / ps * std::log((p[j] / ps + 1e-12) / (q[j] / qs + 1e-12));
  }
  return kl;
}

double laplace_sample(Rng& rng, double b) {
  const double u = uniform01(rng) - 0.5;
  return -b * (u < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::fabs(u));
}

}  // namespace

TEST(ClipMse, OnGridTensorKeepsFullRange) {
  Rng rng(41);
  Tensor w({200});
  for (float& v : w.data()) v = static_cast<float>((static_cast<int>(uniform_index(rng, 7)) - 3) / 128.0);
  w[0] = 3.0f / 128.0f;
  EXPECT_EQ(clip_mse(w, 3), w.max_abs());
  EXPECT_EQ(rtn_squared_error(w, w.max_abs(), 3), 0.0);
}

TEST(ClipMse, OutlierPairMatchesFineSweep) {
  Tensor w({64});
  for (std::int64_t i = 0; i < 62; ++i) w[i] = i % 2 ? 1.0f : -1.0f;
  w[62] = 100.0f;
  w[63] = -100.0f;
  const double th = clip_mse(w, 3);
  EXPECT_LE(std::fabs(th - fine_sweep(w, 3, 1000)), w.max_abs() / 100 + 1e-12);
}

TEST(ClipMse, SymmetricUnderNegation) {
  Rng rng(42);
  const Tensor w = qtest::heavy_tailed_tensor(500, rng);
  Tensor neg = w;
  for (float& v : neg.data()) v = -v;
  EXPECT_EQ(clip_mse(w, 4), clip_mse(neg, 4));
}

TEST(ClipMse, HeavyTailedTensorsAgreeWithTenfoldFinerSweep) {
  Rng rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    const int q = 2 + static_cast<int>(uniform_index(rng, 5));
    const Tensor w = qtest::heavy_tailed_tensor(400, rng);
    const double th = clip_mse(w, q, 100);
    EXPECT_LE(std::fabs(th - fine_sweep(w, q, 1000)), w.max_abs() / 100 + 1e-12) << "trial " << trial;
    EXPECT_GT(th, 0.0);
    EXPECT_LE(th, w.max_abs());
  }
}

TEST(ClipKl, UniformHistogramWithFineGridKeepsFullRange) {
  Tensor w({1024});
  for (std::int64_t i = 0; i < 1024; ++i) w[i] = static_cast<float>((i - 511.5) / 512.0);
  EXPECT_DOUBLE_EQ(clip_kl(w, 8, 64, 100), w.max_abs());
}

TEST(ClipKl, BimodalTensorClipsBelowMax) {
  Rng rng(44);
  Tensor w({2000});
  for (std::int64_t i = 0; i < 2000; ++i) {
    w[i] = static_cast<float>(i < 1990 ? uniform(rng, -0.1, 0.1) : (i % 2 ? 5.0 : -5.0) * uniform(rng, 0.9, 1.0));
  }
  const int bins = 2048, n = 100, q = 4;
  const double th = clip_kl(w, q, bins, n);
  EXPECT_LT(th, w.max_abs());

  // Brute-force sweep of the same objective.
  std::vector<double> hist(bins, 0.0);
  for (float v : w.data()) hist[std::min<int>(bins - 1, static_cast<int>(std::fabs(v) / w.max_abs() * bins))] += 1;
  double best = w.max_abs(), best_kl = std::numeric_limits<double>::infinity();
  for (int k = n; k >= 1; --k) {
    const int used = static_cast<int>(std::lround(static_cast<double>(k) * bins / n));
    if (used < grid_max(q)) continue;
    const double kl = kl_oracle(hist, used, static_cast<int>(grid_max(q)));
    if (kl < best_kl) best_kl = kl, best = static_cast<double>(used) / bins * w.max_abs();
  }
  EXPECT_DOUBLE_EQ(th, best);
}

TEST(ClipKl, ScaleEquivariant) {
  Rng rng(45);
  const Tensor w = qtest::heavy_tailed_tensor(3000, rng);
  Tensor w2 = w;
  for (float& v : w2.data()) v *= 2.0f;
  EXPECT_DOUBLE_EQ(clip_kl(w2, 4), 2.0 * clip_kl(w, 4));
}

TEST(ClipAciq, MatchesMonteCarloOracle) {
  Rng rng(46);
  const int n = 200000;
  Tensor w({n});
  for (float& v : w.data()) v = static_cast<float>(laplace_sample(rng, 1.0));
  double med_b = 0.0;
  {
    std::vector<float> sorted(w.data().begin(), w.data().end());
    std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
    const double med = sorted[n / 2];
    for (float v : w.data()) med_b += std::fabs(v - med);
    med_b /= n;
  }
  for (int q : {3, 4}) {
    // Empirical expected MSE minimized over a fine threshold grid.
    double best_t = 0.0, best_err = std::numeric_limits<double>::infinity();
    for (double t = 0.5; t <= 12.0; t += 0.01) {
      const double e = squared_error_oracle(w, t * med_b, q);
      if (e < best_err) best_err = e, best_t = t;
    }
    const double ratio = clip_aciq(w, q) / med_b;
    EXPECT_NEAR(ratio, best_t, 0.05 * best_t) << "q=" << q;
  }
}

TEST(ClipAciq, ScaleEquivariantAndWiderAtMoreBits) {
  Rng rng(47);
  Tensor w({20000});
  for (float& v : w.data()) v = static_cast<float>(laplace_sample(rng, 0.3));
  Tensor w3 = w;
  for (float& v : w3.data()) v *= 3.0f;
  EXPECT_NEAR(clip_aciq(w3, 4), 3.0 * clip_aciq(w, 4), 1e-6 * clip_aciq(w3, 4));
  EXPECT_GT(clip_aciq(w, 8), clip_aciq(w, 4));
}

TEST(Selectors, RangeAndDeterminism) {
  Rng rng(48);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w = qtest::heavy_tailed_tensor(300, rng);
    for (ClipKind kind : {ClipKind::mse, ClipKind::kl, ClipKind::aciq}) {
      const double th = select_threshold(w, 4, ClipMethod{kind});
      EXPECT_GT(th, 0.0);
      EXPECT_LE(th, w.max_abs());
      EXPECT_EQ(th, select_threshold(w, 4, ClipMethod{kind}));
    }
  }
}

TEST(Selectors, DegenerateAndInvalidConfig) {
  const Tensor zero({16});
  EXPECT_THROW(clip_mse(zero, 4), DegenerateScaleError);
  EXPECT_THROW(clip_kl(zero, 4), DegenerateScaleError);
  EXPECT_THROW(clip_aciq(zero, 4), DegenerateScaleError);
  EXPECT_THROW((ClipMethod{ClipKind::mse, 1, 2048}).validate(), ArgumentError);
  EXPECT_THROW((ClipMethod{ClipKind::kl, 100, 8}).validate(), ArgumentError);
  EXPECT_THROW(select_threshold(Tensor({4}, 1.0f), 4, ClipMethod{ClipKind::gamma_sweep}), ArgumentError);
  EXPECT_EQ(clip_kind_from_string("qrater"), ClipKind::gamma_sweep);
  EXPECT_THROW(clip_kind_from_string("l1"), ArgumentError);
}
