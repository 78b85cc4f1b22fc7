#include "qrater/baseline_clipping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "qrater/errors.hpp"
#include "qrater/quantizer.hpp"

namespace qrater::baseline {
namespace {

double checked_max_abs(const Tensor& w, const char* who) {
  if (w.empty()) throw ArgumentError(std::string(who) + ": empty tensor");
  const double m = w.max_abs();
  if (m == 0.0) throw DegenerateScaleError(std::string(who) + ": all-zero tensor has no threshold");
  return m;
}

double median(std::vector<double> v) {
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2) return upper;
  return 0.5 * (upper + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

// Composite Simpson rule on [a, b] with `n` (even) panels.
template <typename F>
double simpson(F&& f, double a, double b, int n) {
  if (b <= a) return 0.0;
  const double h = (b - a) / n;
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

}  // namespace

std::string to_string(ClipKind kind) {
  switch (kind) {
    case ClipKind::mse: return "mse";
    case ClipKind::kl: return "kl";
    case ClipKind::aciq: return "aciq";
    case ClipKind::gamma_sweep: return "gamma_sweep";
  }
  return "?";
}

ClipKind clip_kind_from_string(const std::string& name) {
  if (name == "mse") return ClipKind::mse;
  if (name == "kl") return ClipKind::kl;
  if (name == "aciq") return ClipKind::aciq;
  if (name == "gamma_sweep" || name == "qrater") return ClipKind::gamma_sweep;
  throw ArgumentError("unknown clipping method '" + name + "'");
}

void ClipMethod::validate() const {
  if (num_candidates < 2) throw ArgumentError("num_candidates must be >= 2");
  if (histogram_bins < 16) throw ArgumentError("histogram_bins must be >= 16");
}

double rtn_squared_error(const Tensor& w, double threshold, int bits) {
  const auto m = grid_max(bits);
  const double s = threshold / static_cast<double>(m);
  double err = 0.0;
  for (float v : w.data()) {
    const double x = v;
    const double c = std::max(std::min(x, threshold), -threshold);
    const auto k = std::clamp(static_cast<std::int64_t>(std::floor(c / s + 0.5)), -m, m);
    const double d = x - s * static_cast<double>(k);
    err += d * d;
  }
  return err;
}

double clip_mse(const Tensor& w, int bits, int num_candidates) {
  ClipMethod{ClipKind::mse, num_candidates, 16}.validate();
  const double max_abs = checked_max_abs(w, "clip_mse");
  double best_th = max_abs, best_err = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= num_candidates; ++k) {
    const double th = (static_cast<double>(k) / num_candidates) * max_abs;
    const double err = rtn_squared_error(w, th, bits);
    if (err < best_err) {
      best_err = err;
      best_th = th;
    }
  }
  return best_th;
}

double clip_kl(const Tensor& w, int bits, int bins, int num_candidates) {
  ClipMethod{ClipKind::kl, num_candidates, bins}.validate();
  const double max_abs = checked_max_abs(w, "clip_kl");
  const auto levels = static_cast<int>(std::min<std::int64_t>(grid_max(bits), bins));
  constexpr double kEps = 1e-12;

  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  for (float v : w.data()) {
    const auto idx = std::min<std::int64_t>(bins - 1, static_cast<std::int64_t>(std::fabs(v) / max_abs * bins));
    hist[static_cast<std::size_t>(idx)] += 1.0;
  }

  double best_th = max_abs, best_kl = std::numeric_limits<double>::infinity();
  std::vector<double> p, q;
  for (int k = num_candidates; k >= 1; --k) {
    const int used = static_cast<int>(std::lround(static_cast<double>(k) * bins / num_candidates));
    if (used < levels || used < 1) continue;
    p.assign(hist.begin(), hist.begin() + used);
    for (int j = used; j < bins; ++j) p.back() += hist[static_cast<std::size_t>(j)];

    q.assign(static_cast<std::size_t>(used), 0.0);
    for (int g = 0; g < levels; ++g) {
      const int lo = static_cast<int>(static_cast<std::int64_t>(g) * used / levels);
      const int hi = static_cast<int>(static_cast<std::int64_t>(g + 1) * used / levels);
      double mass = 0.0;
      int nonzero = 0;
      for (int j = lo; j < hi; ++j) {
        mass += hist[static_cast<std::size_t>(j)];
        nonzero += hist[static_cast<std::size_t>(j)] > 0.0;
      }
      if (nonzero == 0) continue;
      for (int j = lo; j < hi; ++j) {
        if (hist[static_cast<std::size_t>(j)] > 0.0) q[static_cast<std::size_t>(j)] = mass / nonzero;
      }
    }
    double psum = 0.0, qsum = 0.0;
    for (int j = 0; j < used; ++j) {
      psum += p[static_cast<std::size_t>(j)];
      qsum += q[static_cast<std::size_t>(j)];
    }
    double kl = 0.0;
    for (int j = 0; j < used; ++j) {
      const double pj = p[static_cast<std::size_t>(j)] / psum;
      if (pj <= 0.0) continue;
      const double qj = qsum > 0.0 ? q[static_cast<std::size_t>(j)] / qsum : 0.0;
      kl += pj * std::log((pj + kEps) / (qj + kEps));
    }
    if (kl < best_kl) {
      best_kl = kl;
      best_th = (static_cast<double>(used) / bins) * max_abs;
    }
  }
  return best_th;
}

double laplace_expected_mse(double b, double threshold, int bits) {
  if (!(b > 0.0) || !(threshold > 0.0)) throw ArgumentError("laplace_expected_mse: b and threshold must be positive");
  const auto m = grid_max(bits);
  const double step = threshold / static_cast<double>(m);
  const double norm = 1.0 / (2.0 * b);
  double half = 0.0;
  for (std::int64_t k = 0; k <= m; ++k) {
    const double level = step * static_cast<double>(k);
    const double lo = k == 0 ? 0.0 : level - 0.5 * step;
    const double hi = k == m ? threshold : level + 0.5 * step;
    half += simpson([&](double x) { return (x - level) * (x - level) * norm * std::exp(-x / b); }, lo, hi, 32);
  }
  // Tail beyond the threshold saturates to it: integral of (x - t)^2 density.
  half += b * b * std::exp(-threshold / b);
  return 2.0 * half;
}

double clip_aciq(const Tensor& w, int bits) {
  const double max_abs = checked_max_abs(w, "clip_aciq");
  std::vector<double> v(w.data().begin(), w.data().end());
  const double med = median(v);
  double b = 0.0;
  for (double x : v) b += std::fabs(x - med);
  b /= static_cast<double>(v.size());
  if (!(b > 0.0)) throw DegenerateScaleError("clip_aciq: Laplace scale is zero");

  // Minimize over t = threshold / b: log-spaced scan, then golden section.
  auto cost = [&](double t) { return laplace_expected_mse(1.0, t, bits); };
  constexpr int kScan = 240;
  const double lo = std::log(0.05), hi = std::log(60.0);
  int best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<double> ts(kScan);
  for (int i = 0; i < kScan; ++i) {
    ts[static_cast<std::size_t>(i)] = std::exp(lo + (hi - lo) * i / (kScan - 1));
    const double c = cost(ts[static_cast<std::size_t>(i)]);
    if (c < best_cost) {
      best_cost = c;
      best = i;
    }
  }
  double a = ts[static_cast<std::size_t>(std::max(best - 1, 0))];
  double c = ts[static_cast<std::size_t>(std::min(best + 1, kScan - 1))];
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = c - phi * (c - a), x2 = a + phi * (c - a);
  double f1 = cost(x1), f2 = cost(x2);
  for (int it = 0; it < 80 && c - a > 1e-9; ++it) {
    if (f1 < f2) {
      c = x2;
      x2 = x1;
      f2 = f1;
      x1 = c - phi * (c - a);
      f1 = cost(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (c - a);
      f2 = cost(x2);
    }
  }
  return std::min(0.5 * (a + c) * b, max_abs);
}

double select_threshold(const Tensor& w, int bits, const ClipMethod& method) {
  method.validate();
  switch (method.kind) {
    case ClipKind::mse: return clip_mse(w, bits, method.num_candidates);
    case ClipKind::kl: return clip_kl(w, bits, method.histogram_bins, method.num_candidates);
    case ClipKind::aciq: return clip_aciq(w, bits);
    case ClipKind::gamma_sweep: break;
  }
  throw ArgumentError("gamma_sweep clipping is searched, not selected");
}

}  // namespace qrater::baseline
