#include "qrater/bayes_opt.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qrater/errors.hpp"
#include "qrater/random.hpp"

namespace qrater {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kLengthLadder[] = {0.03, 0.05, 0.08, 0.12, 0.18, 0.27, 0.4, 0.6, 0.9, 1.35};

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

// Lower Cholesky factor of K, retrying with growing jitter.
bool factor(MatrixXd k, MatrixXd& lower) {
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    if (jitter > 0.0) k.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(k);
    if (llt.info() == Eigen::Success) {
      lower = llt.matrixL();
      return true;
    }
    jitter = jitter == 0.0 ? 1e-10 : jitter * 100.0;
  }
  return false;
}

}  // namespace

std::vector<double> Bounds::clamp(std::span<const double> x) const {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lower[i], upper[i]);
  return out;
}

GaussianProcess::GaussianProcess(double noise) : noise_(noise) {}

void GaussianProcess::fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
  if (x.empty() || x.size() != y.size()) throw ArgumentError("GaussianProcess::fit needs matching non-empty data");
  const auto n = static_cast<Eigen::Index>(x.size());
  x_ = x;
  y_mean_ = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - y_mean_) * (v - y_mean_);
  y_std_ = std::sqrt(var / static_cast<double>(y.size()));
  if (!(y_std_ > 1e-12)) y_std_ = 1.0;
  VectorXd ys(n);
  for (Eigen::Index i = 0; i < n; ++i) ys(i) = (y[static_cast<std::size_t>(i)] - y_mean_) / y_std_;

  MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) d2(i, j) = d2(j, i) = sq_dist(x[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(j)]);
  }

  double best_lml = -std::numeric_limits<double>::infinity();
  MatrixXd best_l;
  VectorXd best_alpha;
  for (double ell : kLengthLadder) {
    MatrixXd k = (-d2.array() / (2.0 * ell * ell)).exp().matrix();
    k.diagonal().array() += noise_;
    MatrixXd l;
    if (!factor(std::move(k), l)) continue;
    VectorXd alpha = l.triangularView<Eigen::Lower>().solve(ys);
    alpha = l.transpose().triangularView<Eigen::Upper>().solve(alpha);
    const double lml = -0.5 * ys.dot(alpha) - l.diagonal().array().log().sum();
    if (lml > best_lml) {
      best_lml = lml;
      best_l = std::move(l);
      best_alpha = std::move(alpha);
      length_scale_ = ell;
    }
  }
  if (best_l.size() == 0) throw ArgumentError("GaussianProcess::fit: kernel matrix is not positive definite");
  alpha_.assign(best_alpha.data(), best_alpha.data() + n);
  chol_.resize(static_cast<std::size_t>(n * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) chol_[static_cast<std::size_t>(i * n + j)] = best_l(i, j);
  }
}

std::pair<double, double> GaussianProcess::predict(std::span<const double> x) const {
  const std::size_t n = x_.size();
  if (n == 0) return {y_mean_, y_std_};
  std::vector<double> k(n), v(n);
  const double inv = 1.0 / (2.0 * length_scale_ * length_scale_);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    k[i] = std::exp(-sq_dist(x, x_[i]) * inv);
    mean += k[i] * alpha_[i];
  }
  // Forward substitution v = L^-1 k.
  double vv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = k[i];
    const double* row = chol_.data() + i * n;
    for (std::size_t j = 0; j < i; ++j) acc -= row[j] * v[j];
    v[i] = acc / row[i];
    vv += v[i] * v[i];
  }
  const double var = std::max(1.0 - vv, 0.0);
  return {y_mean_ + mean * y_std_, std::sqrt(var) * y_std_};
}

BOResult bo_optimize(const ObjectiveFn& f, const Bounds& bounds, std::vector<Observation> probes,
                     const BOConfig& config) {
  const std::size_t d = bounds.dims();
  if (d == 0 || bounds.upper.size() != d) throw ArgumentError("bo_optimize: malformed bounds");
  for (std::size_t i = 0; i < d; ++i) {
    if (!(bounds.upper[i] > bounds.lower[i])) throw ArgumentError("bo_optimize: empty bound interval");
  }
  if (config.n_extra < 0) throw ArgumentError("bo_optimize: n_extra must be >= 0");

  BOResult result;
  double worst = std::numeric_limits<double>::infinity();
  auto record = [&](Observation obs) {
    if (obs.params.size() != d) throw ArgumentError("bo_optimize: observation has wrong dimension");
    if (!std::isfinite(obs.score.value)) {
      obs.score.value = (std::isfinite(worst) ? worst : 0.0) - 1.0;
      if (!std::isfinite(obs.score.tiebreak)) obs.score.tiebreak = 0.0;
    }
    worst = std::min(worst, obs.score.value);
    result.observations.push_back(std::move(obs));
  };
  for (auto& p : probes) record(std::move(p));

  auto to_unit = [&](std::span<const double> x) {
    std::vector<double> u(d);
    for (std::size_t i = 0; i < d; ++i) u[i] = (x[i] - bounds.lower[i]) / (bounds.upper[i] - bounds.lower[i]);
    return u;
  };
  auto from_unit = [&](std::span<const double> u) {
    std::vector<double> x(d);
    for (std::size_t i = 0; i < d; ++i) x[i] = bounds.lower[i] + u[i] * (bounds.upper[i] - bounds.lower[i]);
    return bounds.clamp(x);
  };

  Rng rng(config.seed);
  GaussianProcess gp(config.noise);
  for (int round = 0; round < config.n_extra; ++round) {
    std::vector<double> next(d);
    if (result.observations.empty()) {
      for (auto& v : next) v = uniform01(rng);
    } else {
      std::vector<std::vector<double>> xs;
      std::vector<double> ys;
      for (const auto& o : result.observations) {
        xs.push_back(to_unit(o.params));
        ys.push_back(o.score.value);
      }
      gp.fit(xs, ys);
      auto ucb = [&](std::span<const double> u) {
        const auto [mu, sd] = gp.predict(u);
        return mu + config.kappa * sd;
      };
      std::vector<std::pair<double, std::vector<double>>> starts;
      starts.reserve(static_cast<std::size_t>(config.random_starts));
      for (int s = 0; s < config.random_starts; ++s) {
        std::vector<double> u(d);
        for (auto& v : u) v = uniform01(rng);
        starts.emplace_back(ucb(u), std::move(u));
      }
      std::stable_sort(starts.begin(), starts.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      const auto refine = std::min<std::size_t>(starts.size(), static_cast<std::size_t>(std::max(config.refined_starts, 1)));
      double best_acq = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < refine; ++s) {
        auto [val, u] = starts[s];
        // Compass search with step halving, projected onto the unit box.
        for (double step = 0.05; step > 1e-5;) {
          bool moved = false;
          for (std::size_t i = 0; i < d && !moved; ++i) {
            for (double dir : {1.0, -1.0}) {
              auto cand = u;
              cand[i] = std::clamp(cand[i] + dir * step, 0.0, 1.0);
              const double a = ucb(cand);
              if (a > val) {
                val = a;
                u = std::move(cand);
                moved = true;
                break;
              }
            }
          }
          if (!moved) step *= 0.5;
        }
        if (val > best_acq) {
          best_acq = val;
          next = u;
        }
      }
    }
    auto params = from_unit(next);
    Score score = f(params);
    record(Observation{std::move(params), score, true});
  }

  if (result.observations.empty()) throw ArgumentError("bo_optimize: nothing to optimize (no probes, n_extra = 0)");
  for (std::size_t i = 1; i < result.observations.size(); ++i) {
    if (better(result.observations[i].score, result.observations[result.best_index].score)) result.best_index = i;
  }
  return result;
}

}  // namespace qrater
