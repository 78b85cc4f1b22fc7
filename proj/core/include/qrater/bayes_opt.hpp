#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace qrater {

/// Objective value with a secondary key that breaks ties (higher is better
/// for both).
struct Score {
  double value = 0.0;
  double tiebreak = 0.0;
};

/// True when `a` is strictly better than `b`.
inline bool better(const Score& a, const Score& b) noexcept {
  return a.value > b.value || (a.value == b.value && a.tiebreak > b.tiebreak);
}

/// Axis-aligned search box.
struct Bounds {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dims() const noexcept { return lower.size(); }
  std::vector<double> clamp(std::span<const double> x) const;
};

struct BOConfig {
  int n_extra = 50;
  double kappa = 2.576;
  double noise = 1e-6;
  int random_starts = 256;
  /// Random starts that are refined by local search.
  int refined_starts = 16;
  std::uint64_t seed = 0;
};

struct Observation {
  std::vector<double> params;
  Score score;
  bool from_bo = false;
};

using ObjectiveFn = std::function<Score(std::span<const double>)>;

struct BOResult {
  std::vector<Observation> observations;  // probes first, then BO suggestions in order
  std::size_t best_index = 0;

  const Observation& best() const { return observations.at(best_index); }
};

/// Gaussian-process regression with an isotropic RBF kernel on the unit box.
/// Targets are standardized; the length scale is picked from a fixed ladder by
/// log marginal likelihood.
class GaussianProcess {
 public:
  GaussianProcess(double noise = 1e-6);

  void fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y);
  /// Posterior mean and standard deviation in the original target units.
  std::pair<double, double> predict(std::span<const double> x) const;
  double length_scale() const noexcept { return length_scale_; }

 private:
  double noise_;
  double length_scale_ = 0.2;
  double y_mean_ = 0.0, y_std_ = 1.0;
  std::vector<std::vector<double>> x_;
  std::vector<double> alpha_;
  std::vector<double> chol_;  // row-major lower factor
};

/// Registers `probes`, then runs `config.n_extra` rounds of UCB-guided
/// suggestions, evaluating `f` at each. The result is the first best point
/// over all observations, so it is never worse than the best probe. A
/// non-finite value is recorded as (worst seen - 1).
BOResult bo_optimize(const ObjectiveFn& f, const Bounds& bounds, std::vector<Observation> probes,
                     const BOConfig& config);

}  // namespace qrater
