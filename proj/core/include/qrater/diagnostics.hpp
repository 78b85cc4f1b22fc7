#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qrater/calibration.hpp"
#include "qrater/model.hpp"
#include "qrater/plan.hpp"

namespace qrater {

/// Weights and biases of every weighted layer, indexed by layer (entry 0 and
/// non-weighted layers empty).
struct WeightSet {
  std::vector<std::optional<Tensor>> weights;
  std::vector<std::optional<Tensor>> biases;
};

/// The weights each layer runs with under `plan` (quantized weights and
/// corrected biases); full precision when `plan` is null.
WeightSet materialize_weights(const ModelGraph& model, const QuantizationPlan* plan);

/// Copy of `model` running with `weights`.
ModelGraph with_weights(const ModelGraph& model, const WeightSet& weights);

/// Interior sample k violates the chord rule between its neighbours:
/// f(x_k) > lambda f(x1) + (1 - lambda) f(x2) + tolerance.
struct ConvexityViolation {
  double lambda = 0.0;
  std::size_t x1 = 0;
  std::size_t x2 = 0;
  std::size_t mid = 0;
};

struct TrajectoryReport {
  std::vector<double> alphas;
  std::vector<double> losses;
  std::vector<double> accuracies;
  std::vector<ConvexityViolation> violations;
};

/// Chord-rule check on consecutive sample triples of a 1-D curve.
std::vector<ConvexityViolation> convexity_violations(const std::vector<double>& xs, const std::vector<double>& fs,
                                                     double tolerance = 1e-9);

/// n_points evenly spaced alphas in [0, 1], endpoints exact.
std::vector<double> interpolation_alphas(int n_points);

/// Samples loss(alpha) on interpolation_alphas(n_points) and flags violations.
TrajectoryReport trace_curve(const std::function<double(double)>& loss, int n_points, double tolerance = 1e-9);

/// Cross-entropy on `calib` along (1 - alpha) W1 + alpha W2. Activation
/// quantization is not applied. Throws DimensionError when the sets do not
/// fit the model.
TrajectoryReport interpolate_trajectory(const ModelGraph& model, const WeightSet& w1, const WeightSet& w2,
                                        int n_points, const CalibrationSet& calib, int threads = 1);

struct CorrelationPoint {
  double quant_error = 0.0;  // sum of (w - w')^2 over the layer
  double loss = 0.0;
  LayerQuantState config;
};

struct CorrelationReport {
  std::vector<CorrelationPoint> points;
  std::optional<double> pearson_r;
  /// Why pearson_r is absent.
  std::string reason;
};

struct PearsonResult {
  std::optional<double> r;
  std::string reason;
};

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

/// `n` random 2nd-order weight configs for `layer`: gamma_c in [0.1, 1],
/// gamma_n in [-1, 1], gamma_s in [0, 1].
std::vector<LayerQuantState> random_layer_configs(const ModelGraph& model, int layer, int n, int bits,
                                                  std::uint64_t seed);

/// Quantizes only `layer` with each config and records (quantization error,
/// calibration cross-entropy). Needs at least 3 configs.
CorrelationReport correlation_study(const ModelGraph& model, int layer, const std::vector<LayerQuantState>& configs,
                                    const CalibrationSet& calib, int threads = 1);

/// `alpha,loss` rows.
void write_trajectory_csv(const TrajectoryReport& report, std::ostream& out);
/// `qerr,loss,params_json` rows.
void write_correlation_csv(const CorrelationReport& report, std::ostream& out);

}  // namespace qrater
