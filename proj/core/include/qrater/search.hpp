#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qrater/baseline_clipping.hpp"
#include "qrater/bayes_opt.hpp"
#include "qrater/calibration.hpp"
#include "qrater/evaluator.hpp"
#include "qrater/model.hpp"
#include "qrater/plan.hpp"

namespace qrater {

enum class Phase { weight_clip, weight_round, act_clip, act_round, bias };

std::string to_string(Phase phase);
Phase phase_from_string(const std::string& name);

/// Inclusive arithmetic range; values are rounded to 1e-12 so that
/// accumulated steps land on the intended decimals.
struct GridAxis {
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;

  std::vector<double> values() const;
};

struct GridSpec {
  GridAxis gamma_c{0.1, 1.0, 0.1};
  GridAxis gamma_n{-1.0, 1.0, 0.1};
  GridAxis gamma_s{0.0, 1.0, 0.25};
};

enum class BiasMode { none, always, selective };

std::string to_string(BiasMode mode);
BiasMode bias_mode_from_string(const std::string& name);

/// One quantization pipeline. The defaults are full Q-Rater: gamma_c search,
/// 2nd-order rounding search and selective bias correction, on weights and
/// activations.
struct PipelineConfig {
  int weight_bits = 4;
  int act_bits = 4;
  bool quantize_activations = true;
  /// gamma_sweep searches gamma_c; the other kinds pick thresholds directly.
  baseline::ClipMethod clip{baseline::ClipKind::gamma_sweep};
  /// rtn disables the rounding search.
  RoundingOrder rounding = RoundingOrder::second;
  BiasMode bias = BiasMode::selective;
  GridSpec grid;
  BOConfig bo;
  Metric metric = Metric::top1_accuracy;
  /// Samples per activation-threshold batch.
  std::int64_t act_batch_size = 100;
  int threads = 1;
  std::int64_t chunk_size = 64;

  void validate() const;
};

/// Canonical MSE clipping + RTN pipeline with no bias correction.
PipelineConfig mse_rtn_baseline(int weight_bits, int act_bits);

enum class PointSource { grid, bo };

struct TracePoint {
  std::vector<double> params;
  Score score;
  Evaluation eval;
  PointSource source = PointSource::grid;
  /// Position in the run's evaluation sequence.
  std::int64_t timestamp = 0;
};

struct SearchTrace {
  int layer = 0;
  Phase phase = Phase::weight_clip;
  std::vector<std::string> param_names;
  std::vector<TracePoint> points;
  std::vector<double> chosen;
  /// Non-empty when the phase was skipped.
  std::string skipped;

  /// Index of the chosen point: the first one with the best score.
  std::optional<std::size_t> chosen_index() const;
};

struct SearchResult {
  QuantizationPlan plan;
  std::vector<SearchTrace> traces;
  std::vector<std::string> warnings;
  std::int64_t evaluations = 0;
};

using LogFn = std::function<void(const std::string&)>;

/// Quantizes `layers` in order, freezing each layer before moving on. Each
/// layer runs weight clip, weight rounding, activation clip, activation
/// rounding and bias correction; which of these search depends on `config`.
SearchResult run_quantization(const ModelGraph& model, const CalibrationSet& calib,
                              const QuantizableLayerSet& layers, const PipelineConfig& config,
                              const LogFn& log = {});

/// run_quantization with the full Q-Rater defaults at the given bit widths.
SearchResult run_qrater(const ModelGraph& model, const CalibrationSet& calib, const QuantizableLayerSet& layers,
                        const GridSpec& grid, const BOConfig& bo, Metric metric, int weight_bits = 4,
                        int act_bits = 4);

/// Fixed parameters of a single-phase sweep for the parts not being swept.
struct SweepBase {
  double weight_gamma_c = 1.0;
  double act_gamma_c = 1.0;
};

/// Grid-only sweep of one phase of `layer`. Layers before it run under
/// `prior` (states at or after `layer` are ignored unless `layer` itself has
/// a state, which then provides the fixed parts). Unswept parts fall back to
/// `base` with RTN rounding.
SearchTrace sweep_phase(const ModelGraph& model, const CalibrationSet& calib, const QuantizationPlan& prior,
                        int layer, Phase phase, const PipelineConfig& config, const SweepBase& base = {});

/// One JSON object per evaluated point: layer, phase, params, objective,
/// tiebreak, accuracy, cross_entropy, source, timestamp. Skipped phases emit
/// a single record with a `skipped` reason.
void write_trace_jsonl(const std::vector<SearchTrace>& traces, std::ostream& out);
void write_trace_jsonl(const std::vector<SearchTrace>& traces, const std::filesystem::path& path);

}  // namespace qrater
