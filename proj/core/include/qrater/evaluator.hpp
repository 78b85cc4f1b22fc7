#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qrater/bayes_opt.hpp"
#include "qrater/calibration.hpp"
#include "qrater/model.hpp"
#include "qrater/plan.hpp"

namespace qrater {

enum class Metric { top1_accuracy, neg_cross_entropy };

std::string to_string(Metric metric);
Metric metric_from_string(const std::string& name);

struct Evaluation {
  double accuracy = 0.0;
  double cross_entropy = 0.0;
};

/// top1_accuracy: (accuracy, -cross_entropy); neg_cross_entropy: (-cross_entropy, accuracy).
Score to_score(const Evaluation& e, Metric metric);

/// Plain full-batch evaluation (the reference path used for replay).
Evaluation evaluate_plan(const ModelGraph& model, const CalibrationSet& calib, const QuantizationPlan* plan,
                         ForwardOptions options = {});

/// Objective evaluation over a calibration set split into fixed-size chunks.
///
/// Layer outputs before the current frontier are cached for every chunk, so
/// an evaluation only runs layers from the frontier onward. Per-sample results
/// are reduced in sample order, which makes every value bit-identical to
/// evaluate_plan() and independent of the thread count.
class Evaluator {
 public:
  Evaluator(const ModelGraph& model, const CalibrationSet& calib, int threads = 1, std::int64_t chunk_size = 64);

  /// Caches outputs of layers before `layer` under `plan`. States of those
  /// layers must not change until the frontier moves again.
  void set_frontier(int layer, const QuantizationPlan& plan);
  int frontier() const noexcept { return frontier_; }

  /// Evaluates `plan`; layers before the frontier use the cached outputs.
  Evaluation evaluate(const QuantizationPlan& plan) const;

  /// Per-batch max|x| of the frontier layer's input, batches of `batch_size`
  /// consecutive samples.
  std::vector<float> frontier_batch_maxima(std::int64_t batch_size) const;

  /// Frontier layer input over the whole calibration set.
  Tensor frontier_input() const;

  /// Bias delta for the frontier layer: full-precision output minus output
  /// under `plan` (bias delta excluded), averaged per channel.
  std::vector<float> frontier_bias_delta(const QuantizationPlan& plan) const;

  std::int64_t evaluations() const noexcept { return evaluations_; }

 private:
  struct Chunk {
    std::int64_t begin = 0;
    std::vector<Tensor> full_precision;  // all layer outputs, no plan
    std::vector<Tensor> frontier;        // layer outputs < frontier under the frozen plan
  };

  const ModelGraph& model_;
  const CalibrationSet& calib_;
  int threads_;
  std::vector<Chunk> chunks_;
  int frontier_ = 1;
  std::vector<int> needed_;  // cached entries read by layers >= frontier
  mutable std::int64_t evaluations_ = 0;
};

}  // namespace qrater
