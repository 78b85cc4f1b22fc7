#include "qrater/evaluator.hpp"

#include <algorithm>
#include <set>

#include "qrater/errors.hpp"
#include "qrater/ops.hpp"
#include "qrater/parallel.hpp"

namespace qrater {

std::string to_string(Metric metric) {
  return metric == Metric::top1_accuracy ? "top1_accuracy" : "neg_cross_entropy";
}

Metric metric_from_string(const std::string& name) {
  if (name == "top1_accuracy" || name == "top1") return Metric::top1_accuracy;
  if (name == "neg_cross_entropy" || name == "ce") return Metric::neg_cross_entropy;
  throw ArgumentError("unknown metric '" + name + "'");
}

Score to_score(const Evaluation& e, Metric metric) {
  if (metric == Metric::top1_accuracy) return {e.accuracy, -e.cross_entropy};
  return {-e.cross_entropy, e.accuracy};
}

Evaluation evaluate_plan(const ModelGraph& model, const CalibrationSet& calib, const QuantizationPlan* plan,
                         ForwardOptions options) {
  const Tensor logits = forward(model, calib.inputs, plan, options);
  return {ops::top1_accuracy(logits, calib.labels), ops::cross_entropy(logits, calib.labels)};
}

Evaluator::Evaluator(const ModelGraph& model, const CalibrationSet& calib, int threads, std::int64_t chunk_size)
    : model_(model), calib_(calib), threads_(std::max(threads, 1)) {
  if (calib.count() == 0) throw ArgumentError("empty calibration set");
  if (chunk_size < 1) throw ArgumentError("chunk size must be positive");
  const auto slots = static_cast<std::size_t>(model.num_layers()) + 1;
  for (std::int64_t b = 0; b < calib.count(); b += chunk_size) {
    Chunk c;
    c.begin = b;
    c.full_precision.resize(slots);
    c.full_precision[0] = calib.inputs.slice_batch(b, std::min(calib.count(), b + chunk_size));
    c.frontier.resize(slots);
    c.frontier[0] = c.full_precision[0];
    chunks_.push_back(std::move(c));
  }
  const PreparedLayers fp = prepare_layers(model_, nullptr);
  parallel_for(static_cast<std::int64_t>(chunks_.size()), threads_, [&](std::int64_t t) {
    forward_range(model_, nullptr, fp, chunks_[static_cast<std::size_t>(t)].full_precision, 1, model_.num_layers());
  });
  needed_ = {0};
}

void Evaluator::set_frontier(int layer, const QuantizationPlan& plan) {
  if (layer < 1 || layer > model_.num_layers()) throw ArgumentError("frontier layer out of range");
  // Cached outputs below the old frontier stay valid: those states are frozen.
  const int from = std::min(frontier_, layer);
  if (layer - 1 >= from) {
    const PreparedLayers prepared = prepare_layers(model_, &plan, from);
    parallel_for(static_cast<std::int64_t>(chunks_.size()), threads_, [&](std::int64_t t) {
      forward_range(model_, &plan, prepared, chunks_[static_cast<std::size_t>(t)].frontier, from, layer - 1);
    });
  }
  frontier_ = layer;
  std::set<int> needed{layer - 1};
  for (int i = layer; i <= model_.num_layers(); ++i) {
    const auto& skip = model_.layer(i).skip_from;
    if (skip && *skip < layer) needed.insert(*skip);
  }
  needed_.assign(needed.begin(), needed.end());
}

Evaluation Evaluator::evaluate(const QuantizationPlan& plan) const {
  const PreparedLayers prepared = prepare_layers(model_, &plan, frontier_);
  const auto slots = static_cast<std::size_t>(model_.num_layers()) + 1;
  std::vector<std::vector<double>> ce(chunks_.size());
  std::vector<std::int64_t> correct(chunks_.size());
  parallel_for(static_cast<std::int64_t>(chunks_.size()), threads_, [&](std::int64_t t) {
    const Chunk& c = chunks_[static_cast<std::size_t>(t)];
    std::vector<Tensor> outputs(slots);
    for (int i : needed_) outputs[static_cast<std::size_t>(i)] = c.frontier[static_cast<std::size_t>(i)];
    forward_range(model_, &plan, prepared, outputs, frontier_, model_.num_layers());
    const Tensor& logits = outputs.back();
    const auto n = logits.dim(0);
    const std::span<const std::uint32_t> labels(calib_.labels.data() + c.begin, static_cast<std::size_t>(n));
    ce[static_cast<std::size_t>(t)] = ops::cross_entropy_per_sample(logits, labels);
    correct[static_cast<std::size_t>(t)] = ops::top1_correct(logits, labels);
  });
  ++evaluations_;
  // Same summation order as ops::cross_entropy over the whole set.
  double ce_sum = 0.0;
  std::int64_t hits = 0;
  for (std::size_t t = 0; t < chunks_.size(); ++t) {
    for (double v : ce[t]) ce_sum += v;
    hits += correct[t];
  }
  const auto n = static_cast<double>(calib_.count());
  return {static_cast<double>(hits) / n, ce_sum / n};
}

std::vector<float> Evaluator::frontier_batch_maxima(std::int64_t batch_size) const {
  if (batch_size < 1) throw ArgumentError("batch size must be positive");
  const Tensor x = frontier_input();
  std::vector<float> maxima;
  for (std::int64_t b = 0; b < calib_.count(); b += batch_size) {
    maxima.push_back(x.slice_batch(b, std::min(calib_.count(), b + batch_size)).max_abs());
  }
  return maxima;
}

Tensor Evaluator::frontier_input() const {
  std::vector<Tensor> parts;
  parts.reserve(chunks_.size());
  for (const auto& c : chunks_) parts.push_back(c.frontier[static_cast<std::size_t>(frontier_ - 1)]);
  return concat_batch(parts);
}

std::vector<float> Evaluator::frontier_bias_delta(const QuantizationPlan& plan) const {
  const Layer& layer = model_.layer(frontier_);
  if (!layer.is_weighted()) throw ArgumentError("bias correction needs a conv2d/fc layer");
  const LayerQuantState* state = plan.find(frontier_);
  std::vector<Tensor> ref(chunks_.size()), quant(chunks_.size());
  parallel_for(static_cast<std::int64_t>(chunks_.size()), threads_, [&](std::int64_t t) {
    const Chunk& c = chunks_[static_cast<std::size_t>(t)];
    const auto in = static_cast<std::size_t>(frontier_ - 1);
    ref[static_cast<std::size_t>(t)] = weighted_layer_output(layer, c.full_precision[in], nullptr);
    quant[static_cast<std::size_t>(t)] = weighted_layer_output(layer, c.frontier[in], state);
  });
  return channel_mean_difference(concat_batch(ref), concat_batch(quant));
}

}  // namespace qrater
