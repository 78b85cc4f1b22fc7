#include <algorithm>

#include "qrater/calibration.hpp"
#include "qrater/errors.hpp"
#include "qrater/model.hpp"
#include "qrater/plan.hpp"
#include "qrater/quantizer.hpp"

namespace qrater {
namespace {

// Output of layer `index - 1` (the input of `index`) for `x` under `plan`.
Tensor layer_input(const ModelGraph& model, int index, const Tensor& x, const QuantizationPlan* plan) {
  std::vector<Tensor> outputs(static_cast<std::size_t>(model.num_layers()) + 1);
  outputs[0] = x;
  if (index > 1) forward_range(model, plan, outputs, 1, index - 1);
  return std::move(outputs[static_cast<std::size_t>(index - 1)]);
}

}  // namespace

std::vector<float> layer_input_batch_maxima(const ModelGraph& model, int layer_index, const CalibrationSet& calib,
                                            const QuantizationPlan& plan, std::int64_t batch_size) {
  model.layer(layer_index);
  if (calib.count() == 0) throw ArgumentError("empty calibration set");
  if (batch_size < 1) throw ArgumentError("batch size must be positive");
  std::vector<float> maxima;
  for (std::int64_t b = 0; b < calib.count(); b += batch_size) {
    const auto e = std::min(calib.count(), b + batch_size);
    maxima.push_back(layer_input(model, layer_index, calib.inputs.slice_batch(b, e), &plan).max_abs());
  }
  return maxima;
}

ActivationThreshold calibrate_activation_threshold(const ModelGraph& model, int layer_index,
                                                   const CalibrationSet& calib, const QuantizationPlan& plan,
                                                   double gamma_c, int bits, std::int64_t batch_size) {
  const auto maxima = layer_input_batch_maxima(model, layer_index, calib, plan, batch_size);
  return activation_threshold(maxima, gamma_c, bits);
}

std::vector<float> bias_correction(const ModelGraph& model, int layer_index, const CalibrationSet& calib,
                                   const QuantizationPlan& plan) {
  const Layer& layer = model.layer(layer_index);
  if (!layer.is_weighted()) throw ArgumentError("bias correction needs a conv2d/fc layer");
  if (calib.count() == 0) throw ArgumentError("empty calibration set");
  const Tensor x_fp = layer_input(model, layer_index, calib.inputs, nullptr);
  const Tensor x_q = layer_input(model, layer_index, calib.inputs, &plan);
  const Tensor y_fp = weighted_layer_output(layer, x_fp, nullptr);
  const Tensor y_q = weighted_layer_output(layer, x_q, plan.find(layer_index));
  return channel_mean_difference(y_fp, y_q);
}

}  // namespace qrater
