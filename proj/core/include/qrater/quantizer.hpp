#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrater/tensor.hpp"

namespace qrater {

class ModelGraph;
class QuantizationPlan;
struct CalibrationSet;

enum class RoundingOrder { rtn, first, second };

std::string to_string(RoundingOrder order);
RoundingOrder rounding_order_from_string(const std::string& name);

/// Rounding hyper-parameters. gamma_n in [-1, 1] tilts the width of the
/// input range mapped to each level; gamma_s in [0, 1] places the pivot of the
/// second-order scheme. `rtn` ignores both.
struct RoundingParams {
  double gamma_n = 0.0;
  double gamma_s = 0.0;
  RoundingOrder order = RoundingOrder::rtn;

  /// Throws ArgumentError when a gamma is out of range.
  void validate() const;

  friend bool operator==(const RoundingParams&, const RoundingParams&) = default;
};

/// Largest level index of the symmetric q-bit grid, 2^(q-1) - 1.
std::int64_t grid_max(int bits);

/// Weight clipping and scale, `threshold = gamma_c * max|w|`, `scale = threshold / grid_max(bits)`.
struct ClipResult {
  Tensor clipped;
  double threshold = 0.0;
  double scale = 0.0;
};

/// Throws DegenerateScaleError for an all-zero tensor and ArgumentError for
/// gamma_c outside (0, 1] or bits < 2.
ClipResult clip_by_gamma(const Tensor& w, double gamma_c, int bits);

/// floor(w_c / s + 0.5)
std::int64_t round_rtn(double w_c, double s);

/// 1st-order offset: 0.5 * sign(w_c * gamma_n) * |gamma_n|^|w_r|.
double first_order_offset(double w_c, double s, double gamma_n);

/// 2nd-order offset with pivot gamma_s * 2^(q-1) and beta = 2^(q-2).
double second_order_offset(double w_c, double s, double gamma_n, double gamma_s, int bits);

/// Offset for any order; 0 for RTN.
double rounding_offset(double w_c, double s, const RoundingParams& params, int bits);

/// Level index before saturation: floor(w_c / s + 0.5 + f_r).
std::int64_t unclamped_level(double w_c, double s, const RoundingParams& params, int bits);

/// Saturated level index in [-grid_max, grid_max].
std::int64_t quantized_level(double w_c, double s, const RoundingParams& params, int bits);

/// Quantized value s * level for the 1st- and 2nd-order schemes.
double round_first_order(double w_c, double s, double gamma_n, int bits);
double round_second_order(double w_c, double s, double gamma_n, double gamma_s, int bits);

struct WeightQuantState {
  double gamma_c = 1.0;
  double scale = 0.0;
  RoundingParams rounding;
};

struct ActivationQuantState {
  int bits = 8;
  double gamma_c = 1.0;
  double scale = 0.0;
  RoundingParams rounding;
};

/// Quantization record of one weighted layer.
struct LayerQuantState {
  int bits = 8;
  WeightQuantState weight;
  std::optional<ActivationQuantState> activation;
  bool bias_corrected = false;
  /// Per-output-channel increment added to the bias when bias_corrected.
  std::vector<float> bias_delta;
  bool frozen = false;
};

/// Builds the weight part of a state from gamma_c (scale derived from max|w|).
WeightQuantState make_weight_state(const Tensor& w, double gamma_c, int bits, RoundingParams rounding);

/// Clip to gamma_c * max|w| then round each element with the state's scale
/// and rounding. Output values lie on {k * s : |k| <= grid_max(bits)}.
Tensor quantize_weights(const Tensor& w, const LayerQuantState& state);

/// Clip to +-scale * grid_max(bits) then round with `params` at that scale.
Tensor quantize_activation(const Tensor& x, double scale, const RoundingParams& params, int bits);

struct ActivationThreshold {
  double threshold = 0.0;
  double scale = 0.0;
};

/// Mean over batches of gamma_c * max|x_j|, from per-batch maxima.
ActivationThreshold activation_threshold(std::span<const float> batch_max_abs, double gamma_c, int bits);

/// Per-batch max|x| of the input of `layer_index`, with layers before it run
/// under `plan`.
std::vector<float> layer_input_batch_maxima(const ModelGraph& model, int layer_index, const CalibrationSet& calib,
                                            const QuantizationPlan& plan, std::int64_t batch_size);

ActivationThreshold calibrate_activation_threshold(const ModelGraph& model, int layer_index,
                                                   const CalibrationSet& calib, const QuantizationPlan& plan,
                                                   double gamma_c, int bits, std::int64_t batch_size);

/// Per-channel mean of (reference - quantized) over samples and spatial
/// positions. Both tensors are [N x C] or [N x C x H x W].
std::vector<float> channel_mean_difference(const Tensor& reference, const Tensor& quantized);

/// Bias increment cancelling the mean output shift of `layer_index`: the
/// full-precision model's pre-activation output minus the output under
/// `plan` (ignoring any bias delta already stored for the layer).
std::vector<float> bias_correction(const ModelGraph& model, int layer_index, const CalibrationSet& calib,
                                   const QuantizationPlan& plan);

/// Checks that the fake-quantized float product w_q * x_q equals the
/// int32-accumulated level product rescaled by s_w * s_x within 1e-6
/// relative. Throws ArgumentError when an operand is off its grid.
bool integer_consistency_check(const Tensor& w_q, const Tensor& x_q, double s_w, double s_x, int bits_w,
                               int bits_x);

}  // namespace qrater
