#include "qrater/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qrater/errors.hpp"
#include "qrater/ops.hpp"

namespace qrater {
namespace {

// sign(0) = 0 so a zero factor disables the offset.
int sign_of(double v) noexcept { return (v > 0.0) - (v < 0.0); }

void check_bits(int bits) {
  if (bits < 2 || bits > 16) throw ArgumentError("bit width must be in [2, 16], got " + std::to_string(bits));
}

void check_scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw ArgumentError("scale must be positive and finite");
}

}  // namespace

std::string to_string(RoundingOrder order) {
  switch (order) {
    case RoundingOrder::rtn: return "rtn";
    case RoundingOrder::first: return "first";
    case RoundingOrder::second: return "second";
  }
  return "?";
}

RoundingOrder rounding_order_from_string(const std::string& name) {
  if (name == "rtn") return RoundingOrder::rtn;
  if (name == "first") return RoundingOrder::first;
  if (name == "second") return RoundingOrder::second;
  throw ArgumentError("unknown rounding order '" + name + "'");
}

void RoundingParams::validate() const {
  if (!(gamma_n >= -1.0 && gamma_n <= 1.0)) throw ArgumentError("gamma_n must lie in [-1, 1]");
  if (!(gamma_s >= 0.0 && gamma_s <= 1.0)) throw ArgumentError("gamma_s must lie in [0, 1]");
}

std::int64_t grid_max(int bits) {
  check_bits(bits);
  return (std::int64_t{1} << (bits - 1)) - 1;
}

ClipResult clip_by_gamma(const Tensor& w, double gamma_c, int bits) {
  if (w.empty()) throw ArgumentError("clip_by_gamma: empty tensor");
  if (!(gamma_c > 0.0 && gamma_c <= 1.0)) throw ArgumentError("gamma_c must lie in (0, 1]");
  const double max_abs = w.max_abs();
  if (max_abs == 0.0) throw DegenerateScaleError("clip_by_gamma: all-zero tensor has no scale");
  ClipResult r;
  r.threshold = gamma_c * max_abs;
  r.scale = r.threshold / static_cast<double>(grid_max(bits));
  r.clipped = w;
  for (float& v : r.clipped.data()) {
    v = static_cast<float>(std::max(std::min(static_cast<double>(v), r.threshold), -r.threshold));
  }
  return r;
}

std::int64_t round_rtn(double w_c, double s) {
  check_scale(s);
  return static_cast<std::int64_t>(std::floor(w_c / s + 0.5));
}

double first_order_offset(double w_c, double s, double gamma_n) {
  const auto w_r = round_rtn(w_c, s);
  const int sgn = sign_of(w_c) * sign_of(gamma_n);
  if (sgn == 0) return 0.0;
  return 0.5 * sgn * std::pow(std::fabs(gamma_n), static_cast<double>(std::llabs(w_r)));
}

double second_order_offset(double w_c, double s, double gamma_n, double gamma_s, int bits) {
  check_bits(bits);
  const double mag = static_cast<double>(std::llabs(round_rtn(w_c, s)));
  const double pivot = gamma_s * std::ldexp(1.0, bits - 1);
  const double beta = std::ldexp(1.0, bits - 2);
  const int sgn = sign_of(w_c) * sign_of(gamma_n) * sign_of(pivot - mag);
  if (sgn == 0) return 0.0;
  return 0.5 * sgn * std::pow(std::fabs(gamma_n), std::fabs(std::fabs(mag - pivot) - beta));
}

double rounding_offset(double w_c, double s, const RoundingParams& params, int bits) {
  switch (params.order) {
    case RoundingOrder::rtn: return 0.0;
    case RoundingOrder::first: return first_order_offset(w_c, s, params.gamma_n);
    case RoundingOrder::second: return second_order_offset(w_c, s, params.gamma_n, params.gamma_s, bits);
  }
  return 0.0;
}

std::int64_t unclamped_level(double w_c, double s, const RoundingParams& params, int bits) {
  check_scale(s);
  if (params.order == RoundingOrder::rtn) return round_rtn(w_c, s);
  return static_cast<std::int64_t>(std::floor(w_c / s + 0.5 + rounding_offset(w_c, s, params, bits)));
}

std::int64_t quantized_level(double w_c, double s, const RoundingParams& params, int bits) {
  const auto m = grid_max(bits);
  return std::clamp(unclamped_level(w_c, s, params, bits), -m, m);
}

double round_first_order(double w_c, double s, double gamma_n, int bits) {
  RoundingParams p{gamma_n, 0.0, RoundingOrder::first};
  p.validate();
  return s * static_cast<double>(quantized_level(w_c, s, p, bits));
}

double round_second_order(double w_c, double s, double gamma_n, double gamma_s, int bits) {
  RoundingParams p{gamma_n, gamma_s, RoundingOrder::second};
  p.validate();
  return s * static_cast<double>(quantized_level(w_c, s, p, bits));
}

WeightQuantState make_weight_state(const Tensor& w, double gamma_c, int bits, RoundingParams rounding) {
  rounding.validate();
  const auto clip = clip_by_gamma(w, gamma_c, bits);
  return WeightQuantState{gamma_c, clip.scale, rounding};
}

Tensor quantize_weights(const Tensor& w, const LayerQuantState& state) {
  const auto& ws = state.weight;
  ws.rounding.validate();
  check_scale(ws.scale);
  const double max_abs = w.max_abs();
  if (max_abs == 0.0) throw DegenerateScaleError("quantize_weights: all-zero tensor has no scale");
  const double threshold = ws.gamma_c * max_abs;
  Tensor out(w.shape());
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    const double w_c = std::max(std::min(static_cast<double>(w[i]), threshold), -threshold);
    out[i] = static_cast<float>(ws.scale * static_cast<double>(quantized_level(w_c, ws.scale, ws.rounding, state.bits)));
  }
  return out;
}

Tensor quantize_activation(const Tensor& x, double scale, const RoundingParams& params, int bits) {
  check_scale(scale);
  params.validate();
  const double threshold = scale * static_cast<double>(grid_max(bits));
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = std::max(std::min(static_cast<double>(x[i]), threshold), -threshold);
    out[i] = static_cast<float>(scale * static_cast<double>(quantized_level(v, scale, params, bits)));
  }
  return out;
}

ActivationThreshold activation_threshold(std::span<const float> batch_max_abs, double gamma_c, int bits) {
  if (batch_max_abs.empty()) throw ArgumentError("activation_threshold: no calibration batches");
  if (!(gamma_c > 0.0 && gamma_c <= 1.0)) throw ArgumentError("gamma_c must lie in (0, 1]");
  double sum = 0.0;
  for (float m : batch_max_abs) sum += gamma_c * static_cast<double>(m);
  ActivationThreshold t;
  t.threshold = sum / static_cast<double>(batch_max_abs.size());
  if (!(t.threshold > 0.0)) throw DegenerateScaleError("activation_threshold: activations are zero in every batch");
  t.scale = t.threshold / static_cast<double>(grid_max(bits));
  return t;
}

std::vector<float> channel_mean_difference(const Tensor& reference, const Tensor& quantized) {
  if (reference.shape() != quantized.shape() || reference.rank() < 2) {
    throw DimensionError("channel_mean_difference: shapes " + shape_to_string(reference.shape()) + " and " +
                         shape_to_string(quantized.shape()));
  }
  const std::int64_t n = reference.dim(0), c = reference.dim(1);
  const std::int64_t inner = reference.numel() / (n * c);
  std::vector<double> sums(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t base = (s * c + ch) * inner;
      double acc = 0.0;
      for (std::int64_t i = 0; i < inner; ++i) {
        acc += static_cast<double>(reference[base + i]) - static_cast<double>(quantized[base + i]);
      }
      sums[static_cast<std::size_t>(ch)] += acc;
    }
  }
  std::vector<float> out(sums.size());
  const double denom = static_cast<double>(n * inner);
  for (std::size_t ch = 0; ch < sums.size(); ++ch) out[ch] = static_cast<float>(sums[ch] / denom);
  return out;
}

bool integer_consistency_check(const Tensor& w_q, const Tensor& x_q, double s_w, double s_x, int bits_w,
                               int bits_x) {
  check_scale(s_w);
  check_scale(s_x);
  if (w_q.rank() != 2 || x_q.rank() != 2 || w_q.dim(1) != x_q.dim(0)) {
    throw DimensionError("integer_consistency_check: operands " + shape_to_string(w_q.shape()) + " x " +
                         shape_to_string(x_q.shape()));
  }
  auto levels = [](const Tensor& t, double s, int bits, const char* what) {
    const auto m = grid_max(bits);
    std::vector<std::int32_t> out(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double r = static_cast<double>(t[i]) / s;
      const double k = std::nearbyint(r);
      if (std::fabs(r - k) > 1e-3 || std::fabs(k) > static_cast<double>(m)) {
        throw ArgumentError(std::string("integer_consistency_check: ") + what + " element " + std::to_string(i) +
                            " is off the quantization grid");
      }
      out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(k);
    }
    return out;
  };
  const auto wi = levels(w_q, s_w, bits_w, "weight");
  const auto xi = levels(x_q, s_x, bits_x, "activation");
  const Tensor fake = ops::matmul(w_q, x_q);
  const std::int64_t m = w_q.dim(0), k = w_q.dim(1), n = x_q.dim(1);
  std::vector<double> exact(static_cast<std::size_t>(m * n));
  double ref_norm = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      std::int32_t acc = 0;
      for (std::int64_t p = 0; p < k; ++p) acc += wi[i * k + p] * xi[p * n + j];
      const double v = static_cast<double>(acc) * s_w * s_x;
      exact[i * n + j] = v;
      ref_norm = std::max(ref_norm, std::fabs(v));
    }
  }
  for (std::int64_t i = 0; i < m * n; ++i) {
    const double diff = std::fabs(static_cast<double>(fake[i]) - exact[i]);
    if (diff > 1e-6 * ref_norm) return false;
  }
  return true;
}

}  // namespace qrater
