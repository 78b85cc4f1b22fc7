#pragma once

#include <string>

#include "qrater/tensor.hpp"

// Reference clipping-threshold selectors, each paired with RTN rounding.
// All return a threshold in (0, max|w|] and throw DegenerateScaleError on an
// all-zero tensor.
namespace qrater::baseline {

enum class ClipKind { mse, kl, aciq, gamma_sweep };

std::string to_string(ClipKind kind);
ClipKind clip_kind_from_string(const std::string& name);

struct ClipMethod {
  ClipKind kind = ClipKind::mse;
  int num_candidates = 100;
  int histogram_bins = 2048;

  void validate() const;
};

/// Sum of squared RTN quantization error of `w` at threshold `threshold`.
double rtn_squared_error(const Tensor& w, double threshold, int bits);

/// Candidate k/n * max|w| (k = 1..n) minimizing the RTN squared error; the
/// smallest candidate wins ties.
double clip_mse(const Tensor& w, int bits, int num_candidates = 100);

/// Threshold minimizing KL(P || Q) between the clipped |w| histogram P and its
/// grid_max(bits)-level requantization Q. Larger thresholds win ties.
double clip_kl(const Tensor& w, int bits, int bins = 2048, int num_candidates = 100);

/// Expected squared RTN error of a zero-centred Laplace(b) variable clipped at
/// `threshold`, by quadrature.
double laplace_expected_mse(double b, double threshold, int bits);

/// Threshold minimizing laplace_expected_mse for b = mean|w - median(w)|,
/// capped at max|w|.
double clip_aciq(const Tensor& w, int bits);

/// Dispatches on `method.kind` (gamma_sweep is not a closed-form selector and
/// throws ArgumentError).
double select_threshold(const Tensor& w, int bits, const ClipMethod& method);

}  // namespace qrater::baseline
