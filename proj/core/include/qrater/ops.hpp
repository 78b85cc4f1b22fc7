#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qrater/tensor.hpp"

// Forward-inference kernels. Every function is pure and accumulates in a
// fixed loop order, so identical inputs give bit-identical outputs and each
// sample of a batch is computed independently of the others.
namespace qrater::ops {

/// [M x K] * [K x N] -> [M x N]. Accumulates over K in ascending order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation with zero padding. x: [N x C x H x W], w: [F x C x kh x kw],
/// optional bias of length F.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad);
inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  return conv2d(x, w, nullptr, stride, pad);
}

/// Lowers one sample [C x H x W] into a [C*kh*kw x H'*W'] patch matrix.
Tensor im2col(const Tensor& sample, int kh, int kw, int stride, int pad);

/// Fully connected: x [N x in], w [out x in], optional bias [out] -> [N x out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor maxpool2d(const Tensor& x, int kernel, int stride);
/// [N x C x H x W] -> [N x C]
Tensor global_avgpool(const Tensor& x);
/// [N x ...] -> [N x prod(...)]
Tensor flatten(const Tensor& x);
/// Per-channel affine y = scale[c] * x + shift[c] on [N x C x ...].
Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift);

/// Row-wise softmax over the last axis of [N x K], max-subtracted.
Tensor softmax(const Tensor& logits);

/// Per-sample negative log-likelihood of the labelled class.
std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const std::uint32_t> labels);
/// Mean cross-entropy over the batch.
double cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels);
/// Number of rows whose argmax equals the label (first maximum wins).
std::int64_t top1_correct(const Tensor& logits, std::span<const std::uint32_t> labels);
/// Fraction of rows whose argmax equals the label.
double top1_accuracy(const Tensor& logits, std::span<const std::uint32_t> labels);

}  // namespace qrater::ops
