#include "qrater/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qrater/errors.hpp"

namespace qrater::ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
  }
}

void check_labels(const Tensor& logits, std::span<const std::uint32_t> labels) {
  require_rank(logits, 2, "logits");
  if (logits.dim(0) == 0 || labels.empty()) throw ArgumentError("empty batch");
  if (static_cast<std::int64_t>(labels.size()) != logits.dim(0)) {
    throw DimensionError("label count " + std::to_string(labels.size()) + " does not match batch " +
                         std::to_string(logits.dim(0)));
  }
  const auto k = static_cast<std::uint32_t>(logits.dim(1));
  for (auto l : labels) {
    if (l >= k) throw ArgumentError("label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");
  }
}

// c[M x N] = a[M x K] * b[K x N]; i-k-j order keeps the K reduction ascending.
void gemm(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  std::fill(c, c + m * n, 0.0f);
  for (std::int64_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      const float* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  gemm(a.raw(), b.raw(), c.raw(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

Tensor im2col(const Tensor& sample, int kh, int kw, int stride, int pad) {
  require_rank(sample, 3, "im2col");
  const std::int64_t c = sample.dim(0), h = sample.dim(1), w = sample.dim(2);
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (w + 2 * pad - kw) / stride + 1;
  Tensor cols({c * kh * kw, oh * ow});
  float* out = cols.raw();
  const float* in = sample.raw();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const std::int64_t row = (ch * kh + ky) * kw + kx;
        float* dst = out + row * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
          const std::int64_t iy = y * stride - pad + ky;
          for (std::int64_t x = 0; x < ow; ++x) {
            const std::int64_t ix = x * stride - pad + kx;
            dst[y * ow + x] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? in[(ch * h + iy) * w + ix] : 0.0f;
          }
        }
      }
    }
  }
  return cols;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: stride must be >= 1 and pad >= 0");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c) {
    throw DimensionError("conv2d: input has " + std::to_string(c) + " channels, kernel expects " +
                         std::to_string(w.dim(1)));
  }
  if (kh > h + 2 * pad || kw > wd + 2 * pad) throw DimensionError("conv2d: kernel larger than padded input");
  if ((h + 2 * pad - kh) % stride != 0 || (wd + 2 * pad - kw) % stride != 0) {
    throw DimensionError("conv2d: geometry " + shape_to_string(x.shape()) + " not divisible by stride " +
                         std::to_string(stride));
  }
  if (bias && bias->numel() != f) throw DimensionError("conv2d: bias length does not match filter count");
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({n, f, oh, ow});
  const std::int64_t in_sz = c * h * wd, out_sz = f * oh * ow;
  for (std::int64_t s = 0; s < n; ++s) {
    Tensor sample({c, h, wd}, std::vector<float>(x.raw() + s * in_sz, x.raw() + (s + 1) * in_sz));
    Tensor cols = im2col(sample, static_cast<int>(kh), static_cast<int>(kw), stride, pad);
    float* dst = out.raw() + s * out_sz;
    gemm(w.raw(), cols.raw(), dst, f, c * kh * kw, oh * ow);
    if (bias) {
      for (std::int64_t o = 0; o < f; ++o) {
        const float b = (*bias)[o];
        for (std::int64_t p = 0; p < oh * ow; ++p) dst[o * oh * ow + p] += b;
      }
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::int64_t n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in) {
    throw DimensionError("linear: input has " + std::to_string(in) + " features, weight expects " +
                         std::to_string(w.dim(1)));
  }
  if (bias && bias->numel() != out_f) throw DimensionError("linear: bias length does not match outputs");
  Tensor y({n, out_f});
  for (std::int64_t s = 0; s < n; ++s) {
    const float* xr = x.raw() + s * in;
    for (std::int64_t o = 0; o < out_f; ++o) {
      const float* wr = w.raw() + o * in;
      float acc = 0.0f;
      for (std::int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      y[s * out_f + o] = bias ? acc + (*bias)[o] : acc;
    }
  }
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.data()) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor y = a;
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += b[i];
  return y;
}

Tensor maxpool2d(const Tensor& x, int kernel, int stride) {
  require_rank(x, 4, "maxpool2d");
  if (kernel < 1 || stride < 1) throw ArgumentError("maxpool2d: kernel and stride must be >= 1");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel > h || kernel > w || (h - kernel) % stride != 0 || (w - kernel) % stride != 0) {
    throw DimensionError("maxpool2d: geometry " + shape_to_string(x.shape()) + " incompatible with kernel " +
                         std::to_string(kernel));
  }
  const std::int64_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor y({n, c, oh, ow});
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* src = x.raw() + plane * h * w;
    float* dst = y.raw() + plane * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        float m = -std::numeric_limits<float>::infinity();
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) m = std::max(m, src[(oy * stride + ky) * w + ox * stride + kx]);
        }
        dst[oy * ow + ox] = m;
      }
    }
  }
  return y;
}

Tensor global_avgpool(const Tensor& x) {
  require_rank(x, 4, "global_avgpool");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    float acc = 0.0f;
    for (std::int64_t i = 0; i < hw; ++i) acc += x[plane * hw + i];
    y[plane] = acc / static_cast<float>(hw);
  }
  return y;
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("flatten of a rank-0 tensor");
  return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
}

Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
  if (x.rank() < 2) throw DimensionError("channel_affine expects [N x C x ...]");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  if (scale.numel() != c || shift.numel() != c) throw DimensionError("channel_affine: parameter length mismatch");
  const std::int64_t inner = x.numel() / (n * c);
  Tensor y = x;
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      float* p = y.raw() + (s * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) p[i] = scale[ch] * p[i] + shift[ch];
    }
  }
  return y;
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  Tensor y(logits.shape());
  for (std::int64_t s = 0; s < n; ++s) {
    const float* row = logits.raw() + s * k;
    float* out = y.raw() + s * k;
    const float m = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::int64_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(row[j] - m));
    for (std::int64_t j = 0; j < k; ++j) {
      out[j] = static_cast<float>(std::exp(static_cast<double>(row[j] - m)) / total);
    }
  }
  return y;
}

std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const std::uint32_t> labels) {
  check_labels(logits, labels);
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < n; ++s) {
    const float* row = logits.raw() + s * k;
    const double m = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::int64_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(row[j]) - m);
    out[static_cast<std::size_t>(s)] = m + std::log(total) - static_cast<double>(row[labels[s]]);
  }
  return out;
}

double cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels) {
  const auto per = cross_entropy_per_sample(logits, labels);
  double sum = 0.0;
  for (double v : per) sum += v;
  return sum / static_cast<double>(per.size());
}

std::int64_t top1_correct(const Tensor& logits, std::span<const std::uint32_t> labels) {
  check_labels(logits, labels);
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::int64_t correct = 0;
  for (std::int64_t s = 0; s < n; ++s) {
    const float* row = logits.raw() + s * k;
    const auto arg = std::max_element(row, row + k) - row;
    if (arg == static_cast<std::int64_t>(labels[s])) ++correct;
  }
  return correct;
}

double top1_accuracy(const Tensor& logits, std::span<const std::uint32_t> labels) {
  return static_cast<double>(top1_correct(logits, labels)) / static_cast<double>(logits.dim(0));
}

}  // namespace qrater::ops
