#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "qrater/errors.hpp"
#include "qrater/ops.hpp"
#include "support.hpp"

using namespace qrater;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

// Independent lowering: gather patches in double, multiply in double.
Tensor im2col_oracle_conv(const Tensor& x, const Tensor& w, int stride, int pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({n, f, oh, ow});
  for (std::int64_t s = 0; s < n; ++s) {
    std::vector<double> cols(static_cast<std::size_t>(c * kh * kw * oh * ow), 0.0);
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t dy = 0; dy < kh; ++dy)
        for (std::int64_t dx = 0; dx < kw; ++dx)
          for (std::int64_t oy = 0; oy < oh; ++oy)
            for (std::int64_t ox = 0; ox < ow; ++ox) {
              const auto iy = oy * stride + dy - pad, ix = ox * stride + dx - pad;
              const auto row = (ch * kh + dy) * kw + dx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < wd) {
                cols[static_cast<std::size_t>(row * oh * ow + oy * ow + ox)] = x[((s * c + ch) * h + iy) * wd + ix];
              }
            }
    for (std::int64_t fi = 0; fi < f; ++fi)
      for (std::int64_t p = 0; p < oh * ow; ++p) {
        double acc = 0.0;
        for (std::int64_t r = 0; r < c * kh * kw; ++r) acc += w[fi * c * kh * kw + r] * cols[r * oh * ow + p];
        out[(s * f + fi) * oh * ow + p] = static_cast<float>(acc);
      }
  }
  return out;
}

double max_rel_error(const Tensor& got, const Tensor& want) {
  double scale = 0.0, err = 0.0;
  for (std::int64_t i = 0; i < want.numel(); ++i) {
    scale = std::max(scale, std::fabs(static_cast<double>(want[i])));
    err = std::max(err, std::fabs(static_cast<double>(got[i]) - want[i]));
  }
  return scale > 0 ? err / scale : err;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::from_list({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from_list({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(ops::matmul(eye, b), b);
}

TEST(Matmul, ProjectorKeepsFirstRow) {
  const Tensor p = Tensor::from_list({2, 2}, {1, 0, 0, 0});
  const Tensor b = Tensor::from_list({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(ops::matmul(p, b), Tensor::from_list({2, 2}, {5, 6, 0, 0}));
}

TEST(Matmul, MatchesNaiveTripleLoopExactly) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = qtest::random_tensor({4, 4}, rng);
    const Tensor b = qtest::random_tensor({4, 4}, rng);
    EXPECT_EQ(ops::matmul(a, b), naive_matmul(a, b));
  }
  const Tensor a = qtest::random_tensor({7, 13}, rng);
  const Tensor b = qtest::random_tensor({13, 5}, rng);
  EXPECT_EQ(ops::matmul(a, b), naive_matmul(a, b));
}

TEST(Matmul, InnerDimensionMismatchIsDimensionError) {
  EXPECT_THROW(ops::matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST(Conv2d, OnesKernelSumsChannels) {
  Rng rng(2);
  const Tensor x = qtest::random_tensor({1, 3, 4, 4}, rng);
  const Tensor w({1, 3, 1, 1}, 1.0f);
  const Tensor y = ops::conv2d(x, w, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (std::int64_t p = 0; p < 16; ++p) {
    EXPECT_FLOAT_EQ(y[p], x[p] + x[16 + p] + x[32 + p]);
  }
}

TEST(Conv2d, DeltaKernelIsIdentityPerChannel) {
  Rng rng(3);
  const Tensor x = qtest::random_tensor({2, 2, 5, 5}, rng);
  Tensor w({2, 2, 3, 3});
  w[(0 * 2 + 0) * 9 + 4] = 1.0f;
  w[(1 * 2 + 1) * 9 + 4] = 1.0f;
  EXPECT_EQ(ops::conv2d(x, w, 1, 1), x);
}

TEST(Conv2d, MatchesIm2colOracle) {
  Rng rng(4);
  const Tensor x = qtest::random_tensor({1, 2, 5, 5}, rng);
  const Tensor w = qtest::random_tensor({3, 2, 3, 3}, rng);
  EXPECT_LE(max_rel_error(ops::conv2d(x, w, 1, 0), im2col_oracle_conv(x, w, 1, 0)), 1e-6);
  EXPECT_LE(max_rel_error(ops::conv2d(x, w, 1, 1), im2col_oracle_conv(x, w, 1, 1)), 1e-6);
  const Tensor x2 = qtest::random_tensor({3, 2, 7, 7}, rng);
  EXPECT_LE(max_rel_error(ops::conv2d(x2, w, 2, 1), im2col_oracle_conv(x2, w, 2, 1)), 1e-6);
}

TEST(Conv2d, RandomInstancesAgreeWithOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const auto c = static_cast<std::int64_t>(1 + uniform_index(rng, 3));
    const auto f = static_cast<std::int64_t>(1 + uniform_index(rng, 4));
    const int pad = static_cast<int>(uniform_index(rng, 2));
    const Tensor x = qtest::random_tensor({2, c, 6, 6}, rng);
    const Tensor w = qtest::random_tensor({f, c, 3, 3}, rng);
    EXPECT_LE(max_rel_error(ops::conv2d(x, w, 1, pad), im2col_oracle_conv(x, w, 1, pad)), 1e-6);
  }
}

TEST(Conv2d, GeometryErrors) {
  EXPECT_EQ(ops::conv2d(Tensor({1, 1, 5, 5}), Tensor({1, 1, 3, 3}), 2, 1).shape(), (Shape{1, 1, 3, 3}));
  EXPECT_THROW(ops::conv2d(Tensor({1, 1, 6, 6}), Tensor({1, 1, 3, 3}), 2, 1), DimensionError);
  EXPECT_THROW(ops::conv2d(Tensor({1, 1, 5, 5}), Tensor({1, 1, 3, 3}), 0, 1), ArgumentError);
  EXPECT_THROW(ops::conv2d(Tensor({1, 2, 5, 5}), Tensor({1, 1, 3, 3}), 1, 0), DimensionError);
  EXPECT_THROW(ops::conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 5, 5}), 1, 0), DimensionError);
}

TEST(Elementwise, Relu) {
  EXPECT_EQ(ops::relu(Tensor::from_list({3}, {-1, 0, 2})), Tensor::from_list({3}, {0, 0, 2}));
}

TEST(Elementwise, AddRequiresMatchingShapes) {
  EXPECT_EQ(ops::add(Tensor::from_list({2}, {1, 2}), Tensor::from_list({2}, {3, 4})), Tensor::from_list({2}, {4, 6}));
  EXPECT_THROW(ops::add(Tensor({2}), Tensor({3})), DimensionError);
}

TEST(Pooling, MaxpoolAndGlobalAverage) {
  const Tensor x = Tensor::from_list({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, -1, 7});
  EXPECT_EQ(ops::maxpool2d(x, 2, 2), Tensor::from_list({1, 1, 1, 2}, {5, 7}));
  EXPECT_EQ(ops::global_avgpool(x), Tensor::from_list({1, 1}, {21.0f / 8.0f}));
  EXPECT_EQ(ops::flatten(x).shape(), (Shape{1, 8}));
}

TEST(Softmax, SymmetricLogits) {
  const Tensor p = ops::softmax(Tensor::from_list({1, 2}, {0, 0}));
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.5f);
}

TEST(Softmax, RowsSumToOneAndStayInRange) {
  Rng rng(6);
  const Tensor logits = qtest::random_tensor({50, 7}, rng, -40.0, 40.0);
  const Tensor p = ops::softmax(logits);
  for (std::int64_t i = 0; i < 50; ++i) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < 7; ++j) {
      EXPECT_GE(p[i * 7 + j], 0.0f);
      EXPECT_LE(p[i * 7 + j], 1.0f);
      sum += p[i * 7 + j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  EXPECT_TRUE(ops::softmax(Tensor::from_list({1, 2}, {1000, -1000})).all_finite());
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  const Tensor logits({3, 4}, 0.25f);
  const std::vector<std::uint32_t> labels{0, 1, 3};
  EXPECT_NEAR(ops::cross_entropy(logits, labels), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, EmptyBatchAndBadLabels) {
  // Empty batches cannot be formed: every dimension must be positive.
  EXPECT_THROW(Tensor({0, 4}), DimensionError);
  const std::vector<std::uint32_t> bad{4};
  EXPECT_THROW(ops::cross_entropy(Tensor({1, 4}), bad), ArgumentError);
  EXPECT_THROW(ops::top1_accuracy(Tensor({1, 4}), bad), ArgumentError);
  EXPECT_THROW(ops::cross_entropy(Tensor({1, 4}), std::vector<std::uint32_t>{}), ArgumentError);
  const std::vector<std::uint32_t> two{0, 1};
  EXPECT_THROW(ops::cross_entropy(Tensor({1, 4}), two), DimensionError);
}

TEST(Top1, FractionInUnitIntervalAndOneWhenAllCorrect) {
  const Tensor logits = Tensor::from_list({3, 3}, {3, 1, 0, 0, 2, 1, 0, 0, 9});
  const std::vector<std::uint32_t> right{0, 1, 2};
  const std::vector<std::uint32_t> one_wrong{0, 2, 2};
  EXPECT_EQ(ops::top1_accuracy(logits, right), 1.0);
  EXPECT_DOUBLE_EQ(ops::top1_accuracy(logits, one_wrong), 2.0 / 3.0);
  Rng rng(7);
  const Tensor r = qtest::random_tensor({40, 5}, rng);
  std::vector<std::uint32_t> labels(40);
  for (auto& l : labels) l = static_cast<std::uint32_t>(uniform_index(rng, 5));
  const double acc = ops::top1_accuracy(r, labels);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST(Purity, RepeatedAndConcurrentCallsAreBitIdentical) {
  Rng rng(8);
  const Tensor x = qtest::random_tensor({4, 3, 8, 8}, rng);
  const Tensor w = qtest::random_tensor({5, 3, 3, 3}, rng);
  const Tensor ref = ops::conv2d(x, w, 1, 1);
  std::vector<Tensor> got(4);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < got.size(); ++t) pool.emplace_back([&, t] { got[t] = ops::conv2d(x, w, 1, 1); });
  for (auto& th : pool) th.join();
  for (const auto& g : got) EXPECT_EQ(g, ref);
}

TEST(Purity, FiniteInputsGiveFiniteOutputs) {
  Rng rng(9);
  const Tensor x = qtest::random_tensor({2, 2, 6, 6}, rng, -1e3, 1e3);
  const Tensor w = qtest::random_tensor({2, 2, 3, 3}, rng);
  const Tensor y = ops::relu(ops::conv2d(x, w, 1, 1));
  EXPECT_TRUE(y.all_finite());
  EXPECT_TRUE(ops::softmax(ops::flatten(ops::maxpool2d(y, 2, 2))).all_finite());
}
