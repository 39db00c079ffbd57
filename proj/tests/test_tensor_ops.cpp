#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "glpath/ops/activation.hpp"
#include "glpath/ops/batchnorm.hpp"
#include "glpath/ops/conv.hpp"
#include "glpath/ops/linear.hpp"
#include "glpath/ops/pool.hpp"
#include "support/gradcheck.hpp"
#include "support/op_checks.hpp"

namespace glpath {
namespace {

using testing::random_tensor;

// Direct nested-loop cross-correlation, independent of the im2col path.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w,
                          const std::vector<double>& bias, const ops::ConvSpec& s) {
  const std::size_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const std::size_t oh = (h + 2 * s.padding - s.kernel_h) / s.stride + 1;
  const std::size_t ow = (wd + 2 * s.padding - s.kernel_w) / s.stride + 1;
  Tensor<double> out({n, s.out_channels, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < s.out_channels; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < s.in_channels; ++c)
            for (std::size_t ki = 0; ki < s.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
                const long r = static_cast<long>(i * s.stride + ki) - static_cast<long>(s.padding);
                const long q = static_cast<long>(j * s.stride + kj) - static_cast<long>(s.padding);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
                acc += x.at(b, c, r, q) * w.at(o, c, ki, kj);
              }
          out.at(b, o, i, j) = acc;
        }
  return out;
}

TEST(Conv2d, ScalarCaseIsProduct) {
  Tensor<double> x({1, 1, 1, 1}, 3.0), w({1, 1, 1, 1}, -2.5);
  const auto spec = ops::ConvSpec::square(1, 1, 1, 1, 0);
  const auto y = ops::conv2d_forward<double>(x, w, {}, spec);
  EXPECT_DOUBLE_EQ(y[0], -7.5);

  Tensor<double> g({1, 1, 1, 1}, 2.0);
  const auto grads = ops::conv2d_backward(g, x, w, spec);
  EXPECT_DOUBLE_EQ(grads.input[0], 2.0 * -2.5);
  EXPECT_DOUBLE_EQ(grads.weights[0], 2.0 * 3.0);
  EXPECT_DOUBLE_EQ(grads.bias[0], 2.0);
}

TEST(Conv2d, OnesKernelWithPadding) {
  Tensor<double> x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> w({1, 1, 3, 3}, 1.0);
  const auto spec = ops::ConvSpec::square(1, 1, 3, 1, 1);
  const auto y = ops::conv2d_forward<double>(x, w, {}, spec);
  ASSERT_EQ(y.shape(), (Tensor<double>::Shape{1, 1, 3, 3}));
  const auto oracle = naive_conv(x, w, {}, spec);
  EXPECT_EQ(oracle.at(0, 0, 1, 1), 45.0);
  EXPECT_EQ(oracle.at(0, 0, 0, 0), 12.0);
  EXPECT_EQ(y.at(0, 0, 1, 1), 45.0);
  EXPECT_EQ(y.at(0, 0, 0, 0), 12.0);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  testing::ShapeSampler sampler(7);
  for (int t = 0; t < 25; ++t) {
    const auto k = sampler.conv();
    const auto spec = ops::ConvSpec::square(k.c, k.oc, k.kernel, k.stride, k.padding);
    auto x = random_tensor({k.n, k.c, k.h, k.w}, 100 + t);
    auto w = random_tensor({k.oc, k.c, k.kernel, k.kernel}, 200 + t);
    auto b = random_tensor({k.oc}, 300 + t);
    const auto y = ops::conv2d_forward<double>(x, w, b.values(), spec);
    const auto ref = naive_conv(x, w, b.storage(), spec);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, ZeroKernelAnnihilates) {
  auto x = random_tensor({2, 3, 5, 5}, 1);
  Tensor<double> w({4, 3, 3, 3}, 0.0);
  const auto y = ops::conv2d_forward<double>(x, w, {}, ops::ConvSpec::square(3, 4, 3, 2, 1));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, ZeroGradOutGivesZeroGradients) {
  auto x = random_tensor({1, 2, 5, 5}, 3);
  auto w = random_tensor({3, 2, 3, 3}, 4);
  const auto spec = ops::ConvSpec::square(2, 3, 3, 2, 0);
  Tensor<double> g({1, 3, 2, 2}, 0.0);
  const auto grads = ops::conv2d_backward(g, x, w, spec);
  for (double v : grads.input.values()) EXPECT_EQ(v, 0.0);
  for (double v : grads.weights.values()) EXPECT_EQ(v, 0.0);
  for (double v : grads.bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, StridedBackwardMatchesFiniteDifferences) {
  EXPECT_LT(testing::check_conv({1, 2, 5, 5, 3, 3, 2, 0}, 11), 1e-4);
  EXPECT_LT(testing::check_conv({1, 2, 5, 5, 3, 3, 2, 1}, 12), 1e-4);
}

TEST(Conv2d, RandomShapesMatchFiniteDifferences) {
  testing::ShapeSampler sampler(99);
  for (int t = 0; t < 20; ++t) {
    const auto k = sampler.conv();
    EXPECT_LT(testing::check_conv(k, 1000 + t), 1e-4)
        << "n=" << k.n << " c=" << k.c << " h=" << k.h << " w=" << k.w << " oc=" << k.oc
        << " k=" << k.kernel << " s=" << k.stride << " p=" << k.padding;
  }
}

TEST(Conv2d, IsLinearInInput) {
  const auto spec = ops::ConvSpec::square(2, 3, 3, 1, 1);
  auto x = random_tensor({2, 2, 4, 4}, 21), y = random_tensor({2, 2, 4, 4}, 22);
  auto w = random_tensor({3, 2, 3, 3}, 23);
  const double a = 0.7, b = -1.3;
  Tensor<double> combo(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) combo[i] = a * x[i] + b * y[i];
  const auto lhs = ops::conv2d_forward<double>(combo, w, {}, spec);
  const auto fx = ops::conv2d_forward<double>(x, w, {}, spec);
  const auto fy = ops::conv2d_forward<double>(y, w, {}, spec);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const double rhs = a * fx[i] + b * fy[i];
    EXPECT_LE(std::abs(lhs[i] - rhs), 1e-6 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(Conv2d, ShapeMismatchNamesDimension) {
  Tensor<double> x({1, 2, 4, 4}), w({1, 3, 3, 3});
  try {
    ops::conv2d_forward<double>(x, w, {}, ops::ConvSpec::square(3, 1, 3, 1, 1));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
  EXPECT_THROW(ops::conv2d_forward<double>(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1, 1, 3, 3}),
                                            {}, ops::ConvSpec::square(1, 1, 3, 1, 0)),
               ShapeError);
}

ops::BatchNormState<double> bn_state(std::size_t channels) { return ops::BatchNormState<double>(channels); }

TEST(BatchNorm, ConstantInputNormalizesToZero) {
  Tensor<double> x({4, 2, 2, 2}, 3.25);
  auto state = bn_state(2);
  const auto y = ops::batchnorm_forward(x, state.ref(), ops::Mode::Training);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, TwoValueChannel) {
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  auto state = bn_state(1);
  const auto y = ops::batchnorm_forward(x, state.ref(), ops::Mode::Training);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], -expected, 1e-12);
  EXPECT_NEAR(y[1], expected, 1e-12);
  EXPECT_NEAR(expected, 0.999995, 1e-6);
  // Running stats: mean 0.9*0 + 0.1*2, unbiased var 0.9*1 + 0.1*2.
  EXPECT_NEAR(state.running_mean[0], 0.2, 1e-15);
  EXPECT_NEAR(state.running_var[0], 0.9 + 0.2, 1e-15);
}

TEST(BatchNorm, ZeroGammaOutputsBeta) {
  auto x = random_tensor({3, 2, 2, 2}, 5);
  auto state = bn_state(2);
  state.gamma = {0.0, 0.0};
  state.beta = {0.25, -4.0};
  const auto y = ops::batchnorm_forward(x, state.ref(), ops::Mode::Training);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(y[(n * 2 + 0) * 4 + i], 0.25);
      EXPECT_EQ(y[(n * 2 + 1) * 4 + i], -4.0);
    }
}

TEST(BatchNorm, InferenceUsesRunningStats) {
  Tensor<double> x({1, 1, 1, 2}, std::vector<double>{2.0, 4.0});
  auto state = bn_state(1);
  state.running_mean = {2.0};
  state.running_var = {4.0 - 1e-5};
  const auto y = ops::batchnorm_forward(x, state.ref(), ops::Mode::Inference);
  EXPECT_NEAR(y[0], 0.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
  EXPECT_EQ(state.running_mean[0], 2.0);
}

TEST(BatchNorm, TrainingRejectsSingleSample) {
  Tensor<double> x({1, 2, 3, 3}, 1.0);
  auto state = bn_state(2);
  EXPECT_THROW(ops::batchnorm_forward(x, state.ref(), ops::Mode::Training), ShapeError);
  EXPECT_NO_THROW(ops::batchnorm_forward(x, state.ref(), ops::Mode::Inference));
}

TEST(BatchNorm, OutputIsStandardized) {
  auto x = random_tensor({8, 3, 4, 4}, 6, -5.0, 9.0);
  auto state = bn_state(3);
  const auto y = ops::batchnorm_forward(x, state.ref(), ops::Mode::Training);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < 16; ++i) sum += y[(n * 3 + c) * 16 + i];
    const double mean = sum / 128;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < 16; ++i) sq += std::pow(y[(n * 3 + c) * 16 + i] - mean, 2);
    EXPECT_LE(std::abs(mean), 1e-5);
    EXPECT_NEAR(sq / 128, 1.0, 1e-3);
  }
}

TEST(BatchNorm, BackwardProperties) {
  auto x = random_tensor({4, 3, 2, 2}, 8);
  auto state = bn_state(3);
  ops::BatchNormCache<double> cache;
  ops::batchnorm_forward(x, state.ref(), ops::Mode::Training, &cache);
  auto g = random_tensor({4, 3, 2, 2}, 9);
  const auto grads = ops::batchnorm_backward(g, cache);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 4; ++i) sum += g[(n * 3 + c) * 4 + i];
    EXPECT_NEAR(grads.beta[c], sum, 1e-12);
  }
  Tensor<double> constant({4, 3, 2, 2}, 0.75);
  const auto cg = ops::batchnorm_backward(constant, cache);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 4; ++i) sum += cg.input[(n * 3 + c) * 4 + i];
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  EXPECT_LT(testing::check_batchnorm(4, 3, 2, 2, 31), 1e-4);
  testing::ShapeSampler sampler(5);
  for (int t = 0; t < 10; ++t) {
    EXPECT_LT(testing::check_batchnorm(sampler.dim(2, 6), sampler.dim(), sampler.dim(),
                                       sampler.dim(), 40 + t),
              1e-4);
  }
}

TEST(Relu, ForwardBackward) {
  Tensor<double> x({3}, std::vector<double>{-1, 0, 2});
  EXPECT_EQ(ops::relu(x).storage(), (std::vector<double>{0, 0, 2}));
  Tensor<double> g({3}, 5.0);
  EXPECT_EQ(ops::relu_backward(g, x).storage(), (std::vector<double>{0, 0, 5}));
  testing::ShapeSampler sampler(3);
  for (int t = 0; t < 5; ++t) {
    EXPECT_LT(testing::check_relu({sampler.dim(), sampler.dim(), sampler.dim(), sampler.dim()}, t), 1e-4);
  }
}

TEST(MaxPool, BasicCases) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto r = ops::maxpool2d(x, ops::PoolSpec{2, 2, 0});
  ASSERT_EQ(r.output.size(), 1u);
  EXPECT_EQ(r.output[0], 4.0);

  Tensor<double> c({2, 3, 5, 5}, -1.5);
  const auto rc = ops::maxpool2d(c);
  ASSERT_EQ(rc.output.shape(), (Tensor<double>::Shape{2, 3, 3, 3}));
  for (double v : rc.output.values()) EXPECT_EQ(v, -1.5);
}

// Exhaustive oracle: all 2^4 binary 2x2 inputs under one 2x2 window; the
// gradient must land on the lowest flat index that attains the maximum.
TEST(MaxPool, TieBreakRoutesToLowestIndex) {
  for (int mask = 0; mask < 16; ++mask) {
    Tensor<double> x({1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) x[i] = (mask >> i) & 1;
    const auto r = ops::maxpool2d(x, ops::PoolSpec{2, 2, 0});
    int expected = 0;
    for (int i = 0; i < 4; ++i)
      if (x[i] > x[expected]) expected = i;
    Tensor<double> g({1, 1, 1, 1}, 1.0);
    const auto gi = ops::maxpool2d_backward(g, r.argmax, x.shape());
    for (int i = 0; i < 4; ++i) EXPECT_EQ(gi[i], i == expected ? 1.0 : 0.0) << "mask " << mask;
  }
}

TEST(MaxPool, BackwardConservesMassAndMatchesFiniteDifferences) {
  auto x = random_tensor({2, 2, 6, 6}, 77);
  const auto r = ops::maxpool2d(x);
  auto g = random_tensor(r.output.shape(), 78);
  const auto gi = ops::maxpool2d_backward(g, r.argmax, x.shape());
  EXPECT_NEAR(std::accumulate(gi.values().begin(), gi.values().end(), 0.0),
              std::accumulate(g.values().begin(), g.values().end(), 0.0), 1e-12);
  testing::ShapeSampler sampler(12);
  for (int t = 0; t < 10; ++t) {
    const std::size_t k = sampler.dim(2, 3);
    const ops::PoolSpec spec{k, sampler.dim(1, 2), sampler.dim(0, k / 2)};
    const std::size_t lo = k > 2 * spec.padding ? k - 2 * spec.padding : 1;
    EXPECT_LT(testing::check_maxpool({sampler.dim(1, 3), sampler.dim(1, 3), sampler.dim(lo, 6),
                                      sampler.dim(lo, 6)},
                                     spec, 500 + t),
              1e-4);
  }
}

TEST(GlobalAvgPool, MeanAndBackward) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(ops::global_avg_pool(x)[0], 2.5);
  Tensor<double> c({2, 2, 3, 3}, 7.0);
  const auto pooled = ops::global_avg_pool(c);
  for (double v : pooled.values()) EXPECT_DOUBLE_EQ(v, 7.0);
  Tensor<double> g({1, 1, 1, 1}, 2.0);
  const auto gi = ops::global_avg_pool_backward(g, x.shape());
  for (double v : gi.values()) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_LT(testing::check_global_avg_pool({3, 4, 5, 2}, 1), 1e-4);
}

TEST(Linear, ForwardCases) {
  Tensor<double> x({1, 2}, std::vector<double>{1, 2});
  Tensor<double> w({2, 3}, std::vector<double>{1, 0, 1, 0, 1, 1});
  const std::vector<double> b{0, 0, 1};
  EXPECT_EQ(ops::linear_forward<double>(x, w, b).storage(), (std::vector<double>{1, 2, 4}));

  auto in = random_tensor({3, 4}, 2);
  Tensor<double> eye({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  const std::vector<double> zeros(4, 0.0);
  EXPECT_EQ(ops::linear_forward<double>(in, eye, zeros), in);
}

TEST(Linear, BackwardMatchesFiniteDifferences) {
  testing::ShapeSampler sampler(4);
  for (int t = 0; t < 10; ++t) {
    EXPECT_LT(testing::check_linear(sampler.dim(), sampler.dim(), sampler.dim(), 60 + t), 1e-4);
  }
}

TEST(Softmax, ClosedForms) {
  Tensor<double> uniform({1, 6}, 0.3);
  const auto pu = ops::softmax(uniform);
  for (double p : pu.values()) EXPECT_NEAR(p, 1.0 / 6.0, 1e-15);
  Tensor<double> two({1, 2}, std::vector<double>{0.0, std::log(2.0)});
  const auto p = ops::softmax(two);
  EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsOnSimplexAndShiftInvariant) {
  auto logits = random_tensor({5, 6}, 14, -30.0, 30.0);
  const auto p = ops::softmax(logits);
  auto shifted = logits;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t k = 0; k < 6; ++k) shifted[r * 6 + k] += 100.0 * (r + 1);
  const auto ps = ops::softmax(shifted);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0;
    for (std::size_t k = 0; k < 6; ++k) {
      sum += p[r * 6 + k];
      EXPECT_NEAR(p[r * 6 + k], ps[r * 6 + k], 1e-12);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor<float>({1, 2, 3, 4, 5}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_TRUE(t.all_finite());
}

TEST(Tensor, FloatForwardStaysFinite) {
  auto xd = random_tensor({2, 3, 8, 8}, 15);
  auto wd = random_tensor({4, 3, 3, 3}, 16);
  const auto y = ops::conv2d_forward<float>(xd.cast<float>(), wd.cast<float>(), {},
                                            ops::ConvSpec::square(3, 4, 3, 2, 1));
  EXPECT_TRUE(y.all_finite());
  const auto yd = ops::conv2d_forward<double>(xd, wd, {}, ops::ConvSpec::square(3, 4, 3, 2, 1));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], yd[i], 1e-5);
}

}  // namespace
}  // namespace glpath
