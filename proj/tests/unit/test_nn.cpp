// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "petra/nn.hpp"

namespace petra {
namespace {

using ag::Var;
using nn::BatchNormState;
using nn::BnMode;

Tensor standardized(Rng& rng, Shape shape) {
  // Per-channel mean 0, biased variance 1, computed exactly in f64.
  Tensor x = rng.normal_tensor(shape, 0, 1, DType::kF64);
  nn::ChannelStats st = nn::channel_stats(x);
  std::vector<double> v = x.to_f64();
  const std::int64_t c = shape[1], inner = shape[2] * shape[3];
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::int64_t ch = (static_cast<std::int64_t>(i) / inner) % c;
    v[i] = (v[i] - st.mean.at(ch)) / std::sqrt(st.var.at(ch));
  }
  return Tensor::from_values(shape, v, DType::kF64);
}

TEST(BatchNorm, NormalizedInputPassesThrough) {
  Rng rng(1);
  Tensor x = standardized(rng, {8, 3, 4, 4});
  const Tensor one = Tensor::full({3}, 1, DType::kF64), zero = Tensor::zeros({3}, DType::kF64);
  BatchNormState s = BatchNormState::init(3, DType::kF64);
  s.eps = 1e-9;
  EXPECT_LT(max_abs_diff(x, nn::batchnorm_forward(x, one, zero, s, BnMode::kTrainNoStatUpdate)),
            1e-6);
  // With the default eps the only change is the 1 / sqrt(1 + eps) shrink.
  s.eps = 1e-5;
  Tensor y = nn::batchnorm_forward(x, one, zero, s, BnMode::kTrainNoStatUpdate);
  EXPECT_LT(max_abs_diff(y, scale(x, 1 / std::sqrt(1 + 1e-5))), 1e-12);
}

TEST(BatchNorm, NoStatUpdateLeavesRunningStats) {
  Rng rng(2);
  BatchNormState s = BatchNormState::init(3, DType::kF32);
  s.running_mean = rng.normal_tensor({3}, 0, 1, DType::kF32);
  const Tensor before = s.running_mean, before_var = s.running_var;
  Tensor x = rng.normal_tensor({4, 3, 2, 2}, 5, 2, DType::kF32);
  nn::batchnorm_forward(x, Tensor::full({3}, 1, DType::kF32), Tensor::zeros({3}, DType::kF32), s,
                        BnMode::kTrainNoStatUpdate);
  EXPECT_TRUE(s.running_mean.bitwise_equal(before));
  EXPECT_TRUE(s.running_var.bitwise_equal(before_var));
  // Evaluating on a recording tape does not touch them either.
  ag::Tape tape;
  nn::batch_norm(tape.leaf(x), tape.leaf(Tensor::full({3}, 1, DType::kF32)),
                 tape.leaf(Tensor::zeros({3}, DType::kF32)), s, BnMode::kTrainNoStatUpdate);
  nn::batch_norm(tape.leaf(x), tape.leaf(Tensor::full({3}, 1, DType::kF32)),
                 tape.leaf(Tensor::zeros({3}, DType::kF32)), s, BnMode::kEval);
  EXPECT_TRUE(s.running_mean.bitwise_equal(before));
  EXPECT_EQ(s.updates, 0);
}

TEST(BatchNorm, EmaConvergesGeometrically) {
  // Constant batch with mean mu: running_mean_t = mu (1 - (1 - m)^t).
  const double mu = 3.0, m = 0.1;
  Tensor x = Tensor::full({4, 1, 2, 2}, mu, DType::kF64);
  BatchNormState s = BatchNormState::init(1, DType::kF64);
  for (int t = 1; t <= 5; ++t) {
    nn::batchnorm_forward(x, Tensor::full({1}, 1, DType::kF64), Tensor::zeros({1}, DType::kF64), s,
                          BnMode::kTrainWithStatUpdate);
    EXPECT_NEAR(s.running_mean.at(0), mu * (1 - std::pow(1 - m, t)), 1e-12);
    // Zero batch variance: running_var_t = (1 - m)^t.
    EXPECT_NEAR(s.running_var.at(0), std::pow(1 - m, t), 1e-12);
  }
  EXPECT_EQ(s.updates, 5);
}

TEST(BatchNorm, RunningVarUsesUnbiasedEstimate) {
  Tensor x = Tensor::from_values({2, 1}, {1, 3});
  BatchNormState s = BatchNormState::init(1, DType::kF64);
  nn::batchnorm_forward(x, Tensor::full({1}, 1, DType::kF64), Tensor::zeros({1}, DType::kF64), s,
                        BnMode::kTrainWithStatUpdate);
  // Unbiased var of {1, 3} is 2.
  EXPECT_NEAR(s.running_var.at(0), 0.9 + 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(s.running_mean.at(0), 0.2, 1e-15);
}

TEST(BatchNorm, EvalBeforeAnyUpdateUsesInit) {
  Rng rng(3);
  Tensor x = rng.normal_tensor({2, 2, 3, 3}, 0, 1, DType::kF64);
  BatchNormState s = BatchNormState::init(2, DType::kF64);
  Tensor y = nn::batchnorm_forward(x, Tensor::full({2}, 1, DType::kF64),
                                   Tensor::zeros({2}, DType::kF64), s, BnMode::kEval);
  EXPECT_LT(max_abs_diff(y, scale(x, 1 / std::sqrt(1 + 1e-5))), 1e-15);
}

TEST(BatchNorm, EvalIsPerChannelAffine) {
  Rng rng(4);
  const std::int64_t c = 3;
  BatchNormState s = BatchNormState::init(c, DType::kF64);
  s.running_mean = rng.normal_tensor({c}, 0, 1, DType::kF64);
  s.running_var = rng.uniform_tensor({c}, 0.5, 2.0, DType::kF64);
  Tensor gamma = rng.normal_tensor({c}, 1, 0.3, DType::kF64);
  Tensor beta = rng.normal_tensor({c}, 0, 0.3, DType::kF64);
  Tensor x = rng.normal_tensor({3, c, 2, 2}, 0, 2, DType::kF64);
  Tensor y = nn::batchnorm_forward(x, gamma, beta, s, BnMode::kEval);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const std::int64_t ch = (i / 4) % c;
    const double inv = 1 / std::sqrt(s.running_var.at(ch) + s.eps);
    const double expected = gamma.at(ch) * (x.at(i) - s.running_mean.at(ch)) * inv + beta.at(ch);
    EXPECT_NEAR(y.at(i), expected, 1e-14);
  }
  // f(a x + b) - f(b) = a (f(x) - f(0)) channelwise.
  const double a = 1.7, b = -0.4;
  Tensor xb = Tensor::full(x.shape(), b, DType::kF64);
  Tensor lhs = sub(nn::batchnorm_forward(axpy(xb, a, x), gamma, beta, s, BnMode::kEval),
                   nn::batchnorm_forward(xb, gamma, beta, s, BnMode::kEval));
  Tensor rhs = scale(sub(y, nn::batchnorm_forward(Tensor::zeros(x.shape(), DType::kF64), gamma,
                                                  beta, s, BnMode::kEval)),
                     a);
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(BatchNorm, ChannelMismatch) {
  BatchNormState s = BatchNormState::init(4, DType::kF64);
  EXPECT_THROW(nn::batchnorm_forward(Tensor::zeros({2, 3, 2, 2}, DType::kF64),
                                     Tensor::zeros({3}, DType::kF64),
                                     Tensor::zeros({3}, DType::kF64), s, BnMode::kEval),
               ShapeError);
}

TEST(BatchNorm, VjpMatchesFiniteDifferences) {
  Rng rng(5);
  for (BnMode mode : {BnMode::kTrainNoStatUpdate, BnMode::kEval}) {
    for (Shape shape : {Shape{4, 3, 3, 3}, Shape{6, 5}}) {
      const std::int64_t c = shape[1];
      BatchNormState s = BatchNormState::init(c, DType::kF64);
      s.running_mean = rng.normal_tensor({c}, 0, 1, DType::kF64);
      s.running_var = rng.uniform_tensor({c}, 0.5, 2, DType::kF64);
      auto f = [&s, mode](Var x, std::span<const Var> p) {
        return nn::batch_norm(x, p[0], p[1], s, mode);
      };
      Tensor x = rng.normal_tensor(shape, 1, 2, DType::kF64);
      std::vector<Tensor> ps{rng.normal_tensor({c}, 1, 0.5, DType::kF64),
                             rng.normal_tensor({c}, 0, 0.5, DType::kF64)};
      EXPECT_LT(testing::fd_check(f, x, ps).worst(), 1e-4);
    }
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Tensor z = Tensor::zeros({3, 10}, DType::kF64);
  std::vector<std::int32_t> y{0, 4, 9};
  EXPECT_NEAR(nn::cross_entropy_loss(z, y).loss, std::log(10.0), 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectGivesZero) {
  Tensor z = Tensor::from_values({1, 3}, {0, 1000, 0});
  std::vector<std::int32_t> y{1};
  nn::LossResult r = nn::cross_entropy_loss(z, y);
  EXPECT_LT(r.loss, 1e-300);
  EXPECT_EQ(r.correct, 1);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  Tensor z = rng.normal_tensor({4, 10}, 0, 2, DType::kF64);
  std::vector<std::int32_t> y{3, 0, 9, 3};
  nn::LossResult r = nn::cross_entropy_loss(z, y);
  std::vector<double> num(z.numel());
  for (std::size_t i = 0; i < num.size(); ++i) {
    num[i] = (nn::cross_entropy_loss(testing::perturbed(z, i, 1e-5), y).loss -
              nn::cross_entropy_loss(testing::perturbed(z, i, -1e-5), y).loss) /
             2e-5;
  }
  EXPECT_LT(testing::rel_error(r.grad.to_f64(), num), 1e-4);
  for (int i = 0; i < 4; ++i) {
    double row = 0;
    for (int c = 0; c < 10; ++c) row += r.grad.at(i * 10 + c);
    EXPECT_NEAR(row, 0, 1e-15);
  }
}

TEST(CrossEntropy, OutOfRangeLabel) {
  std::vector<std::int32_t> y{3};
  EXPECT_THROW(nn::cross_entropy_loss(Tensor::zeros({1, 3}, DType::kF64), y), Error);
}

TEST(Init, SameSeedSameParams) {
  auto spec = nn::LayerSpec::conv("c", 3, 8, 3, 1, 1);
  Rng a(77), b(77);
  auto pa = nn::init_params(spec, a, DType::kF32);
  auto pb = nn::init_params(spec, b, DType::kF32);
  ASSERT_EQ(pa.size(), pb.size());
  EXPECT_TRUE(pa[0].bitwise_equal(pb[0]));
}

TEST(Init, GammaOnesBetaZerosBiasZeros) {
  Rng rng(1);
  auto bn = nn::init_params(nn::LayerSpec::batch_norm("bn", 5), rng, DType::kF64);
  EXPECT_EQ(bn[0].to_f64(), std::vector<double>(5, 1.0));
  EXPECT_EQ(bn[1].to_f64(), std::vector<double>(5, 0.0));
  auto lin = nn::init_params(nn::LayerSpec::linear("fc", 4, 2), rng, DType::kF64);
  EXPECT_EQ(lin[1].to_f64(), std::vector<double>(2, 0.0));
}

TEST(Init, KaimingUniformVariance) {
  // U(-b, b) with b = sqrt(6 / fan_in) has variance b^2 / 3 = 2 / fan_in.
  Rng rng(12);
  Tensor w = nn::init_params(nn::LayerSpec::linear("fc", 64, 64), rng, DType::kF64)[0];
  const double mean = sum(w) / w.numel();
  double var = 0;
  for (double v : w.to_f64()) var += (v - mean) * (v - mean);
  var /= w.numel();
  EXPECT_NEAR(var, 2.0 / 64, 0.2 * 2.0 / 64);
  EXPECT_LE(max_abs(w), std::sqrt(6.0 / 64));
}

TEST(Layers, ParamFlags) {
  auto conv = nn::layer_params(nn::LayerSpec::conv("c", 2, 4, 3, 1, 1));
  ASSERT_EQ(conv.size(), 1u);
  EXPECT_FALSE(conv[0].decay_exempt());
  auto lin = nn::layer_params(nn::LayerSpec::linear("fc", 2, 4));
  EXPECT_FALSE(lin[0].decay_exempt());
  EXPECT_TRUE(lin[1].is_bias);
  for (auto& m : nn::layer_params(nn::LayerSpec::batch_norm("bn", 4))) EXPECT_TRUE(m.is_bn_param);
}

TEST(Layers, ComposedConvBnReluStageMatchesFiniteDifferences) {
  Rng rng(13);
  std::vector<nn::LayerSpec> specs{nn::LayerSpec::conv("c", 2, 4, 3, 2, 1),
                                   nn::LayerSpec::batch_norm("bn", 4), nn::LayerSpec::relu("r"),
                                   nn::LayerSpec::global_avg_pool("gap"),
                                   nn::LayerSpec::linear("fc", 4, 3)};
  std::vector<Tensor> params;
  for (auto& s : specs) {
    auto p = nn::init_params(s, rng, DType::kF64);
    params.insert(params.end(), p.begin(), p.end());
  }
  std::vector<BatchNormState> states{BatchNormState::init(4, DType::kF64)};
  auto f = [&](Var x, std::span<const Var> p) {
    nn::BnContext bn(states, BnMode::kTrainNoStatUpdate);
    std::size_t off = 0;
    for (auto& s : specs) {
      const std::size_t n = nn::layer_params(s).size();
      x = nn::apply_layer(s, x, p.subspan(off, n), bn);
      off += n;
    }
    return x;
  };
  Tensor x = rng.normal_tensor({3, 2, 5, 5}, 0, 1, DType::kF64);
  EXPECT_LT(testing::fd_check(f, x, params).worst(), 1e-4);
  Shape shape = x.shape();
  for (auto& s : specs) shape = nn::layer_output_shape(s, shape);
  EXPECT_EQ(shape, (Shape{3, 3}));
}

}  // namespace
}  // namespace petra
