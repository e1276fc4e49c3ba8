// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <array>

#include "fd_oracle.hpp"
#include "petra/autograd.hpp"
#include "petra/rng.hpp"

namespace petra {
namespace {

using ag::Var;
using testing::fd_check;

TEST(Autograd, IdentityRecordsOneNode) {
  Tensor x = Tensor::from_values({3}, {1, 2, 3});
  ag::Recorded r = ag::record([](Var v, std::span<const Var>) { return ag::identity(v); }, x, {});
  EXPECT_TRUE(r.output.bitwise_equal(x));
  EXPECT_EQ(r.graph.tape->node_count(), 1u);
}

TEST(Autograd, ScalarLinear) {
  auto f = [](Var x, std::span<const Var> p) { return ag::matmul(p[0], x); };
  std::vector<Tensor> w{Tensor::from_values({1, 1}, {2})};
  ag::Recorded r = ag::record(f, Tensor::from_values({1, 1}, {3}), w);
  EXPECT_EQ(r.output.to_f64(), std::vector<double>{6});
  ag::GradPair g = ag::vjp(r.graph, Tensor::from_values({1, 1}, {1}));
  EXPECT_EQ(g.input_grad.to_f64(), std::vector<double>{2});
  EXPECT_EQ(g.param_grads[0].to_f64(), std::vector<double>{3});
}

TEST(Autograd, ReluSubgradient) {
  ag::Recorded r = ag::record([](Var v, std::span<const Var>) { return ag::relu(v); },
                              Tensor::from_values({2}, {-1, 2}), {});
  ag::GradPair g = ag::vjp(r.graph, Tensor::from_values({2}, {5, 5}));
  EXPECT_EQ(g.input_grad.to_f64(), (std::vector<double>{0, 5}));
}

TEST(Autograd, UnregisteredOpFailsAtRecord) {
  ag::Tape tape;
  Var x = tape.leaf(Tensor::from_values({1}, {1}));
  EXPECT_THROW(tape.record1("no_such_op", std::array{x}, x.value()), UnregisteredOpError);
}

TEST(Autograd, VjpShapeMismatch) {
  ag::Recorded r = ag::record([](Var v, std::span<const Var>) { return ag::relu(v); },
                              Tensor::from_values({2}, {1, 2}), {});
  EXPECT_THROW(ag::vjp(r.graph, Tensor::from_values({3}, {1, 1, 1})), ShapeError);
}

TEST(Autograd, RecordedConvEqualsPlainConv) {
  Rng rng(2);
  Tensor x = rng.normal_tensor({2, 3, 6, 6}, 0, 1, DType::kF32);
  std::vector<Tensor> k{rng.normal_tensor({4, 3, 3, 3}, 0, 1, DType::kF32)};
  auto f = [](Var v, std::span<const Var> p) { return ag::conv2d(v, p[0], {1, 1}); };
  EXPECT_TRUE(ag::record(f, x, k).output.bitwise_equal(conv2d(x, k[0], {1, 1})));
  EXPECT_TRUE(ag::evaluate(f, x, k).bitwise_equal(conv2d(x, k[0], {1, 1})));
}

TEST(Autograd, EvaluateKeepsNothing) {
  Rng rng(2);
  Tensor x = rng.normal_tensor({2, 3, 6, 6}, 0, 1, DType::kF64);
  std::vector<Tensor> k{rng.normal_tensor({4, 3, 3, 3}, 0, 1, DType::kF64)};
  ag::Tape tape(ag::Tape::Mode::kEvaluate);
  Var y = ag::relu(ag::conv2d(tape.leaf(x), tape.leaf(k[0]), {1, 1}));
  EXPECT_EQ(tape.node_count(), 0u);
  EXPECT_EQ(tape.saved_bytes(), 0u);
  EXPECT_FALSE(y.value().empty());
}

TEST(Autograd, RecordedConvSavesInputAndKernel) {
  Rng rng(2);
  Tensor x = rng.normal_tensor({2, 3, 6, 6}, 0, 1, DType::kF64);
  std::vector<Tensor> k{rng.normal_tensor({4, 3, 3, 3}, 0, 1, DType::kF64)};
  auto f = [](Var v, std::span<const Var> p) { return ag::conv2d(v, p[0], {1, 1}); };
  // Input and kernel, plus stride and padding.
  EXPECT_EQ(ag::record(f, x, k).graph.saved_bytes(),
            x.nbytes() + k[0].nbytes() + 2 * sizeof(std::int64_t));
}

// Every core primitive against central differences.
struct PrimitiveCase {
  const char* name;
  ag::StageFn fn;
  Shape x;
  std::vector<Shape> params;
};

std::vector<PrimitiveCase> primitive_cases() {
  return {
      {"identity", [](Var x, std::span<const Var>) { return ag::identity(x); }, {3, 4}, {}},
      {"add", [](Var x, std::span<const Var> p) { return ag::add(x, p[0]); }, {3, 4}, {{3, 4}}},
      {"sub", [](Var x, std::span<const Var> p) { return ag::sub(x, p[0]); }, {3, 4}, {{3, 4}}},
      {"scale", [](Var x, std::span<const Var>) { return ag::scale(x, -1.7); }, {5}, {}},
      {"matmul", [](Var x, std::span<const Var> p) { return ag::matmul(x, p[0]); }, {3, 4}, {{4, 2}}},
      {"linear", [](Var x, std::span<const Var> p) { return ag::linear(x, p[0], p[1]); },
       {3, 4}, {{5, 4}, {5}}},
      {"conv2d", [](Var x, std::span<const Var> p) { return ag::conv2d(x, p[0], {2, 1}); },
       {2, 3, 5, 5}, {{4, 3, 3, 3}}},
      {"conv2d_1x1", [](Var x, std::span<const Var> p) { return ag::conv2d(x, p[0], {1, 0}); },
       {2, 3, 4, 4}, {{2, 3, 1, 1}}},
      {"add_bias", [](Var x, std::span<const Var> p) { return ag::add_bias(x, p[0]); },
       {2, 3, 2, 2}, {{3}}},
      {"relu", [](Var x, std::span<const Var>) { return ag::relu(x); }, {4, 6}, {}},
      {"maxpool2d", [](Var x, std::span<const Var>) { return ag::maxpool2d(x, {3, 2, 1}); },
       {2, 2, 6, 6}, {}},
      {"avgpool2d", [](Var x, std::span<const Var>) { return ag::avgpool2d(x, {2, 2, 0}); },
       {2, 2, 4, 4}, {}},
      {"global_avgpool", [](Var x, std::span<const Var>) { return ag::global_avgpool(x); },
       {2, 3, 3, 3}, {}},
      {"split_channels",
       [](Var x, std::span<const Var>) {
         auto [a, b] = ag::split_channels(x);
         return ag::sub(ag::scale(a, 2.0), b);
       },
       {2, 4, 2, 2}, {}},
      {"concat_channels",
       [](Var x, std::span<const Var> p) { return ag::concat_channels(x, p[0]); },
       {2, 2, 3, 3}, {{2, 4, 3, 3}}},
  };
}

TEST(Autograd, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(100);
  for (const auto& c : primitive_cases()) {
    Tensor x = rng.normal_tensor(c.x, 0, 1, DType::kF64);
    std::vector<Tensor> ps;
    for (const auto& s : c.params) ps.push_back(rng.normal_tensor(s, 0, 1, DType::kF64));
    auto rep = fd_check(c.fn, x, ps);
    EXPECT_LT(rep.worst(), 1e-4) << c.name;
  }
}

TEST(Autograd, PrimitivesCoverRegistry) {
  for (const auto& name : ag::OpRegistry::global().names()) {
    if (name == "batch_norm") continue;  // covered with the layers
    bool found = false;
    for (const auto& c : primitive_cases()) found |= name == c.name;
    EXPECT_TRUE(found) << name << " has no finite-difference case";
  }
}

TEST(Autograd, VjpIsLinearInDelta) {
  Rng rng(8);
  auto f = [](Var x, std::span<const Var> p) {
    return ag::relu(ag::add_bias(ag::conv2d(x, p[0], {1, 1}), p[1]));
  };
  Tensor x = rng.normal_tensor({2, 3, 5, 5}, 0, 1, DType::kF64);
  std::vector<Tensor> ps{rng.normal_tensor({4, 3, 3, 3}, 0, 1, DType::kF64),
                         rng.normal_tensor({4}, 0, 1, DType::kF64)};
  ag::Recorded r = ag::record(f, x, ps);
  Tensor d1 = rng.normal_tensor(r.output.shape(), 0, 1, DType::kF64);
  Tensor d2 = rng.normal_tensor(r.output.shape(), 0, 1, DType::kF64);
  const double a = 0.7, b = -1.3;
  ag::GradPair g = ag::vjp(r.graph, axpy(scale(d1, a), b, d2));
  ag::GradPair g1 = ag::vjp(r.graph, d1);
  ag::GradPair g2 = ag::vjp(r.graph, d2);
  EXPECT_LT(max_abs_diff(g.input_grad, axpy(scale(g1.input_grad, a), b, g2.input_grad)), 1e-12);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    EXPECT_LT(max_abs_diff(g.param_grads[k],
                           axpy(scale(g1.param_grads[k], a), b, g2.param_grads[k])),
              1e-12);
  }
}

TEST(Autograd, VjpTwiceIsIdentical) {
  Rng rng(9);
  auto f = [](Var x, std::span<const Var> p) { return ag::relu(ag::linear(x, p[0])); };
  ag::Recorded r = ag::record(f, rng.normal_tensor({4, 3}, 0, 1, DType::kF64),
                              std::vector<Tensor>{rng.normal_tensor({2, 3}, 0, 1, DType::kF64)});
  Tensor d = rng.normal_tensor(r.output.shape(), 0, 1, DType::kF64);
  ag::GradPair a = ag::vjp(r.graph, d), b = ag::vjp(r.graph, d);
  EXPECT_TRUE(a.input_grad.bitwise_equal(b.input_grad));
  EXPECT_TRUE(a.param_grads[0].bitwise_equal(b.param_grads[0]));
}

TEST(Autograd, RecomputeIsBitwiseIdentical) {
  Rng rng(10);
  auto f = [](Var x, std::span<const Var> p) {
    return ag::maxpool2d(ag::relu(ag::conv2d(x, p[0], {1, 1})), {2, 2, 0});
  };
  Tensor x = rng.normal_tensor({2, 3, 6, 6}, 0, 1, DType::kF32);
  std::vector<Tensor> ps{rng.normal_tensor({4, 3, 3, 3}, 0, 1, DType::kF32)};
  Tensor d;
  ag::GradPair first;
  {
    ag::Recorded r = ag::record(f, x, ps);
    d = rng.normal_tensor(r.output.shape(), 0, 1, DType::kF32);
    first = ag::vjp(r.graph, d);
  }
  ag::Recorded again = ag::record(f, x, ps);
  ag::GradPair second = ag::vjp(again.graph, d);
  EXPECT_TRUE(first.input_grad.bitwise_equal(second.input_grad));
  EXPECT_TRUE(first.param_grads[0].bitwise_equal(second.param_grads[0]));
}

// Squared loss 0.5 * |y|^2 so the seed gradient is y itself.
std::pair<double, Tensor> half_square(const Tensor& y) { return {0.5 * dot(y, y), y}; }

TEST(Autograd, ChainSingleLinearByHand) {
  // y = W x, L = 0.5 |y|^2: dL/dW = y x^T, dL/dx = W^T y.
  Tensor x = Tensor::from_values({1, 2}, {1, -2});
  Tensor w = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  std::vector<ag::ChainStage> st{
      {[](Var v, std::span<const Var> p) { return ag::linear(v, p[0]); }, {w}}};
  ag::ChainResult r = ag::chain_backprop(st, x, half_square);
  // y = [1 - 4, 3 - 8] = [-3, -5], L = 0.5 * 34.
  EXPECT_EQ(r.loss, 17.0);
  EXPECT_EQ(r.grads[0].param_grads[0].to_f64(), (std::vector<double>{-3, 6, -5, 10}));
}

std::vector<ag::ChainStage> toy_layers(Rng& rng) {
  std::vector<ag::ChainStage> layers;
  const std::int64_t widths[] = {5, 6, 4, 6, 3};
  for (int i = 0; i < 4; ++i) {
    layers.push_back({[](Var v, std::span<const Var> p) { return ag::relu(ag::linear(v, p[0], p[1])); },
                      {rng.normal_tensor({widths[i + 1], widths[i]}, 0, 0.6, DType::kF64),
                       rng.normal_tensor({widths[i + 1]}, 0, 0.2, DType::kF64)}});
  }
  return layers;
}

ag::ChainStage fuse(std::span<const ag::ChainStage> parts) {
  std::vector<ag::StageFn> fns;
  std::vector<Tensor> params;
  std::vector<std::size_t> offsets{0};
  for (const auto& p : parts) {
    fns.push_back(p.fn);
    params.insert(params.end(), p.params.begin(), p.params.end());
    offsets.push_back(params.size());
  }
  return {[fns, offsets](Var v, std::span<const Var> p) {
            for (std::size_t i = 0; i < fns.size(); ++i) {
              v = fns[i](v, p.subspan(offsets[i], offsets[i + 1] - offsets[i]));
            }
            return v;
          },
          params};
}

TEST(Autograd, GradientsIndependentOfStageGrouping) {
  Rng rng(31);
  auto layers = toy_layers(rng);
  Tensor x = rng.normal_tensor({3, 5}, 0, 1, DType::kF64);
  std::span<const ag::ChainStage> all(layers);
  std::vector<ag::ChainStage> two{fuse(all.subspan(0, 2)), fuse(all.subspan(2, 2))};
  ag::ChainResult r4 = ag::chain_backprop(layers, x, half_square);
  ag::ChainResult r2 = ag::chain_backprop(two, x, half_square);
  EXPECT_NEAR(r4.loss, r2.loss, 1e-12 * std::abs(r4.loss));
  for (int s = 0; s < 2; ++s) {
    for (int i = 0; i < 4; ++i) {
      const Tensor& a = r2.grads[s].param_grads[i];
      const Tensor& b = r4.grads[2 * s + i / 2].param_grads[i % 2];
      EXPECT_LE(max_abs_diff(a, b), 1e-12 * std::max(max_abs(b), 1e-300));
    }
  }
}

TEST(Autograd, ChainMatchesFiniteDifferencesThreeStages) {
  Rng rng(41);
  std::vector<ag::ChainStage> st{
      {[](Var v, std::span<const Var> p) { return ag::relu(ag::conv2d(v, p[0], {1, 1})); },
       {rng.normal_tensor({4, 2, 3, 3}, 0, 0.5, DType::kF64)}},
      {[](Var v, std::span<const Var> p) {
         return ag::global_avgpool(ag::add_bias(ag::conv2d(v, p[0], {2, 1}), p[1]));
       },
       {rng.normal_tensor({3, 4, 3, 3}, 0, 0.5, DType::kF64), rng.normal_tensor({3}, 0, 0.5, DType::kF64)}},
      {[](Var v, std::span<const Var> p) { return ag::linear(v, p[0], p[1]); },
       {rng.normal_tensor({2, 3}, 0, 0.5, DType::kF64), rng.normal_tensor({2}, 0, 0.5, DType::kF64)}},
  };
  Tensor x = rng.normal_tensor({2, 2, 4, 4}, 0, 1, DType::kF64);
  ag::ChainResult r = ag::chain_backprop(st, x, half_square);
  const double h = 1e-5;
  for (std::size_t s = 0; s < st.size(); ++s) {
    for (std::size_t k = 0; k < st[s].params.size(); ++k) {
      std::vector<double> numeric(st[s].params[k].numel());
      for (std::size_t i = 0; i < numeric.size(); ++i) {
        auto loss_at = [&](double eps) {
          auto copy = st;
          copy[s].params[k] = testing::perturbed(st[s].params[k], i, eps);
          return ag::chain_backprop(copy, x, half_square).loss;
        };
        numeric[i] = (loss_at(h) - loss_at(-h)) / (2 * h);
      }
      EXPECT_LT(testing::rel_error(r.grads[s].param_grads[k].to_f64(), numeric), 1e-4)
          << "stage " << s << " param " << k;
    }
  }
}

}  // namespace
}  // namespace petra
