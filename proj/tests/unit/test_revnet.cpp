// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fd_oracle.hpp"
#include "petra/revnet.hpp"

namespace petra {
namespace {

using ag::Var;
using rev::ReversibleBlock;
using rev::StageKind;

ReversibleBlock zero_block() {
  return {[](Var x, std::span<const Var>) { return ag::scale(x, 0.0); }, {}};
}

ReversibleBlock doubling_block() {
  return {[](Var x, std::span<const Var>) { return ag::scale(x, 2.0); }, {}};
}

// A conv-bn-relu-conv-bn block on `width` channels with fresh parameters.
struct RandomBlock {
  rev::StageSpec spec;
  rev::StageParams params;
  ReversibleBlock block;
};

RandomBlock random_block(Rng& rng, std::int64_t width, DType dtype) {
  RandomBlock r;
  r.spec = rev::small_plan(3, width).stages[1];
  r.params = rev::init_stage(r.spec, rng, dtype);
  // Perturb gamma/beta away from their identity initialisation.
  for (std::size_t i = 0; i < r.params.params.size(); ++i) {
    if (r.params.meta[i].is_bn_param) {
      r.params.params[i] = add(r.params.params[i],
                               rng.normal_tensor(r.params.params[i].shape(), 0, 0.3, dtype));
    }
  }
  r.block = {rev::f_tilde_fn(r.spec, r.params.bn, nn::BnMode::kTrainNoStatUpdate), r.params.params};
  return r;
}

TEST(Reversible, ZeroFunctionSwapsStreams) {
  Rng rng(1);
  Tensor x = rng.normal_tensor({2, 4, 3, 3}, 0, 1, DType::kF64);
  auto [x1, x2] = split_channels(x);
  Tensor y = rev::rev_forward(zero_block(), x);
  EXPECT_TRUE(y.bitwise_equal(concat_channels(x2, x1)));
  EXPECT_TRUE(rev::rev_inverse(zero_block(), y).bitwise_equal(x));
  EXPECT_TRUE(rev::rev_inverse(zero_block(), x).bitwise_equal(y));
}

TEST(Reversible, ScalarStreamsByHand) {
  Tensor x = Tensor::from_values({1, 2, 1, 1}, {1, 2});
  Tensor y = rev::rev_forward(doubling_block(), x);
  EXPECT_EQ(y.to_f64(), (std::vector<double>{2, 5}));
  EXPECT_EQ(rev::rev_inverse(doubling_block(), y).to_f64(), (std::vector<double>{1, 2}));
}

TEST(Reversible, OddChannelsRejected) {
  Tensor x = Tensor::zeros({1, 3, 2, 2}, DType::kF64);
  EXPECT_THROW(rev::rev_forward(zero_block(), x), ShapeError);
  EXPECT_THROW(rev::rev_inverse(zero_block(), x), ShapeError);
}

TEST(Reversible, ShapePreserved) {
  Rng rng(2);
  RandomBlock b = random_block(rng, 8, DType::kF32);
  Tensor x = rng.normal_tensor({3, 8, 5, 5}, 0, 1, DType::kF32);
  EXPECT_EQ(rev::rev_forward(b.block, x).shape(), x.shape());
}

TEST(Reversible, RoundTripOverRandomBlocks) {
  Rng rng(3);
  double worst32 = 0, worst64 = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t width = 2 * (1 + static_cast<std::int64_t>(rng.below(4)));
    for (DType dt : {DType::kF32, DType::kF64}) {
      RandomBlock b = random_block(rng, width, dt);
      Tensor x = rng.normal_tensor({2, width, 4, 4}, 0, 1, dt);
      const double err = max_abs_diff(rev::rev_inverse(b.block, rev::rev_forward(b.block, x)), x);
      (dt == DType::kF32 ? worst32 : worst64) = std::max(dt == DType::kF32 ? worst32 : worst64, err);
    }
  }
  EXPECT_LT(worst32, 1e-5);
  EXPECT_LT(worst64, 1e-11);
}

TEST(Reversible, FusedBackwardBitwiseEqualsNaive) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    RandomBlock b = random_block(rng, 6, DType::kF64);
    Tensor y = rng.normal_tensor({3, 6, 4, 4}, 0, 1, DType::kF64);
    Tensor d = rng.normal_tensor(y.shape(), 0, 1, DType::kF64);
    auto fused = rev::rev_backward_fused(b.block, y, d);
    auto naive = rev::rev_backward_naive(b.block, y, d);
    EXPECT_TRUE(fused.input.bitwise_equal(naive.input));
    EXPECT_TRUE(fused.input_grad.bitwise_equal(naive.input_grad));
    ASSERT_EQ(fused.param_grads.size(), naive.param_grads.size());
    for (std::size_t i = 0; i < fused.param_grads.size(); ++i) {
      EXPECT_TRUE(fused.param_grads[i].bitwise_equal(naive.param_grads[i])) << i;
    }
  }
}

TEST(Reversible, FusedBackwardMatchesFiniteDifferences) {
  Rng rng(5);
  RandomBlock b = random_block(rng, 4, DType::kF64);
  Tensor x = rng.normal_tensor({3, 4, 3, 3}, 0, 1, DType::kF64);
  Tensor d = rng.normal_tensor(x.shape(), 0, 1, DType::kF64);
  auto fused = rev::rev_backward_fused(b.block, rev::rev_forward(b.block, x), d);
  auto whole = rev::stage_fn(b.spec, b.params.bn, nn::BnMode::kTrainNoStatUpdate);
  auto rep = testing::fd_check(whole, x, b.params.params);
  EXPECT_LT(rep.worst(), 1e-4);
  ag::Recorded r = ag::record(whole, x, b.params.params);
  ag::GradPair g = ag::vjp(r.graph, d);
  EXPECT_LT(max_abs_diff(fused.input_grad, g.input_grad), 1e-10);
}

TEST(Reversible, ZeroFunctionBackwardIsSwap) {
  Rng rng(6);
  Tensor y = rng.normal_tensor({2, 4, 2, 2}, 0, 1, DType::kF64);
  Tensor d = rng.normal_tensor(y.shape(), 0, 1, DType::kF64);
  auto r = rev::rev_backward_fused(zero_block(), y, d);
  auto [d1, d2] = split_channels(d);
  EXPECT_TRUE(r.input_grad.bitwise_equal(concat_channels(d2, d1)));
  EXPECT_TRUE(r.param_grads.empty());
}

TEST(Reversible, FusedBackwardEvaluatesFTildeOnce) {
  Rng rng(7);
  RandomBlock b = random_block(rng, 4, DType::kF64);
  int calls = 0;
  ReversibleBlock counted{[&calls, inner = b.block.f_tilde](Var x, std::span<const Var> p) {
                            ++calls;
                            return inner(x, p);
                          },
                          b.block.params};
  Tensor y = rng.normal_tensor({2, 4, 3, 3}, 0, 1, DType::kF64);
  rev::rev_backward_fused(counted, y, y);
  EXPECT_EQ(calls, 1);
  calls = 0;
  rev::rev_backward_naive(counted, y, y);
  EXPECT_EQ(calls, 2);
}

TEST(Reversible, ReconstructionErrorIsLinearInParameterDrift) {
  Rng rng(8);
  RandomBlock b = random_block(rng, 4, DType::kF64);
  Tensor x = rng.normal_tensor({4, 4, 4, 4}, 0, 1, DType::kF64);
  Tensor y = rev::rev_forward(b.block, x);
  std::vector<Tensor> dir;
  for (auto& p : b.params.params) dir.push_back(rng.normal_tensor(p.shape(), 0, 1, DType::kF64));
  auto error_at = [&](double eps) {
    ReversibleBlock moved = b.block;
    for (std::size_t i = 0; i < moved.params.size(); ++i) {
      moved.params[i] = axpy(moved.params[i], eps, dir[i]);
    }
    return norm2(sub(rev::rev_inverse(moved, y), x));
  };
  const double ratio = error_at(1e-3) / error_at(5e-4);
  EXPECT_GE(ratio, 1.5);
  EXPECT_LE(ratio, 2.5);
}

TEST(Downsample, RecomputeEqualsRetainedGraph) {
  Rng rng(9);
  rev::NetworkPlan plan = rev::small_plan(4, 4, {.in_channels = 2, .spatial = 8, .downsample_stage = 2});
  const rev::StageSpec& spec = plan.stages[1];
  ASSERT_EQ(spec.kind, StageKind::kNonReversible);
  rev::StageParams sp = rev::init_stage(spec, rng, DType::kF64);
  auto f = rev::stage_fn(spec, sp.bn, nn::BnMode::kTrainNoStatUpdate);
  Tensor x = rng.normal_tensor({3, 4, 8, 8}, 0, 1, DType::kF64);
  ag::Recorded kept = ag::record(f, x, sp.params);
  EXPECT_EQ(kept.output.shape(), (Shape{3, 8, 4, 4}));
  Tensor d = rng.normal_tensor(kept.output.shape(), 0, 1, DType::kF64);
  ag::GradPair a = ag::vjp(kept.graph, d);
  ag::Recorded again = ag::record(f, x, sp.params);
  ag::GradPair b = ag::vjp(again.graph, d);
  EXPECT_TRUE(a.input_grad.bitwise_equal(b.input_grad));
  for (std::size_t i = 0; i < a.param_grads.size(); ++i) {
    EXPECT_TRUE(a.param_grads[i].bitwise_equal(b.param_grads[i]));
  }
  EXPECT_LT(testing::fd_check(f, x, sp.params).worst(), 1e-4);
}

TEST(Builders, StageCounts) {
  EXPECT_EQ(rev::build_plan("revnet18", "cifar10").size(), 10u);
  EXPECT_EQ(rev::build_plan("revnet34", "cifar10").size(), 18u);
  EXPECT_EQ(rev::build_plan("revnet50", "cifar10").size(), 18u);
  EXPECT_EQ(rev::build_plan("resnet18", "cifar10").size(), 10u);
  EXPECT_THROW(rev::build_plan("vgg16", "cifar10"), ConfigError);
  EXPECT_THROW(rev::build_plan("revnet18", "mnist"), ConfigError);
}

TEST(Builders, OneHeadOneTail) {
  for (const char* name : {"revnet18", "revnet34", "revnet50", "resnet50"}) {
    auto plan = rev::build_plan(name, "cifar10");
    int heads = 0, tails = 0;
    for (auto& s : plan.stages) {
      heads += s.kind == StageKind::kHead;
      tails += s.kind == StageKind::kTail;
    }
    EXPECT_EQ(heads, 1);
    EXPECT_EQ(tails, 1);
    EXPECT_EQ(plan.stages.front().kind, StageKind::kHead);
    EXPECT_EQ(plan.stages.back().kind, StageKind::kTail);
  }
}

TEST(Builders, CifarStemIsThreeByThreeWithoutPooling) {
  auto plan = rev::build_plan("revnet18", "cifar10");
  const auto& stem = plan.stages.front().main;
  EXPECT_EQ(stem.front().kernel, 3);
  for (auto& l : stem) EXPECT_NE(l.kind, nn::LayerKind::kMaxPool);
  auto shapes = rev::activation_shapes(plan, 2);
  EXPECT_EQ(shapes[1], (Shape{2, 128, 32, 32}));
  EXPECT_EQ(shapes.back(), (Shape{2, 10}));
}

std::int64_t count_params(const rev::NetworkPlan& plan) {
  std::int64_t n = 0;
  for (auto& s : plan.stages)
    for (auto& m : rev::stage_param_meta(s)) n += shape_numel(m.shape);
  return n;
}

TEST(Builders, ParameterCountsMatchPublishedModels) {
  const std::pair<const char*, double> expected[] = {
      {"revnet18", 12.2e6}, {"revnet34", 22.3e6}, {"revnet50", 30.4e6},
      {"resnet18", 11.7e6}, {"resnet34", 21.8e6}, {"resnet50", 25.6e6}};
  for (auto [name, count] : expected) {
    const double n = static_cast<double>(count_params(rev::build_plan(name, "imagenet")));
    EXPECT_NEAR(n / count, 1.0, 0.05) << name << " has " << n;
  }
}

TEST(Builders, ReversibleAndResidualCountsComparable) {
  for (const char* depth : {"18", "34", "50"}) {
    const double r = count_params(rev::build_plan(std::string("revnet") + depth, "imagenet"));
    const double s = count_params(rev::build_plan(std::string("resnet") + depth, "imagenet"));
    const double published = std::string(depth) == "50" ? 30.4 / 25.6 : std::string(depth) == "34" ? 22.3 / 21.8 : 12.2 / 11.7;
    EXPECT_NEAR(r / s, published, 0.05 * published) << depth;
  }
}

TEST(Builders, ImagenetShapesCompose) {
  for (const char* name : {"revnet18", "revnet50", "resnet34"}) {
    auto shapes = rev::activation_shapes(rev::build_plan(name, "imagenet"), 1);
    EXPECT_EQ(shapes[1][2], 56) << name;
    EXPECT_EQ(shapes.back(), (Shape{1, 1000})) << name;
  }
}

TEST(Builders, SmallPlan) {
  auto plan = rev::small_plan(4, 8);
  ASSERT_EQ(plan.size(), 4u);
  int reversible = 0;
  for (auto& s : plan.stages) reversible += s.reversible();
  EXPECT_EQ(reversible, 2);
  EXPECT_THROW(rev::small_plan(1, 8), ConfigError);
  EXPECT_THROW(rev::small_plan(4, 7), ConfigError);
}

TEST(Builders, SmallIsDeterministic) {
  auto a = rev::build_small(5, 8, 42, DType::kF32);
  auto b = rev::build_small(5, 8, 42, DType::kF32);
  for (std::size_t j = 0; j < a.stages.size(); ++j)
    for (std::size_t i = 0; i < a.stages[j].params.size(); ++i)
      EXPECT_TRUE(a.stages[j].params[i].bitwise_equal(b.stages[j].params[i]));
}

TEST(Builders, SmallComposesWithChainBackprop) {
  auto net = rev::build_small(4, 8, 1, DType::kF64, {.in_channels = 2, .spatial = 8});
  std::vector<ag::ChainStage> chain;
  for (std::size_t j = 0; j < net.plan.size(); ++j) {
    chain.push_back({rev::stage_fn(net.plan.stages[j], net.stages[j].bn, nn::BnMode::kTrainNoStatUpdate),
                     net.stages[j].params});
  }
  Rng rng(2);
  std::vector<std::int32_t> labels(8);
  for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(10));
  auto r = ag::chain_backprop(chain, rng.normal_tensor({8, 2, 8, 8}, 0, 1, DType::kF64),
                              [&](const Tensor& logits) {
                                auto l = nn::cross_entropy_loss(logits, labels);
                                return std::pair{l.loss, l.grad};
                              });
  EXPECT_TRUE(std::isfinite(r.loss));
  ASSERT_EQ(r.grads.size(), 4u);
  EXPECT_TRUE(r.grads[0].input_grad.empty());
}

TEST(Builders, WeightDecayFlagsPartitionLearnables) {
  for (const char* name : {"revnet18", "resnet50"}) {
    auto plan = rev::build_plan(name, "cifar10");
    std::int64_t decayed = 0, exempt = 0, total = 0;
    for (auto& s : plan.stages) {
      for (auto& m : rev::stage_param_meta(s)) {
        total += shape_numel(m.shape);
        (m.decay_exempt() ? exempt : decayed) += shape_numel(m.shape);
        if (m.name.find(".bn") != std::string::npos || m.name.ends_with(".gamma") ||
            m.name.ends_with(".beta")) {
          EXPECT_TRUE(m.is_bn_param) << m.name;
        }
        if (m.name.ends_with(".bias")) {
          EXPECT_TRUE(m.is_bias) << m.name;
        }
      }
    }
    EXPECT_EQ(decayed + exempt, total);
    EXPECT_GT(exempt, 0);
  }
}

TEST(Serialization, PlanJsonRoundTrip) {
  auto plan = rev::build_plan("revnet50", "imagenet");
  auto back = rev::plan_from_json(rev::plan_to_json(plan));
  EXPECT_EQ(rev::plan_to_json(back), rev::plan_to_json(plan));
  EXPECT_EQ(back.size(), plan.size());
  EXPECT_THROW(rev::plan_from_json("{\"name\": 1}"), ConfigError);
}

TEST(Serialization, CheckpointRoundTrip) {
  auto net = rev::build_small(4, 8, 3, DType::kF32, {.downsample_stage = 2});
  net.stages[1].bn[0].running_mean = Tensor::full({8}, 0.25, DType::kF32);
  const auto path = std::filesystem::temp_directory_path() / "petra_ckpt_test.bin";
  rev::save_checkpoint(path, net);
  auto other = rev::build_small(4, 8, 99, DType::kF32, {.downsample_stage = 2});
  rev::load_checkpoint(path, other);
  for (std::size_t j = 0; j < net.stages.size(); ++j) {
    for (std::size_t i = 0; i < net.stages[j].params.size(); ++i)
      EXPECT_TRUE(net.stages[j].params[i].bitwise_equal(other.stages[j].params[i]));
    for (std::size_t i = 0; i < net.stages[j].bn.size(); ++i)
      EXPECT_TRUE(net.stages[j].bn[i].running_mean.bitwise_equal(other.stages[j].bn[i].running_mean));
  }
  auto wrong = rev::build_small(5, 8, 3, DType::kF32);
  EXPECT_THROW(rev::load_checkpoint(path, wrong), IoError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace petra
