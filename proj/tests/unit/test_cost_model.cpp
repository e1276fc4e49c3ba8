// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "petra/cost_model.hpp"
#include "petra/errors.hpp"
#include "runtime_fixtures.hpp"

namespace petra {
namespace {

using cost::Method;
using cost::table1_row;

TEST(MethodTable, PetraRowAtTenStages) {
  const auto c = table1_row(Method::kPetra, 10, 1);
  EXPECT_EQ(c.flops, 40);
  EXPECT_EQ(c.comm_volume, 4);
  EXPECT_EQ(c.mean_time, 3);
  EXPECT_EQ(c.activation_storage, (cost::Storage{0, 0}));
  EXPECT_EQ(c.param_copies, 1);
}

TEST(MethodTable, EveryCellMatchesClosedForms) {
  for (int J : {1, 2, 6, 10, 17}) {
    for (int j = 1; j <= J; ++j) {
      for (int k : {1, 2, 8}) {
        const double lag = 2.0 * (J - j);
        auto bp = table1_row("backprop", J, j, k);
        EXPECT_EQ(bp.activation_storage, (cost::Storage{1, 0}));
        EXPECT_EQ(bp.param_copies, 1);
        EXPECT_EQ(bp.comm_volume, 1);
        EXPECT_EQ(bp.flops, 3 * J);
        EXPECT_EQ(bp.mean_time, 3 * J);

        auto rb = table1_row("reversible-backprop", J, j, k);
        EXPECT_EQ(rb.activation_storage, (cost::Storage{0, 0}));
        EXPECT_EQ(rb.param_copies, 1);
        EXPECT_EQ(rb.comm_volume, 4);
        EXPECT_EQ(rb.flops, 4 * J);
        EXPECT_EQ(rb.mean_time, 4 * J);

        auto dg = table1_row("delayed-gradients", J, j, k);
        EXPECT_EQ(dg.activation_storage, (cost::Storage{lag, 0}));
        EXPECT_EQ(dg.param_copies, lag / k);
        EXPECT_EQ(dg.comm_volume, 1);
        EXPECT_EQ(dg.flops, 3 * J);
        EXPECT_EQ(dg.mean_time, 2);

        auto ck = table1_row("delayed+checkpointing", J, j, k);
        EXPECT_EQ(ck.activation_storage, (cost::Storage{0, lag}));
        EXPECT_EQ(ck.param_copies, 1);
        EXPECT_EQ(ck.comm_volume, 1);
        EXPECT_EQ(ck.flops, 4 * J);
        EXPECT_EQ(ck.mean_time, 3);

        auto pt = table1_row("petra", J, j, k);
        EXPECT_EQ(pt.activation_storage, (cost::Storage{0, 0}));
        EXPECT_EQ(pt.param_copies, 1);
        EXPECT_EQ(pt.comm_volume, 4);
        EXPECT_EQ(pt.flops, 4 * J);
        EXPECT_EQ(pt.mean_time, 3);
      }
    }
  }
}

TEST(MethodTable, DelayedGradientsFirstStageHoldsEighteenGraphs) {
  EXPECT_EQ(table1_row(Method::kDelayedGradients, 10, 1).activation_storage.full_graphs, 18);
}

TEST(MethodTable, SixfoldAtSixStages) {
  EXPECT_EQ(table1_row(Method::kBackprop, 6, 1).mean_time / table1_row(Method::kPetra, 6, 1).mean_time, 6);
}

TEST(MethodTable, RejectsBadArguments) {
  EXPECT_THROW(table1_row(Method::kPetra, 4, 0), ConfigError);
  EXPECT_THROW(table1_row(Method::kPetra, 4, 5), ConfigError);
  EXPECT_THROW(table1_row(Method::kPetra, 4, 1, 0), ConfigError);
  EXPECT_THROW(table1_row("pipedream", 4, 1), ConfigError);
}

TEST(MethodTable, CsvRoundTrip) {
  const std::string csv = cost::table1_csv(10, 3, 4);
  const auto rows = cost::parse_table1_csv(csv);
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& r : rows) {
    const auto want = table1_row(r.method, 10, 3, 4);
    EXPECT_EQ(r.stages, 10);
    EXPECT_EQ(r.stage, 3);
    EXPECT_EQ(r.accumulation, 4);
    EXPECT_EQ(r.activation_storage, want.activation_storage);
    EXPECT_EQ(r.param_copies, want.param_copies);
    EXPECT_EQ(r.comm_volume, want.comm_volume);
    EXPECT_EQ(r.flops, want.flops);
    EXPECT_EQ(r.mean_time, want.mean_time);
  }
  EXPECT_EQ(cost::parse_table1_csv(csv).size(), rows.size());
  EXPECT_THROW(cost::parse_table1_csv("h\npetra,1,2\n"), IoError);
}

TEST(MethodTable, TextListsEveryMethod) {
  const std::string t = cost::table1_text(10, 1, 1);
  for (Method m : cost::all_methods()) EXPECT_NE(t.find(cost::to_string(m)), std::string::npos);
}

// ---------------------------------------------------------------------------

TEST(Latency, AgreesWithClosedFormsAcrossDepths) {
  for (int J : {2, 4, 8, 16}) {
    for (Method m : cost::all_methods()) {
      const double sim = cost::simulate_latency(m, J, 20 * J);
      const double want = table1_row(m, J, 1).mean_time;
      EXPECT_NEAR(sim, want, 0.05 * want) << cost::to_string(m) << " J=" << J;
    }
  }
}

TEST(Latency, PetraTenStagesFiveHundredBatches) {
  EXPECT_NEAR(cost::simulate_latency(Method::kPetra, 10, 500), 3.0, 0.15);
  EXPECT_NEAR(cost::simulate_latency(Method::kBackprop, 10, 500), 30.0, 1.5);
  EXPECT_NEAR(cost::simulate_latency(Method::kDelayedGradients, 10, 500), 2.0, 0.1);
}

TEST(Latency, PetraFlatBackpropLinearInDepth) {
  double prev = 0;
  for (int J = 2; J <= 12; ++J) {
    EXPECT_DOUBLE_EQ(cost::simulate_latency(Method::kPetra, J, 40 * J), 3.0);
    const double bp = cost::simulate_latency(Method::kBackprop, J, 40 * J);
    EXPECT_DOUBLE_EQ(bp, 3.0 * J);
    if (J > 2) {
      EXPECT_DOUBLE_EQ(bp - prev, 3.0);
    }
    prev = bp;
  }
}

TEST(Latency, RoundsEngineMatchesSimulator) {
  const int J = 10;
  auto net = testing::small_net(J, 4, 3, DType::kF64, 4, 2);
  runtime::Pipeline pipe(net, testing::constant_lr(0.01));
  auto batches = testing::synth_batches(20 * J, 2, 4, 2, 5);
  auto log = pipe.run_rounds(testing::vector_source(batches));
  const double measured = cost::rounds_time_per_batch(log);
  const double sim = cost::simulate_latency(Method::kPetra, J, 20 * J);
  EXPECT_NEAR(measured, sim, 0.1 * sim);
}

TEST(Latency, RoundsCheckNeedsRoundsLog) {
  runtime::TrainLog log;
  log.completions = {1};
  EXPECT_THROW(cost::rounds_time_per_batch(log), ConfigError);
}

// ---------------------------------------------------------------------------

// Byte counts from a real network run: parameter tensors and the activations
// each stage actually receives.
struct Measured {
  std::vector<std::size_t> params;
  std::vector<std::size_t> inputs;
};

Measured measure(const rev::Network& net, std::int64_t batch) {
  Measured m;
  Rng rng(1);
  Tensor x = rng.normal_tensor({batch, net.plan.input[0], net.plan.input[1], net.plan.input[2]}, 0, 1, DType::kF32);
  for (std::size_t j = 0; j < net.stages.size(); ++j) {
    m.params.push_back(net.stages[j].nbytes());
    m.inputs.push_back(x.nbytes());
    auto bn = net.stages[j].bn;
    x = ag::evaluate(rev::stage_fn(net.plan.stages[j], bn, nn::BnMode::kTrainNoStatUpdate), x,
                     net.stages[j].params);
  }
  return m;
}

TEST(Memory, MatchesMeasuredNetwork) {
  rev::SmallOptions o;
  o.spatial = 8;
  o.downsample_stage = 3;
  auto net = rev::build_small(6, 8, 2, DType::kF32, o);
  const std::int64_t batch = 3;
  const Measured m = measure(net, batch);
  const auto J = static_cast<int>(net.stages.size());
  for (bool in : {true, false}) {
    for (bool pr : {true, false}) {
      for (int k : {1, 4}) {
        cost::MemoryConfig cfg{in, pr, 4, k};
        const auto r = cost::memory_report(net.plan, cfg, batch);
        std::size_t total = 0;
        for (int j = 1; j <= J; ++j) {
          const bool rev = net.plan.stages[j - 1].reversible();
          const std::size_t lag = 2 * (J - j);
          const std::size_t ib = (j > 1 && (in || !rev)) ? lag * m.inputs[j - 1] : 0;
          const std::size_t pb = pr ? lag * m.params[j - 1] / k : 0;
          EXPECT_EQ(r.stages[j - 1].param_bytes, m.params[j - 1]);
          EXPECT_EQ(r.stages[j - 1].input_buffer_bytes, ib) << j;
          EXPECT_EQ(r.stages[j - 1].param_buffer_bytes, pb) << j;
          total += m.params[j - 1] + ib + pb;
        }
        EXPECT_EQ(r.total_bytes, total);
        EXPECT_EQ(r.model_bytes + r.input_buffer_bytes + r.param_buffer_bytes, r.total_bytes);
      }
    }
  }
}

TEST(Memory, BaselineSavesNothing) {
  const auto r = cost::memory_report(rev::build_plan("revnet18", "cifar10"), {}, 64);
  EXPECT_EQ(r.savings_percent, 0.0);
  EXPECT_EQ(r.total_bytes, r.baseline_bytes);
}

TEST(Memory, RevNet50ImageNetSavings) {
  const auto plan = rev::build_plan("revnet50", "imagenet");
  const auto inputs_only = cost::memory_report(plan, {false, true}, 64);
  const auto params_only = cost::memory_report(plan, {true, false}, 64);
  const auto neither = cost::memory_report(plan, {false, false}, 64);
  EXPECT_GE(inputs_only.savings_percent, 50.0);
  EXPECT_GT(neither.savings_percent, params_only.savings_percent);
  EXPECT_GT(neither.savings_percent, inputs_only.savings_percent);
  EXPECT_GT(params_only.savings_percent, 0.0);
  RecordProperty("inputs_only", std::to_string(inputs_only.savings_percent));
  RecordProperty("neither", std::to_string(neither.savings_percent));
}

TEST(Memory, FirstStageNeverBuffersInput) {
  const auto r = cost::memory_report(rev::build_plan("resnet18", "cifar10"), {}, 8);
  EXPECT_EQ(r.stages.front().input_buffer_bytes, 0u);
  EXPECT_EQ(r.stages.back().input_buffer_bytes, 0u);
  EXPECT_GT(r.stages[1].input_buffer_bytes, 0u);
}

TEST(Memory, FullGraphExceedsInputForReversibleStage) {
  auto net = testing::small_net(4, 8, 1, DType::kF32);
  const std::size_t fg = cost::full_graph_bytes(net, 1, 4);
  const std::size_t input = 4 * 8 * 8 * 8 * sizeof(float);
  EXPECT_GT(fg, input);
  EXPECT_GT(cost::full_graph_bytes(net, 0, 4), 0u);
  const std::size_t fg8 = cost::full_graph_bytes(net, 1, 8);
  EXPECT_GT(fg8, fg);
  EXPECT_LE(fg8, 2 * fg);
  EXPECT_THROW(cost::full_graph_bytes(net, 9, 4), ConfigError);
}

}  // namespace
}  // namespace petra
