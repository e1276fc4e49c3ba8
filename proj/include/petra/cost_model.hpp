// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form storage / communication / compute costs of five training
// methods, buffer memory accounting, and a unit-cost pipeline simulator.
//
// Time unit: one stage forward = 1, one stage backward = 2, reconstructing a
// stage input (inverse or checkpoint recompute) = 1.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "petra/revnet.hpp"
#include "petra/runtime.hpp"

namespace petra::cost {

enum class Method { kBackprop, kReversibleBackprop, kDelayedGradients, kDelayedCheckpointing, kPetra };

std::string to_string(Method method);
/// backprop | reversible-backprop | delayed-gradients | delayed+checkpointing
/// | petra. Throws ConfigError otherwise.
Method method_from_string(const std::string& name);
std::span<const Method> all_methods();

/// Activation memory held by stage j: `full_graphs` copies of its
/// saved-for-backward graph plus `activations` copies of its input.
struct Storage {
  double full_graphs = 0.0;
  double activations = 0.0;

  bool operator==(const Storage&) const = default;
};

struct MethodCost {
  Method method = Method::kPetra;
  int stages = 0;  // J
  int stage = 0;   // j, 1-based
  int accumulation = 1;
  Storage activation_storage;
  double param_copies = 0.0;
  /// Per-boundary volume in units of one activation tensor, forward plus
  /// backward.
  double comm_volume = 0.0;
  double flops = 0.0;
  double mean_time = 0.0;
};

/// Requires 1 <= j <= J and k >= 1; ConfigError otherwise.
MethodCost table1_row(Method method, int J, int j, int k = 1);
MethodCost table1_row(const std::string& method, int J, int j, int k = 1);

/// Per-batch stage costs fed to the simulator.
struct LaneCosts {
  double forward = 1.0;
  double backward = 2.0;
  /// Whether forward and backward run on separate lanes with micro-batches
  /// in flight, or every micro-batch traverses the whole net before the next.
  bool pipelined = true;
};
LaneCosts lane_costs(Method method);

/// Event-time simulation: each stage owns a forward lane and a backward
/// lane, each serving micro-batches in order. Returns the mean interval
/// between completed micro-batches over the second half of the run.
double simulate_latency(Method method, int J, std::int64_t micro_batches);

/// Same metric for a rounds-engine log, each round weighted by its slowest
/// stage: max(forward cost if it ran a forward, backward cost if it ran a
/// backward or tail step).
double rounds_time_per_batch(const runtime::TrainLog& log, const LaneCosts& costs = lane_costs(Method::kPetra));

// ---------------------------------------------------------------------------
// Buffer memory.

struct MemoryConfig {
  bool use_input_buffer = true;
  bool use_param_buffer = true;
  std::size_t bytes_per_scalar = 4;
  int accumulation = 1;
};

struct StageMemory {
  int stage = 0;
  bool reversible = false;
  std::size_t param_bytes = 0;
  std::size_t input_bytes = 0;
  /// Buffered inputs: 2(J-j) slots; zero for the first stage and, without
  /// an input buffer, for reversible stages.
  std::size_t input_buffer_bytes = 0;
  /// Buffered parameter versions: 2(J-j)/k slots.
  std::size_t param_buffer_bytes = 0;
};

struct MemoryReport {
  MemoryConfig config;
  std::int64_t batch = 0;
  std::vector<StageMemory> stages;
  std::size_t model_bytes = 0;
  std::size_t input_buffer_bytes = 0;
  std::size_t param_buffer_bytes = 0;
  std::size_t total_bytes = 0;
  /// Total with both buffers on.
  std::size_t baseline_bytes = 0;
  double savings_percent = 0.0;
};

MemoryReport memory_report(const rev::NetworkPlan& plan, const MemoryConfig& config, std::int64_t batch);

/// Bytes stage `stage` (0-based) retains for its backward at this batch
/// size, measured by recording it once on a random input.
std::size_t full_graph_bytes(const rev::Network& net, std::size_t stage, std::int64_t batch);

// ---------------------------------------------------------------------------
// Report formatting.

std::string table1_text(int J, int j, int k);
std::string table1_csv(int J, int j, int k);
std::vector<MethodCost> parse_table1_csv(const std::string& csv);
std::string memory_text(std::span<const MemoryReport> reports);

}  // namespace petra::cost
