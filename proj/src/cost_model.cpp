// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include "petra/cost_model.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <sstream>

#include "petra/errors.hpp"
#include "petra/rng.hpp"

namespace petra::cost {

namespace {

constexpr std::array kMethods = {Method::kBackprop, Method::kReversibleBackprop, Method::kDelayedGradients,
                                 Method::kDelayedCheckpointing, Method::kPetra};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::kBackprop: return "backprop";
    case Method::kReversibleBackprop: return "reversible-backprop";
    case Method::kDelayedGradients: return "delayed-gradients";
    case Method::kDelayedCheckpointing: return "delayed+checkpointing";
    case Method::kPetra: return "petra";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  for (Method m : kMethods) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name +
                    "' (expected backprop, reversible-backprop, delayed-gradients, delayed+checkpointing, petra)");
}

std::span<const Method> all_methods() { return kMethods; }

MethodCost table1_row(Method method, int J, int j, int k) {
  if (J < 1 || j < 1 || j > J) {
    throw ConfigError("stage index must satisfy 1 <= j <= J (got j=" + std::to_string(j) +
                      ", J=" + std::to_string(J) + ")");
  }
  if (k < 1) throw ConfigError("accumulation k must be >= 1");
  const double lag = 2.0 * (J - j);
  MethodCost c;
  c.method = method;
  c.stages = J;
  c.stage = j;
  c.accumulation = k;
  switch (method) {
    case Method::kBackprop:
      c.activation_storage = {1, 0};
      c.param_copies = 1;
      c.comm_volume = 1;
      c.flops = 3.0 * J;
      c.mean_time = 3.0 * J;
      break;
    case Method::kReversibleBackprop:
      c.param_copies = 1;
      c.comm_volume = 4;
      c.flops = 4.0 * J;
      c.mean_time = 4.0 * J;
      break;
    case Method::kDelayedGradients:
      c.activation_storage = {lag, 0};
      c.param_copies = lag / k;
      c.comm_volume = 1;
      c.flops = 3.0 * J;
      c.mean_time = 2;
      break;
    case Method::kDelayedCheckpointing:
      c.activation_storage = {0, lag};
      c.param_copies = 1;
      c.comm_volume = 1;
      c.flops = 4.0 * J;
      c.mean_time = 3;
      break;
    case Method::kPetra:
      c.param_copies = 1;
      c.comm_volume = 4;
      c.flops = 4.0 * J;
      c.mean_time = 3;
      break;
  }
  return c;
}

MethodCost table1_row(const std::string& method, int J, int j, int k) {
  return table1_row(method_from_string(method), J, j, k);
}

LaneCosts lane_costs(Method method) {
  switch (method) {
    case Method::kBackprop: return {1, 2, false};
    case Method::kReversibleBackprop: return {1, 3, false};
    case Method::kDelayedGradients: return {1, 2, true};
    case Method::kDelayedCheckpointing: return {1, 3, true};
    case Method::kPetra: return {1, 3, true};
  }
  return {};
}

namespace {

double second_half_interval(const std::vector<double>& done) {
  const std::size_t n = done.size();
  if (n < 2) throw ConfigError("need at least two completed micro-batches");
  const std::size_t h = n / 2;
  return (done[n - 1] - done[h - 1]) / static_cast<double>(n - h);
}

}  // namespace

double simulate_latency(Method method, int J, std::int64_t micro_batches) {
  if (J < 1) throw ConfigError("J must be >= 1");
  const LaneCosts c = lane_costs(method);
  std::vector<double> done;
  done.reserve(static_cast<std::size_t>(micro_batches));

  if (!c.pipelined) {
    double t = 0;
    for (std::int64_t m = 0; m < micro_batches; ++m) {
      for (int j = 0; j < J; ++j) t += c.forward;
      for (int j = 0; j < J; ++j) t += c.backward;
      done.push_back(t);
    }
    return second_half_interval(done);
  }

  // fwd[j] / bwd[j]: time lane j finished its previous micro-batch.
  std::vector<double> fwd(J, 0.0), bwd(J, 0.0);
  for (std::int64_t m = 0; m < micro_batches; ++m) {
    double ready = 0;
    for (int j = 0; j < J; ++j) {
      fwd[j] = std::max(ready, fwd[j]) + c.forward;
      ready = fwd[j];
    }
    for (int j = J - 1; j >= 0; --j) {
      bwd[j] = std::max(ready, bwd[j]) + c.backward;
      ready = bwd[j];
    }
    done.push_back(ready);
  }
  return second_half_interval(done);
}

double rounds_time_per_batch(const runtime::TrainLog& log, const LaneCosts& costs) {
  if (log.round_activity.size() != log.completions.size()) {
    throw ConfigError("log has no per-round activity (rounds engine only)");
  }
  std::vector<double> done;
  double t = 0;
  for (std::size_t r = 0; r < log.round_activity.size(); ++r) {
    double w = 0;
    for (std::uint8_t bits : log.round_activity[r]) {
      if (bits & 1) w = std::max(w, costs.forward);
      if (bits & 6) w = std::max(w, costs.backward);
    }
    t += w;
    for (int i = 0; i < log.completions[r]; ++i) done.push_back(t);
  }
  return second_half_interval(done);
}

// ---------------------------------------------------------------------------

MemoryReport memory_report(const rev::NetworkPlan& plan, const MemoryConfig& config, std::int64_t batch) {
  if (config.accumulation < 1) throw ConfigError("accumulation k must be >= 1");
  const auto shapes = rev::activation_shapes(plan, batch);
  const auto J = static_cast<std::int64_t>(plan.size());

  auto tally = [&](const MemoryConfig& cfg, std::vector<StageMemory>* out) {
    std::size_t total = 0;
    for (std::int64_t idx = 0; idx < J; ++idx) {
      const auto& spec = plan.stages[idx];
      const std::int64_t j = idx + 1;
      StageMemory s;
      s.stage = static_cast<int>(j);
      s.reversible = spec.reversible();
      std::int64_t count = 0;
      for (const auto& m : rev::stage_param_meta(spec)) count += shape_numel(m.shape);
      s.param_bytes = static_cast<std::size_t>(count) * cfg.bytes_per_scalar;
      s.input_bytes = static_cast<std::size_t>(shape_numel(shapes[idx])) * cfg.bytes_per_scalar;
      const std::int64_t lag = 2 * (J - j);
      const bool keeps_input = j > 1 && (cfg.use_input_buffer || !s.reversible);
      if (keeps_input) s.input_buffer_bytes = static_cast<std::size_t>(lag) * s.input_bytes;
      if (cfg.use_param_buffer) {
        s.param_buffer_bytes = static_cast<std::size_t>(lag) * s.param_bytes / static_cast<std::size_t>(cfg.accumulation);
      }
      total += s.param_bytes + s.input_buffer_bytes + s.param_buffer_bytes;
      if (out) out->push_back(s);
    }
    return total;
  };

  MemoryReport r;
  r.config = config;
  r.batch = batch;
  r.total_bytes = tally(config, &r.stages);
  for (const auto& s : r.stages) {
    r.model_bytes += s.param_bytes;
    r.input_buffer_bytes += s.input_buffer_bytes;
    r.param_buffer_bytes += s.param_buffer_bytes;
  }
  MemoryConfig base = config;
  base.use_input_buffer = base.use_param_buffer = true;
  r.baseline_bytes = tally(base, nullptr);
  r.savings_percent = r.baseline_bytes
                          ? 100.0 * (1.0 - static_cast<double>(r.total_bytes) / static_cast<double>(r.baseline_bytes))
                          : 0.0;
  return r;
}

std::size_t full_graph_bytes(const rev::Network& net, std::size_t stage, std::int64_t batch) {
  if (stage >= net.stages.size()) throw ConfigError("stage index out of range");
  const auto shapes = rev::activation_shapes(net.plan, batch);
  const auto& sp = net.stages[stage];
  const DType dtype = sp.params.empty() ? DType::kF32 : sp.params.front().dtype();
  std::vector<nn::BatchNormState> bn = sp.bn;
  auto fn = rev::stage_fn(net.plan.stages[stage], bn, nn::BnMode::kTrainNoStatUpdate);
  Rng rng(0x5eed + stage);
  Tensor x = rng.normal_tensor(shapes[stage], 0.0, 1.0, dtype);
  auto rec = ag::record(fn, x, sp.params, stage > 0);
  return rec.graph.saved_bytes();
}

// ---------------------------------------------------------------------------

namespace {

std::string storage_text(const Storage& s) {
  if (s.full_graphs == 0 && s.activations == 0) return "0";
  std::string out;
  if (s.full_graphs != 0) out = short_num(s.full_graphs) + " FG";
  if (s.activations != 0) out += (out.empty() ? "" : " + ") + short_num(s.activations) + " act";
  return out;
}

}  // namespace

std::string table1_text(int J, int j, int k) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "J=%d  j=%d  k=%d  (forward = 1, backward = 2, reconstruction = 1)\n", J, j, k);
  os << line;
  std::snprintf(line, sizeof line, "%-22s %12s %8s %6s %7s %10s\n", "method", "activations", "params", "comm",
                "flops", "mean-time");
  os << line;
  for (Method m : kMethods) {
    const auto c = table1_row(m, J, j, k);
    std::snprintf(line, sizeof line, "%-22s %12s %8s %6s %7s %10s\n", to_string(m).c_str(),
                  storage_text(c.activation_storage).c_str(), short_num(c.param_copies).c_str(),
                  short_num(c.comm_volume).c_str(), short_num(c.flops).c_str(), short_num(c.mean_time).c_str());
    os << line;
  }
  return os.str();
}

std::string table1_csv(int J, int j, int k) {
  std::ostringstream os;
  os << "method,J,j,k,activation_full_graphs,activation_inputs,param_copies,comm_volume,flops,mean_time\n";
  for (Method m : kMethods) {
    const auto c = table1_row(m, J, j, k);
    os << to_string(m) << ',' << J << ',' << j << ',' << k << ',' << fmt(c.activation_storage.full_graphs) << ','
       << fmt(c.activation_storage.activations) << ',' << fmt(c.param_copies) << ',' << fmt(c.comm_volume) << ','
       << fmt(c.flops) << ',' << fmt(c.mean_time) << '\n';
  }
  return os.str();
}

std::vector<MethodCost> parse_table1_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty cost table");
  std::vector<MethodCost> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 10) throw IoError("cost table row has " + std::to_string(f.size()) + " fields, expected 10");
    MethodCost c;
    c.method = method_from_string(f[0]);
    c.stages = std::stoi(f[1]);
    c.stage = std::stoi(f[2]);
    c.accumulation = std::stoi(f[3]);
    c.activation_storage = {std::stod(f[4]), std::stod(f[5])};
    c.param_copies = std::stod(f[6]);
    c.comm_volume = std::stod(f[7]);
    c.flops = std::stod(f[8]);
    c.mean_time = std::stod(f[9]);
    rows.push_back(c);
  }
  return rows;
}

std::string memory_text(std::span<const MemoryReport> reports) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-6s %12s %12s %12s %12s %9s\n", "input", "params", "model GB", "inputs GB",
                "params GB", "total GB", "saving %");
  os << line;
  constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-6s %-6s %12.2f %12.2f %12.2f %12.2f %9.1f\n",
                  r.config.use_input_buffer ? "yes" : "no", r.config.use_param_buffer ? "yes" : "no",
                  static_cast<double>(r.model_bytes) / kGiB, static_cast<double>(r.input_buffer_bytes) / kGiB,
                  static_cast<double>(r.param_buffer_bytes) / kGiB, static_cast<double>(r.total_bytes) / kGiB,
                  r.savings_percent);
    os << line;
  }
  return os.str();
}

}  // namespace petra::cost
