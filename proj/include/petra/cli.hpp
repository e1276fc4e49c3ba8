// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train / eval / cost / verify.
//
// Exit codes: 0 ok, 1 internal error, 2 configuration error, 3 I/O error,
// 4 numerical divergence, 5 verification failure.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "petra/data.hpp"
#include "petra/revnet.hpp"
#include "petra/runtime.hpp"

namespace petra::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitDivergence = 4;
inline constexpr int kExitVerify = 5;

struct RunConfig {
  /// small | revnet18 | revnet34 | revnet50 | resnet18 | resnet34 | resnet50
  std::string model = "small";
  int stages = 4;  // small only
  int width = 16;  // small only
  int downsample_stage = 0;  // small only

  /// synthetic | cifar10
  std::string dataset = "synthetic";
  /// CIFAR-10 root; PETRA_DATA_DIR when empty.
  std::string data_dir;
  /// 0 keeps every sample (cifar10) or uses 2000 / 500 (synthetic).
  std::int64_t train_size = 0;
  std::int64_t test_size = 0;
  int classes = 10;     // synthetic only
  int image_size = 16;  // synthetic only

  /// lockstep | rounds | threads | reference-backprop
  std::string engine = "rounds";
  int epochs = 2;
  int batch = 64;
  int k = 1;
  std::uint64_t seed = 0;
  std::string dtype = "f32";

  /// desk | cifar10 | imagenet
  std::string optimizer = "desk";
  /// 0 selects 0.1 * batch * k / 256.
  double lr = 0.0;
  double warmup_epochs = 1.0;
  double momentum = 0.9;
  /// Negative selects the preset value.
  double weight_decay = -1.0;
  /// auto (on for cifar10) | on | off
  std::string augment = "auto";
  int queue_capacity = 4;
  int eval_batch = 256;
  bool events = false;
  std::string output = "runs/latest";
};

/// Throws ConfigError naming the first offending field.
void validate(const RunConfig& config);
std::string to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig config_from_json(const std::string& text);

double base_lr(const RunConfig& config);
DType dtype_of(const RunConfig& config);
rev::Network build_model(const RunConfig& config);
/// Train and test splits, normalised with the training statistics.
std::pair<data::Dataset, data::Dataset> load_data(const RunConfig& config);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  double lr = 0.0;
  std::int64_t updates = 0;
  double seconds = 0.0;
};

struct TrainOutcome {
  std::vector<EpochMetrics> epochs;
  double base_lr = 0.0;
  runtime::TrainLog last_log;
  rev::Network network;
};

/// Runs the configured training, printing one line per epoch to `log`.
/// Writes nothing to disk.
TrainOutcome train(const RunConfig& config, std::ostream& log);

/// train + config.json, metrics.csv, summary.json, checkpoint.bin (and
/// events.csv when requested) under config.output.
TrainOutcome train_and_save(const RunConfig& config, std::ostream& log);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace petra::cli
