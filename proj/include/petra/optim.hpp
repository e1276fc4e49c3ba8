// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// SGD with Nesterov momentum and selective weight decay, plus the warmup /
// step-decay schedule and the linear-scaling rule for accumulation.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "petra/nn.hpp"
#include "petra/tensor.hpp"

namespace petra::optim {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool nesterov = true;
};

struct SgdState {
  SgdConfig config;
  std::vector<Tensor> velocity;
  std::vector<bool> exempt;
  std::int64_t updates = 0;

  /// Zero velocity per parameter; exemptions taken from the metadata flags.
  static SgdState init(std::span<const Tensor> params, std::span<const nn::ParamMeta> meta,
                       SgdConfig config);
};

/// g = grad + wd * theta (wd = 0 for exempt tensors); v = mu * v + g;
/// theta -= lr * (g + mu * v), or lr * v without Nesterov.
/// Throws DivergenceError if any gradient is not finite.
void sgd_step(std::vector<Tensor>& params, std::span<const Tensor> grads, SgdState& state,
              double lr);

/// 0.1 * micro_batch * k / 256.
double scaled_base_lr(int k, int micro_batch = 64);

struct LrSchedule {
  double base_lr = 0.1;
  double warmup_epochs = 5;
  std::vector<double> milestones;  // epochs
  double decay = 0.1;
  std::int64_t steps_per_epoch = 1;
};

/// Linear from 0 to base_lr over the warmup, then base_lr * decay^(number
/// of milestones reached). `step` counts micro-batches.
double lr_at(const LrSchedule& schedule, std::int64_t step);

struct Recipe {
  std::string name;
  int epochs = 0;
  double weight_decay = 0.0;
  LrSchedule schedule;
};

/// cifar10: 300 epochs, decay at 150/225, wd 5e-4. imagenet: 90 epochs,
/// decay at 30/60/80, wd 1e-4. desk: `epochs`, decay at 50% and 75%,
/// wd 5e-4. `epochs` overrides the preset length when positive.
Recipe preset(const std::string& name, double base_lr, std::int64_t steps_per_epoch,
              int epochs = 0);

}  // namespace petra::optim
