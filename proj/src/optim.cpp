// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include "petra/optim.hpp"

#include <algorithm>

namespace petra::optim {

SgdState SgdState::init(std::span<const Tensor> params, std::span<const nn::ParamMeta> meta,
                        SgdConfig config) {
  if (meta.size() != params.size()) {
    throw Error("SgdState: " + std::to_string(params.size()) + " parameters but " +
                std::to_string(meta.size()) + " metadata entries");
  }
  SgdState s;
  s.config = config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.velocity.push_back(Tensor::zeros(params[i].shape(), params[i].dtype()));
    s.exempt.push_back(meta[i].decay_exempt());
  }
  return s;
}

void sgd_step(std::vector<Tensor>& params, std::span<const Tensor> grads, SgdState& state,
              double lr) {
  if (grads.size() != params.size() || state.velocity.size() != params.size()) {
    throw Error("sgd_step: " + std::to_string(params.size()) + " parameters, " +
                std::to_string(grads.size()) + " gradients, " +
                std::to_string(state.velocity.size()) + " momentum buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw ShapeError("sgd_step: gradient " + shape_str(grads[i].shape()) + " for parameter " +
                       shape_str(params[i].shape()));
    }
    if (!all_finite(grads[i])) {
      throw DivergenceError("sgd_step: non-finite gradient in parameter tensor " +
                            std::to_string(i) + " after " + std::to_string(state.updates) +
                            " updates");
    }
  }
  const SgdConfig& c = state.config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double wd = state.exempt[i] ? 0.0 : c.weight_decay;
    dispatch(params[i].dtype(), [&]<typename T>() {
      auto th = params[i].data<T>();
      auto gr = grads[i].data<T>();
      auto ve = state.velocity[i].data<T>();
      const T mu = static_cast<T>(c.momentum), lam = static_cast<T>(wd), eta = static_cast<T>(lr);
      std::vector<T> nt(th.size()), nv(th.size());
      for (std::size_t k = 0; k < th.size(); ++k) {
        const T g = wd == 0.0 ? gr[k] : gr[k] + lam * th[k];
        const T v = mu * ve[k] + g;
        nv[k] = v;
        nt[k] = th[k] - eta * (c.nesterov ? g + mu * v : v);
      }
      params[i] = Tensor(params[i].shape(), std::move(nt));
      state.velocity[i] = Tensor(params[i].shape(), std::move(nv));
    });
  }
  ++state.updates;
}

double scaled_base_lr(int k, int micro_batch) {
  if (k < 1) throw ConfigError("accumulation factor must be >= 1, got " + std::to_string(k));
  return 0.1 * static_cast<double>(micro_batch) * static_cast<double>(k) / 256.0;
}

double lr_at(const LrSchedule& s, std::int64_t step) {
  const double epoch = static_cast<double>(std::max<std::int64_t>(step, 0)) /
                       static_cast<double>(std::max<std::int64_t>(s.steps_per_epoch, 1));
  if (epoch < s.warmup_epochs) return s.base_lr * epoch / s.warmup_epochs;
  double lr = s.base_lr;
  for (double m : s.milestones) {
    if (epoch >= m) lr *= s.decay;
  }
  return lr;
}

Recipe preset(const std::string& name, double base_lr, std::int64_t steps_per_epoch, int epochs) {
  Recipe r;
  r.name = name;
  r.schedule.base_lr = base_lr;
  r.schedule.steps_per_epoch = steps_per_epoch;
  if (name == "cifar10") {
    r.epochs = 300;
    r.weight_decay = 5e-4;
    r.schedule.milestones = {150, 225};
  } else if (name == "imagenet") {
    r.epochs = 90;
    r.weight_decay = 1e-4;
    r.schedule.milestones = {30, 60, 80};
  } else if (name == "desk") {
    r.epochs = epochs > 0 ? epochs : 30;
    r.weight_decay = 5e-4;
    r.schedule.milestones = {0.5 * r.epochs, 0.75 * r.epochs};
  } else {
    throw ConfigError("unknown recipe '" + name + "'");
  }
  if (epochs > 0 && name != "desk") r.epochs = epochs;
  return r;
}

}  // namespace petra::optim
