// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "petra/runtime.hpp"

namespace petra::runtime {

ReferenceTrainer::ReferenceTrainer(rev::Network& net, TrainConfig config)
    : net_(&net), config_(std::move(config)) {
  if (config_.accumulation < 1) throw ConfigError("accumulation factor k must be at least 1");
  for (auto& s : net.stages) {
    std::vector<Tensor> d;
    for (const auto& p : s.params) d.push_back(Tensor::zeros(p.shape(), p.dtype()));
    delta_.push_back(std::move(d));
    opt_.push_back(optim::SgdState::init(s.params, s.meta, config_.sgd));
  }
}

TailResult ReferenceTrainer::step(const MicroBatch& batch) {
  auto& net = *net_;
  std::vector<ag::ChainStage> chain;
  for (std::size_t j = 0; j < net.stages.size(); ++j) {
    chain.push_back({rev::stage_fn(net.plan.stages[j], net.stages[j].bn, nn::BnMode::kTrainWithStatUpdate),
                     net.stages[j].params});
  }
  std::int64_t correct = 0;
  ag::ChainResult res = ag::chain_backprop(chain, batch.x, [&](const Tensor& logits) {
    nn::LossResult l = nn::cross_entropy_loss(logits, batch.labels);
    correct = l.correct;
    return std::pair{l.loss, l.grad};
  });
  if (!std::isfinite(res.loss)) throw DivergenceError("reference trainer: loss is not finite");

  const double inv_k = 1.0 / config_.accumulation;
  const bool update = t_ % config_.accumulation == 0;
  const double lr = optim::lr_at(config_.schedule, t_);
  for (std::size_t j = 0; j < net.stages.size(); ++j) {
    auto& d = delta_[j];
    const auto& g = res.grads[j].param_grads;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = axpy(d[i], inv_k, g[i]);
    if (update) {
      optim::sgd_step(net.stages[j].params, d, opt_[j], lr);
      for (auto& x : d) x = Tensor::zeros(x.shape(), x.dtype());
    }
  }
  if (update) ++updates_;
  ++t_;
  return {res.loss, correct, batch.x.dim(0)};
}

EvalResult evaluate(rev::Network& net, const data::Dataset& ds, std::int64_t batch_size, DType dtype) {
  data::BatchIterator it(ds, batch_size, {}, 0, /*shuffle=*/false, /*drop_last=*/false, dtype);
  EvalResult out;
  double loss_sum = 0;
  std::int64_t correct = 0;
  for (std::int64_t b = 0; b < it.batches_per_epoch(); ++b) {
    data::Batch batch = it.batch(0, b);
    Tensor x = batch.images;
    for (std::size_t j = 0; j < net.stages.size(); ++j) {
      x = ag::evaluate(rev::stage_fn(net.plan.stages[j], net.stages[j].bn, nn::BnMode::kEval), x,
                       net.stages[j].params);
    }
    nn::LossResult l = nn::cross_entropy_loss(x, batch.labels);
    const auto n = static_cast<std::int64_t>(batch.labels.size());
    loss_sum += l.loss * static_cast<double>(n);
    correct += l.correct;
    out.samples += n;
  }
  if (out.samples > 0) {
    out.loss = loss_sum / static_cast<double>(out.samples);
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.samples);
  }
  return out;
}

}  // namespace petra::runtime
