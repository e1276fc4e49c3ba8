// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "petra/runtime.hpp"

namespace petra::runtime {

std::string to_string(Role role) {
  switch (role) {
    case Role::kHead: return "head";
    case Role::kReversible: return "reversible";
    case Role::kNonReversible: return "non-reversible";
    case Role::kTail: return "tail";
    case Role::kSingle: return "single";
  }
  return "?";
}

Partition default_partition(const rev::NetworkPlan& plan) {
  Partition p;
  for (std::size_t i = 0; i < plan.size(); ++i) p.push_back({i, i + 1});
  return p;
}

Partition partition_by_sizes(const rev::NetworkPlan& plan, std::span<const std::size_t> sizes) {
  Partition p;
  std::size_t at = 0;
  for (auto n : sizes) {
    if (n == 0) throw ConfigError("partition: empty stage group");
    p.push_back({at, at + n});
    at += n;
  }
  if (at != plan.size()) {
    throw ConfigError("partition covers " + std::to_string(at) + " of " + std::to_string(plan.size()) +
                      " stages");
  }
  return p;
}

namespace {

Shape per_sample(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

Shape with_batch(std::int64_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

}  // namespace

StageWorker::StageWorker(rev::Network& net, Slice slice, std::size_t index, std::size_t count,
                         const TrainConfig& config, bool exact_inputs)
    : index_(index), exact_(exact_inputs), config_(&config) {
  if (slice.begin >= slice.end || slice.end > net.stages.size()) {
    throw ConfigError("stage slice [" + std::to_string(slice.begin) + ", " + std::to_string(slice.end) +
                      ") out of range");
  }
  if (config.accumulation < 1) throw ConfigError("accumulation factor k must be at least 1");
  const bool head = index == 0, tail = index + 1 == count;
  bool all_rev = true;
  std::size_t offset = 0;
  std::vector<Tensor> flat;
  std::vector<nn::ParamMeta> meta;
  for (std::size_t b = slice.begin; b < slice.end; ++b) {
    auto& sp = net.stages[b];
    blocks_.push_back({&net.plan.stages[b], &sp, offset});
    offset += sp.params.size();
    flat.insert(flat.end(), sp.params.begin(), sp.params.end());
    meta.insert(meta.end(), sp.meta.begin(), sp.meta.end());
    all_rev = all_rev && net.plan.stages[b].reversible();
  }
  role_ = head && tail ? Role::kSingle
          : head       ? Role::kHead
          : tail       ? Role::kTail
          : all_rev    ? Role::kReversible
                       : Role::kNonReversible;

  Shape in = with_batch(1, net.plan.input);
  for (std::size_t b = 0; b < slice.begin; ++b) in = rev::stage_output_shape(net.plan.stages[b], in);
  input_shape_ = per_sample(in);
  for (std::size_t b = slice.begin; b < slice.end; ++b) in = rev::stage_output_shape(net.plan.stages[b], in);
  output_shape_ = per_sample(in);

  for (const auto& p : flat) delta_.push_back(Tensor::zeros(p.shape(), p.dtype()));
  opt_ = optim::SgdState::init(flat, meta, config.sgd);
}

void StageWorker::set_exact_inputs(bool exact) {
  if (!pending_.empty() || !buffer_.empty()) {
    throw ScheduleError("stage " + std::to_string(stage_id()) + ": cannot switch backward mode with " +
                        std::to_string(pending_.size()) + " micro-batches in flight");
  }
  exact_ = exact;
}

std::vector<Tensor> StageWorker::params() const {
  std::vector<Tensor> out;
  for (const auto& b : blocks_) out.insert(out.end(), b.params->params.begin(), b.params->params.end());
  return out;
}

ag::StageFn StageWorker::group_fn(nn::BnMode mode) const {
  std::vector<std::pair<ag::StageFn, std::pair<std::size_t, std::size_t>>> fns;
  for (const auto& b : blocks_) {
    fns.push_back({rev::stage_fn(*b.spec, b.params->bn, mode), {b.offset, b.params->params.size()}});
  }
  if (fns.size() == 1) return fns.front().first;
  return [fns = std::move(fns)](ag::Var x, std::span<const ag::Var> params) {
    for (const auto& [fn, range] : fns) x = fn(x, params.subspan(range.first, range.second));
    return x;
  };
}

void StageWorker::check_input(const Tensor& x, const Shape& expect, const char* what) const {
  if (x.rank() != expect.size() + 1 || per_sample(x.shape()) != expect) {
    throw ShapeError("stage " + std::to_string(stage_id()) + ": " + what + " " + shape_str(x.shape()) +
                     " does not match per-sample shape " + shape_str(expect));
  }
}

void StageWorker::log(const char* event, std::uint64_t id, int epoch, double loss, double lr) {
  if (!config_->log_events) return;
  const std::int64_t step = std::string_view(event) == "forward" ? counters_.forwards : t_;
  events_.push_back({step, epoch, stage_id(), event, id, version_, loss, lr});
}

void StageWorker::note_out(const Message& msg) {
  if (msg.kind == MessageKind::kForward) {
    ++counters_.messages_out_forward;
    counters_.tensors_out_forward += static_cast<std::int64_t>(msg.tensors.size());
  } else {
    ++counters_.messages_out_backward;
    counters_.tensors_out_backward += static_cast<std::int64_t>(msg.tensors.size());
  }
  for (const auto& t : msg.tensors) counters_.bytes_out += static_cast<std::int64_t>(t.nbytes());
}

Message StageWorker::forward(Message msg) {
  if (msg.kind != MessageKind::kForward || msg.tensors.size() != 1) {
    throw ScheduleError("stage " + std::to_string(stage_id()) + ": forward expects one tensor");
  }
  if (role_ == Role::kTail || role_ == Role::kSingle) {
    throw ScheduleError("stage " + std::to_string(stage_id()) + ": tail stages run tail_step");
  }
  if (last_forward_id_ && msg.micro_batch_id <= *last_forward_id_) {
    throw ScheduleError("stage " + std::to_string(stage_id()) + ": forward micro-batch " +
                        std::to_string(msg.micro_batch_id) + " out of order");
  }
  last_forward_id_ = msg.micro_batch_id;
  const Tensor& x = msg.tensors.front();
  check_input(x, input_shape_, "forward input");

  Tensor y = ag::evaluate(group_fn(nn::BnMode::kTrainNoStatUpdate), x, params());
  if (role_ != Role::kReversible || exact_) {
    buffer_.emplace_back(msg.micro_batch_id, x);
    counters_.buffer_high_water = std::max(counters_.buffer_high_water, buffer_.size());
  }
  pending_[msg.micro_batch_id] = {counters_.backwards, version_};
  ++counters_.forwards;
  log("forward", msg.micro_batch_id, msg.epoch, 0.0, 0.0);

  Message out = Message::forward(msg.micro_batch_id, std::move(y), std::move(msg.labels), msg.epoch);
  out.sender_version = version_;
  note_out(out);
  return out;
}

void StageWorker::record_backward(std::uint64_t id) {
  if (last_backward_id_ && id <= *last_backward_id_) {
    throw ScheduleError("stage " + std::to_string(stage_id()) + ": backward micro-batch " +
                        std::to_string(id) + " out of order");
  }
  last_backward_id_ = id;
  auto it = pending_.find(id);
  if (it != pending_.end()) {
    ++counters_.delay[counters_.backwards - it->second.backwards];
    ++counters_.staleness[version_ - it->second.version];
    pending_.erase(it);
  } else if (!is_tail()) {
    throw ScheduleError("stage " + std::to_string(stage_id()) + ": backward for unknown micro-batch " +
                        std::to_string(id));
  } else {
    ++counters_.delay[0];
    ++counters_.staleness[0];
  }
}

void StageWorker::accumulate(std::uint64_t id, int epoch, std::vector<Tensor> grads) {
  if (config_->on_gradient) config_->on_gradient(index_, id, grads);
  const double inv_k = 1.0 / config_->accumulation;
  for (std::size_t i = 0; i < delta_.size(); ++i) delta_[i] = axpy(delta_[i], inv_k, grads[i]);
  ++counters_.backwards;
  log("backward", id, epoch, 0.0, 0.0);
  if (t_ % config_->accumulation == 0) {
    const double lr = optim::lr_at(config_->schedule, t_);
    std::vector<Tensor> flat = params();
    optim::sgd_step(flat, delta_, opt_, lr);
    for (const auto& b : blocks_) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(b.offset), b.params->params.size(),
                  b.params->params.begin());
    }
    for (auto& d : delta_) d = Tensor::zeros(d.shape(), d.dtype());
    ++version_;
    ++counters_.updates;
    log("update", id, epoch, 0.0, lr);
  }
  ++t_;
}

std::optional<Message> StageWorker::backward(Message msg) {
  if (msg.kind != MessageKind::kBackward || msg.tensors.size() != 2) {
    throw ScheduleError("stage " + std::to_string(stage_id()) + ": backward expects two tensors");
  }
  if (is_tail()) throw ScheduleError("stage " + std::to_string(stage_id()) + ": tail has no backward input");
  const std::uint64_t id = msg.micro_batch_id;
  record_backward(id);
  const Tensor& y = msg.tensors[0];
  const Tensor& delta = msg.tensors[1];
  check_input(y, output_shape_, "backward activation");
  check_input(delta, output_shape_, "backward gradient");

  Tensor x;
  Tensor dx;
  std::vector<Tensor> grads(delta_.size());
  if (role_ == Role::kReversible && !exact_) {
    Tensor cur = y, d = delta;
    for (std::size_t b = blocks_.size(); b-- > 0;) {
      const auto& blk = blocks_[b];
      rev::ReversibleBlock rb{rev::f_tilde_fn(*blk.spec, blk.params->bn, nn::BnMode::kTrainWithStatUpdate),
                              blk.params->params};
      rev::ReversibleBackward r = rev::rev_backward_fused(rb, cur, d);
      cur = std::move(r.input);
      d = std::move(r.input_grad);
      std::move(r.param_grads.begin(), r.param_grads.end(),
                grads.begin() + static_cast<std::ptrdiff_t>(blk.offset));
    }
    x = std::move(cur);
    dx = std::move(d);
  } else {
    if (buffer_.empty()) {
      throw ScheduleError("stage " + std::to_string(stage_id()) + ": input buffer empty on backward of " +
                          std::to_string(id));
    }
    if (buffer_.front().first != id) {
      throw ScheduleError("stage " + std::to_string(stage_id()) + ": buffer holds micro-batch " +
                          std::to_string(buffer_.front().first) + ", backward is for " + std::to_string(id));
    }
    x = std::move(buffer_.front().second);
    buffer_.pop_front();
    ag::Recorded r = ag::record(group_fn(nn::BnMode::kTrainWithStatUpdate), x, params(), !is_head());
    ag::GradPair g = ag::vjp(r.graph, delta);
    grads = std::move(g.param_grads);
    dx = std::move(g.input_grad);
  }
  accumulate(id, msg.epoch, std::move(grads));
  if (is_head()) return std::nullopt;
  Message out = Message::backward(id, std::move(x), std::move(dx), msg.epoch);
  out.labels = std::move(msg.labels);
  out.sender_version = version_;
  note_out(out);
  return out;
}

std::optional<Message> StageWorker::tail_step(Message msg, TailResult* result) {
  if (!is_tail()) throw ScheduleError("stage " + std::to_string(stage_id()) + " is not the tail");
  if (msg.kind != MessageKind::kForward || msg.tensors.size() != 1) {
    throw ScheduleError("stage " + std::to_string(stage_id()) + ": tail expects one tensor");
  }
  if (msg.labels.empty()) throw Error("stage " + std::to_string(stage_id()) + ": micro-batch without labels");
  if (last_forward_id_ && msg.micro_batch_id <= *last_forward_id_) {
    throw ScheduleError("stage " + std::to_string(stage_id()) + ": forward micro-batch " +
                        std::to_string(msg.micro_batch_id) + " out of order");
  }
  last_forward_id_ = msg.micro_batch_id;
  Tensor x = std::move(msg.tensors.front());
  check_input(x, input_shape_, "tail input");
  if (static_cast<std::int64_t>(msg.labels.size()) != x.dim(0)) {
    throw ShapeError("stage " + std::to_string(stage_id()) + ": " + std::to_string(msg.labels.size()) +
                     " labels for a batch of " + std::to_string(x.dim(0)));
  }

  ++counters_.forwards;
  log("forward", msg.micro_batch_id, msg.epoch, 0.0, 0.0);
  ag::Recorded r = ag::record(group_fn(nn::BnMode::kTrainWithStatUpdate), x, params(), !is_head());
  nn::LossResult loss = nn::cross_entropy_loss(r.output, msg.labels);
  if (!std::isfinite(loss.loss)) {
    throw DivergenceError("stage " + std::to_string(stage_id()) + ": loss is not finite at micro-batch " +
                          std::to_string(msg.micro_batch_id));
  }
  ag::GradPair g = ag::vjp(r.graph, loss.grad);
  record_backward(msg.micro_batch_id);
  log("loss", msg.micro_batch_id, msg.epoch, loss.loss, 0.0);
  if (result != nullptr) *result = {loss.loss, loss.correct, x.dim(0)};
  accumulate(msg.micro_batch_id, msg.epoch, std::move(g.param_grads));
  if (is_head()) return std::nullopt;
  Message out = Message::backward(msg.micro_batch_id, std::move(x), std::move(g.input_grad), msg.epoch);
  out.labels = std::move(msg.labels);
  out.sender_version = version_;
  note_out(out);
  return out;
}

}  // namespace petra::runtime
