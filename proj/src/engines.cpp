// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "petra/runtime.hpp"

namespace petra::runtime {

std::string to_string(Engine engine) {
  switch (engine) {
    case Engine::kLockstep: return "lockstep";
    case Engine::kRounds: return "rounds";
    case Engine::kThreads: return "threads";
  }
  return "?";
}

Engine engine_from_string(const std::string& name) {
  if (name == "lockstep") return Engine::kLockstep;
  if (name == "rounds") return Engine::kRounds;
  if (name == "threads") return Engine::kThreads;
  throw ConfigError("unknown engine '" + name + "' (lockstep, rounds, threads)");
}

BatchSource epoch_source(data::BatchIterator& it, int first_epoch, int epochs) {
  auto epoch = std::make_shared<int>(first_epoch);
  auto index = std::make_shared<std::int64_t>(0);
  return [&it, epoch, index, end = first_epoch + epochs]() -> std::optional<MicroBatch> {
    if (*index >= it.batches_per_epoch()) {
      ++*epoch;
      *index = 0;
    }
    if (*epoch >= end || it.batches_per_epoch() == 0) return std::nullopt;
    data::Batch b = it.batch(*epoch, (*index)++);
    return MicroBatch{std::move(b.images), std::move(b.labels), b.epoch};
  };
}

BatchSource take_source(data::BatchIterator& it, std::int64_t count, int epoch) {
  auto index = std::make_shared<std::int64_t>(0);
  return [&it, index, count, epoch]() -> std::optional<MicroBatch> {
    if (*index >= count || *index >= it.batches_per_epoch()) return std::nullopt;
    data::Batch b = it.batch(epoch, (*index)++);
    return MicroBatch{std::move(b.images), std::move(b.labels), b.epoch};
  };
}

Pipeline::Pipeline(rev::Network& net, TrainConfig config, Partition partition)
    : net_(&net),
      config_(std::make_unique<TrainConfig>(std::move(config))),
      partition_(partition.empty() ? default_partition(net.plan) : std::move(partition)) {
  std::size_t expect = 0;
  for (const auto& s : partition_) {
    if (s.begin != expect || s.end <= s.begin) throw ConfigError("partition must tile the plan in order");
    expect = s.end;
  }
  if (expect != net.plan.size()) throw ConfigError("partition does not cover every stage");
  for (std::size_t j = 0; j < partition_.size(); ++j) {
    workers_.emplace_back(net, partition_[j], j, partition_.size(), *config_);
  }
}

TrainLog Pipeline::run(Engine engine, const BatchSource& source) {
  switch (engine) {
    case Engine::kLockstep: return run_lockstep(source);
    case Engine::kRounds: return run_rounds(source);
    case Engine::kThreads: return run_threads(source);
  }
  throw ConfigError("unknown engine");
}

TrainLog Pipeline::collect(const std::string& engine) {
  TrainLog log;
  log.engine = engine;
  for (auto& w : workers_) {
    log.stages.push_back(w.counters());
    log.roles.push_back(w.role());
    auto& ev = w.events();
    log.events.insert(log.events.end(), std::make_move_iterator(ev.begin()), std::make_move_iterator(ev.end()));
    ev.clear();
    w.reset_counters();
  }
  return log;
}

namespace {

Message inject(std::uint64_t id, MicroBatch mb) {
  return Message::forward(id, std::move(mb.x), std::move(mb.labels), mb.epoch);
}

void add_result(TrainLog& log, const TailResult& r) {
  log.losses.push_back(r.loss);
  log.loss_sum += r.loss;
  log.correct += r.correct;
  log.samples += r.samples;
  ++log.micro_batches;
}

}  // namespace

// ---------------------------------------------------------------------------

TrainLog Pipeline::run_lockstep(const BatchSource& source) {
  for (auto& w : workers_) w.set_exact_inputs(true);
  std::vector<TailResult> results;
  const std::size_t J = workers_.size();
  while (auto mb = source()) {
    Message msg = inject(next_id_++, std::move(*mb));
    for (std::size_t j = 0; j + 1 < J; ++j) msg = workers_[j].forward(std::move(msg));
    TailResult r;
    std::optional<Message> back = workers_[J - 1].tail_step(std::move(msg), &r);
    results.push_back(r);
    for (std::size_t j = J - 1; j-- > 0;) back = workers_[j].backward(std::move(*back));
  }
  for (auto& w : workers_) w.set_exact_inputs(false);
  TrainLog log = collect("lockstep");
  for (const auto& r : results) add_result(log, r);
  return log;
}

// ---------------------------------------------------------------------------

TrainLog Pipeline::run_rounds(const BatchSource& source) {
  const std::size_t J = workers_.size();
  std::vector<std::deque<Message>> fwd(J), bwd(J);
  std::vector<TailResult> results;
  std::vector<std::vector<std::uint8_t>> activity;
  std::vector<int> completions;
  bool exhausted = false;

  for (;;) {
    std::vector<std::optional<Message>> out_fwd(J), out_bwd(J);
    std::vector<std::uint8_t> act(J, 0);
    int done = 0;
    bool work = false;

    for (std::size_t j = 0; j < J; ++j) {
      auto& w = workers_[j];
      std::optional<Message> in;
      if (j == 0) {
        if (!exhausted) {
          if (auto mb = source()) {
            in = inject(next_id_++, std::move(*mb));
          } else {
            exhausted = true;
          }
        }
      } else if (!fwd[j].empty()) {
        in = std::move(fwd[j].front());
        fwd[j].pop_front();
      }
      if (in) {
        work = true;
        if (w.is_tail()) {
          TailResult r;
          auto back = w.tail_step(std::move(*in), &r);
          results.push_back(r);
          act[j] |= 4;
          if (back) {
            out_bwd[j - 1] = std::move(back);
          } else {
            ++done;
          }
        } else {
          out_fwd[j + 1] = w.forward(std::move(*in));
          act[j] |= 1;
        }
      }
      if (!bwd[j].empty()) {
        work = true;
        Message m = std::move(bwd[j].front());
        bwd[j].pop_front();
        auto back = w.backward(std::move(m));
        act[j] |= 2;
        if (back) {
          out_bwd[j - 1] = std::move(back);
        } else {
          ++done;
        }
      }
    }

    bool queued = false;
    for (std::size_t j = 0; j < J; ++j) {
      if (out_fwd[j]) fwd[j].push_back(std::move(*out_fwd[j]));
      if (out_bwd[j]) bwd[j].push_back(std::move(*out_bwd[j]));
      queued = queued || !fwd[j].empty() || !bwd[j].empty();
    }
    if (!work) {
      if (queued) {
        std::ostringstream os;
        os << "rounds engine made no progress with messages queued:";
        for (std::size_t j = 0; j < J; ++j) {
          os << " stage " << j + 1 << " fwd=" << fwd[j].size() << " bwd=" << bwd[j].size();
        }
        throw ScheduleError(os.str());
      }
      break;
    }
    activity.push_back(std::move(act));
    completions.push_back(done);
  }
  for (auto& w : workers_) {
    if (w.in_flight() != 0) {
      throw ScheduleError("stage " + std::to_string(w.stage_id()) + " drained with " +
                          std::to_string(w.in_flight()) + " micro-batches in flight");
    }
  }

  TrainLog log = collect("rounds");
  for (const auto& r : results) add_result(log, r);
  log.round_activity = std::move(activity);
  log.completions = std::move(completions);
  return log;
}

// ---------------------------------------------------------------------------

namespace {

struct Mailbox {
  std::mutex mutex;
  std::condition_variable bell;
  std::uint64_t generation = 0;
  std::deque<Message> fwd;
  std::deque<Message> bwd;

  void ring() {
    {
      std::lock_guard lk(mutex);
      ++generation;
    }
    bell.notify_all();
  }
};

}  // namespace

TrainLog Pipeline::run_threads(const BatchSource& source) {
  const std::size_t J = workers_.size();
  const std::size_t cap = std::max<std::size_t>(1, config_->queue_capacity);
  std::vector<Mailbox> box(J);
  std::atomic<bool> abort{false};
  std::vector<std::exception_ptr> errors(J);
  std::vector<std::vector<TailResult>> results(J);
  std::uint64_t first_id = next_id_;
  std::atomic<std::uint64_t> injected{0};

  auto queue_size = [&](std::size_t j, bool forward) {
    std::lock_guard lk(box[j].mutex);
    return forward ? box[j].fwd.size() : box[j].bwd.size();
  };
  auto push = [&](std::size_t j, bool forward, Message m) {
    {
      std::lock_guard lk(box[j].mutex);
      (forward ? box[j].fwd : box[j].bwd).push_back(std::move(m));
      ++box[j].generation;
    }
    box[j].bell.notify_all();
  };
  auto pop = [&](std::size_t j, bool forward) -> std::optional<Message> {
    std::lock_guard lk(box[j].mutex);
    auto& q = forward ? box[j].fwd : box[j].bwd;
    if (q.empty()) return std::nullopt;
    Message m = std::move(q.front());
    q.pop_front();
    return m;
  };

  auto front_is_eos = [&](std::size_t j) {
    std::lock_guard lk(box[j].mutex);
    return !box[j].fwd.empty() && box[j].fwd.front().kind == MessageKind::kEndOfStream;
  };
  const bool greedy = config_->thread_schedule == ThreadSchedule::kBackwardFirst;

  auto run_stage = [&](std::size_t j) {
    StageWorker& w = workers_[j];
    const std::int64_t window = 2 * static_cast<std::int64_t>(J - 1 - j) + 1;
    bool eos = false;
    std::optional<Message> staged;  // head: next data micro-batch
    bool source_done = false;
    try {
      for (;;) {
        std::uint64_t gen;
        {
          std::lock_guard lk(box[j].mutex);
          gen = box[j].generation;
        }
        if (abort.load()) return;
        bool acted = false;

        // Backward first, once the window has filled unless backward-first.
        const bool may_retire = greedy || eos || (j == 0 && source_done) || w.in_flight() >= window;
        if (!w.is_tail() && may_retire && queue_size(j, false) > 0 && (j == 0 || queue_size(j - 1, false) < cap)) {
          auto m = pop(j, false);
          if (j + 1 < J) box[j + 1].ring();
          auto back = w.backward(std::move(*m));
          if (back) push(j - 1, false, std::move(*back));
          acted = true;
        }

        if (!acted) {
          const bool out_space = w.is_tail() ? (j == 0 || queue_size(j - 1, false) < cap)
                                             : queue_size(j + 1, true) < cap;
          const bool window_open = w.is_tail() || w.in_flight() < window;
          if (j == 0 && !eos) {
            if (!staged && !source_done) {
              if (auto mb = source()) {
                staged = inject(first_id + injected.fetch_add(1), std::move(*mb));
              } else {
                source_done = true;
              }
            }
            if (staged && out_space && window_open) {
              Message m = std::move(*staged);
              staged.reset();
              if (w.is_tail()) {
                TailResult r;
                w.tail_step(std::move(m), &r);
                results[j].push_back(r);
              } else {
                push(j + 1, true, w.forward(std::move(m)));
              }
              acted = true;
            } else if (source_done && (w.is_tail() || queue_size(j + 1, true) < cap)) {
              if (!w.is_tail()) push(j + 1, true, Message::end_of_stream(first_id + injected.load()));
              eos = true;
              acted = true;
            }
          } else if (j > 0 && !eos && out_space && queue_size(j, true) > 0 && (window_open || front_is_eos(j))) {
            auto m = pop(j, true);
            box[j - 1].ring();
            if (m->kind == MessageKind::kEndOfStream) {
              if (!w.is_tail()) push(j + 1, true, std::move(*m));
              eos = true;
            } else if (w.is_tail()) {
              TailResult r;
              auto back = w.tail_step(std::move(*m), &r);
              results[j].push_back(r);
              push(j - 1, false, std::move(*back));
            } else {
              push(j + 1, true, w.forward(std::move(*m)));
            }
            acted = true;
          }
        }

        if (eos && w.in_flight() == 0 && queue_size(j, false) == 0) return;
        if (acted) continue;
        std::unique_lock lk(box[j].mutex);
        box[j].bell.wait(lk, [&] { return box[j].generation != gen || abort.load(); });
      }
    } catch (...) {
      errors[j] = std::current_exception();
      abort.store(true);
      for (auto& b : box) b.ring();
    }
  };

  {
    std::vector<std::jthread> threads;
    for (std::size_t j = 0; j < J; ++j) threads.emplace_back(run_stage, j);
  }
  next_id_ = first_id + injected.load();

  for (std::size_t j = 0; j < J; ++j) {
    if (!errors[j]) continue;
    std::string what = "unknown error";
    try {
      std::rethrow_exception(errors[j]);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    std::ostringstream os;
    os << "threads engine: stage " << j + 1 << " failed: " << what << "; queues:";
    for (std::size_t i = 0; i < J; ++i) {
      os << " stage " << i + 1 << " fwd=" << box[i].fwd.size() << " bwd=" << box[i].bwd.size()
         << " in_flight=" << workers_[i].in_flight();
    }
    for (auto& w : workers_) w.reset_counters();
    try {
      std::rethrow_exception(errors[j]);
    } catch (const DivergenceError&) {
      throw DivergenceError(os.str());
    } catch (...) {
      throw ScheduleError(os.str());
    }
  }

  TrainLog log = collect("threads");
  for (const auto& r : results[J - 1]) add_result(log, r);
  return log;
}

}  // namespace petra::runtime
