// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Stage workers, the messages they exchange, and the engines that drive
// them: lockstep (one micro-batch at a time), rounds (deterministic
// decoupled schedule) and threads (one OS thread per stage).

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "petra/data.hpp"
#include "petra/optim.hpp"
#include "petra/revnet.hpp"

namespace petra::runtime {

// ---------------------------------------------------------------------------
// Messages.

enum class MessageKind : std::uint8_t { kForward = 0, kBackward = 1, kEndOfStream = 2 };

std::string to_string(MessageKind kind);

/// Forward carries {x}; Backward carries {x~, delta}. Labels ride along
/// from head to tail and back.
struct Message {
  MessageKind kind = MessageKind::kForward;
  std::uint64_t micro_batch_id = 0;
  std::vector<Tensor> tensors;
  std::vector<std::int32_t> labels;
  std::int32_t epoch = 0;
  std::int64_t sender_version = 0;

  static Message forward(std::uint64_t id, Tensor x, std::vector<std::int32_t> labels, int epoch);
  static Message backward(std::uint64_t id, Tensor x, Tensor delta, int epoch);
  static Message end_of_stream(std::uint64_t id);
};

/// kind u8, micro_batch_id u64, tensor count u32, then per tensor dtype u8,
/// rank u32, dims u64, payload; then epoch i32, sender_version i64, label
/// count u32, labels i32. Little-endian throughout.
std::vector<std::byte> encode(const Message& msg);
Message decode(std::span<const std::byte> bytes);

// ---------------------------------------------------------------------------
// Configuration and instrumentation.

/// Called with the raw (unscaled) parameter gradients of a stage for one
/// micro-batch. The threads engine calls it from worker threads.
using GradientHook =
    std::function<void(std::size_t stage, std::uint64_t micro_batch_id, std::span<const Tensor> grads)>;

/// Threads engine work selection. Both admit at most 2(J-j)+1 micro-batches
/// in flight at stage j (0-based j: 2(J-1-j)+1).
enum class ThreadSchedule {
  /// A stage retires backwards only once its window is full (or the stream
  /// has ended), so each stage fills its pipeline and then alternates one
  /// forward with one backward, independent of how the OS interleaves
  /// the worker threads.
  kFillThenAlternate,
  /// Any queued backward first, else a forward while the window allows.
  kBackwardFirst,
};

struct TrainConfig {
  int accumulation = 1;  // k
  optim::SgdConfig sgd;
  optim::LrSchedule schedule;
  std::size_t queue_capacity = 4;
  ThreadSchedule thread_schedule = ThreadSchedule::kFillThenAlternate;
  bool log_events = false;
  GradientHook on_gradient;
};

struct Event {
  std::int64_t step = 0;
  int epoch = 0;
  int stage = 0;  // 1-based
  std::string event;
  std::uint64_t micro_batch_id = 0;
  std::int64_t param_version = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct StageCounters {
  std::int64_t forwards = 0;
  std::int64_t backwards = 0;
  std::int64_t updates = 0;
  std::size_t buffer_high_water = 0;
  /// Backward steps this stage ran between a micro-batch's forward and its
  /// backward.
  std::map<std::int64_t, std::int64_t> delay;
  /// Parameter version at backward minus version at forward.
  std::map<std::int64_t, std::int64_t> staleness;
  std::int64_t messages_out_forward = 0;
  std::int64_t messages_out_backward = 0;
  std::int64_t tensors_out_forward = 0;
  std::int64_t tensors_out_backward = 0;
  std::int64_t bytes_out = 0;
};

// ---------------------------------------------------------------------------
// Stage workers.

/// Contiguous range [begin, end) of plan stages run by one worker.
struct Slice {
  std::size_t begin = 0;
  std::size_t end = 0;
};
using Partition = std::vector<Slice>;

/// One worker per plan stage.
Partition default_partition(const rev::NetworkPlan& plan);
/// Groups of `sizes[i]` consecutive plan stages.
Partition partition_by_sizes(const rev::NetworkPlan& plan, std::span<const std::size_t> sizes);

enum class Role { kHead, kReversible, kNonReversible, kTail, kSingle };

std::string to_string(Role role);

struct TailResult {
  double loss = 0.0;
  std::int64_t correct = 0;
  std::int64_t samples = 0;
};

class StageWorker {
 public:
  /// `exact_inputs` makes every stage keep its input and recompute, so the
  /// backward pass sees exactly the forward activations.
  StageWorker(rev::Network& net, Slice slice, std::size_t index, std::size_t count,
              const TrainConfig& config, bool exact_inputs = false);

  StageWorker(const StageWorker&) = delete;
  StageWorker& operator=(const StageWorker&) = delete;
  StageWorker(StageWorker&&) = default;

  Role role() const { return role_; }
  std::size_t index() const { return index_; }
  int stage_id() const { return static_cast<int>(index_) + 1; }
  bool reversible() const { return role_ == Role::kReversible; }
  bool is_head() const { return role_ == Role::kHead || role_ == Role::kSingle; }
  bool is_tail() const { return role_ == Role::kTail || role_ == Role::kSingle; }

  Message forward(Message msg);
  /// Returns the message for the previous stage; nothing at the head.
  std::optional<Message> backward(Message msg);
  /// Loss, gradient and update in one step. Returns the backward message
  /// for the previous stage, nothing when this worker is also the head.
  std::optional<Message> tail_step(Message msg, TailResult* result = nullptr);

  const StageCounters& counters() const { return counters_; }
  std::vector<Event>& events() { return events_; }
  std::int64_t param_version() const { return version_; }
  std::int64_t step() const { return t_; }
  std::size_t buffer_depth() const { return buffer_.size(); }
  std::int64_t in_flight() const { return static_cast<std::int64_t>(pending_.size()); }
  /// The stage's parameter tensors, in plan order.
  std::vector<Tensor> params() const;
  std::vector<Tensor> accumulator() const { return delta_; }
  /// Switches between reconstruction and exact-input backward. Only legal
  /// while nothing is in flight.
  void set_exact_inputs(bool exact);
  void reset_counters() { counters_ = {}; }

 private:
  struct Block {
    const rev::StageSpec* spec;
    rev::StageParams* params;
    std::size_t offset;
  };
  struct Pending {
    std::int64_t backwards;
    std::int64_t version;
  };

  ag::StageFn group_fn(nn::BnMode mode) const;
  void check_input(const Tensor& x, const Shape& expect, const char* what) const;
  void accumulate(std::uint64_t id, int epoch, std::vector<Tensor> grads);
  void record_backward(std::uint64_t id);
  void note_out(const Message& msg);
  void log(const char* event, std::uint64_t id, int epoch, double loss, double lr);

  std::vector<Block> blocks_;
  std::size_t index_;
  Role role_;
  bool exact_;
  const TrainConfig* config_;
  Shape input_shape_;   // per sample
  Shape output_shape_;  // per sample

  std::vector<Tensor> delta_;
  optim::SgdState opt_;
  std::int64_t t_ = 1;
  std::int64_t version_ = 0;
  std::deque<std::pair<std::uint64_t, Tensor>> buffer_;
  std::unordered_map<std::uint64_t, Pending> pending_;
  std::optional<std::uint64_t> last_forward_id_;
  std::optional<std::uint64_t> last_backward_id_;
  StageCounters counters_;
  std::vector<Event> events_;
};

// ---------------------------------------------------------------------------
// Engines.

struct MicroBatch {
  Tensor x;
  std::vector<std::int32_t> labels;
  int epoch = 0;
};
using BatchSource = std::function<std::optional<MicroBatch>()>;

/// Batches of `epochs` consecutive epochs starting at `first_epoch`.
BatchSource epoch_source(data::BatchIterator& it, int first_epoch, int epochs = 1);
/// The first `count` batches of epoch `epoch`.
BatchSource take_source(data::BatchIterator& it, std::int64_t count, int epoch = 0);

struct TrainLog {
  std::string engine;
  std::vector<Event> events;
  std::vector<StageCounters> stages;
  std::vector<Role> roles;
  std::int64_t micro_batches = 0;
  /// Per micro-batch in tail order.
  std::vector<double> losses;
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  std::int64_t samples = 0;
  /// Rounds engine only. Per round and stage: bit 0 forward, bit 1
  /// backward, bit 2 tail step.
  std::vector<std::vector<std::uint8_t>> round_activity;
  /// Rounds engine only: micro-batches fully retired in each round.
  std::vector<int> completions;

  double mean_loss() const { return samples ? loss_sum / static_cast<double>(losses.size()) : 0.0; }
  double accuracy() const { return samples ? static_cast<double>(correct) / static_cast<double>(samples) : 0.0; }
};

enum class Engine { kLockstep, kRounds, kThreads };

std::string to_string(Engine engine);
Engine engine_from_string(const std::string& name);

/// Owns the stage workers for a network; stage state (step counters,
/// accumulators, optimizer slots) persists across runs. Each run drains the
/// pipeline before returning.
class Pipeline {
 public:
  Pipeline(rev::Network& net, TrainConfig config, Partition partition = {});

  TrainLog run(Engine engine, const BatchSource& source);
  TrainLog run_lockstep(const BatchSource& source);
  TrainLog run_rounds(const BatchSource& source);
  TrainLog run_threads(const BatchSource& source);

  std::size_t size() const { return workers_.size(); }
  StageWorker& worker(std::size_t j) { return workers_.at(j); }
  const TrainConfig& config() const { return *config_; }

 private:
  TrainLog collect(const std::string& engine);

  rev::Network* net_;
  std::unique_ptr<TrainConfig> config_;
  Partition partition_;
  std::vector<StageWorker> workers_;
  std::uint64_t next_id_ = 0;
};

/// Monolithic backpropagation with the same accumulation and optimizer
/// arithmetic as the workers.
class ReferenceTrainer {
 public:
  ReferenceTrainer(rev::Network& net, TrainConfig config);

  TailResult step(const MicroBatch& batch);
  std::int64_t updates() const { return updates_; }

 private:
  rev::Network* net_;
  TrainConfig config_;
  std::vector<std::vector<Tensor>> delta_;
  std::vector<optim::SgdState> opt_;
  std::int64_t t_ = 1;
  std::int64_t updates_ = 0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::int64_t samples = 0;
};

/// Inference with running batch-norm statistics.
EvalResult evaluate(rev::Network& net, const data::Dataset& ds, std::int64_t batch_size,
                    DType dtype);

// ---------------------------------------------------------------------------
// Log output.

void write_events_csv(const TrainLog& log, const std::filesystem::path& path);
/// Final metrics, staleness and delay histograms, buffer high-water marks
/// and message counts.
std::string summary_json(const TrainLog& log);

}  // namespace petra::runtime
