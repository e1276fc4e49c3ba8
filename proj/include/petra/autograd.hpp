// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a single stage. A Tape records the
// primitives a stage function applies, keeping only what each primitive
// declares it needs for its vector-Jacobian product. Graphs are per stage;
// nothing here spans stages except the reference chain_backprop.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "petra/tensor.hpp"

namespace petra::ag {

class Tape;

/// Handle to a value on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Whatever a primitive keeps for its backward rule. `saved` holds
/// tensors, `ints`/`reals` hold attributes (strides, argmax routes, ...).
struct SavedContext {
  std::vector<Tensor> saved;
  std::vector<std::int64_t> ints;
  std::vector<double> reals;

  std::size_t nbytes() const;
};

struct Node {
  std::string op;
  std::vector<int> inputs;
  std::vector<int> outputs;
  SavedContext ctx;
};

struct VjpArgs {
  const Node& node;
  /// Gradients of every output (zeros where the output was unused).
  std::span<const Tensor> out_grads;
  std::span<const Shape> input_shapes;
  /// Which inputs need a gradient; entries for the others may be empty.
  std::span<const bool> needs;
  DType dtype;
};

using VjpFn = std::function<std::vector<Tensor>(const VjpArgs&)>;

/// Primitives usable inside a recorded stage. Recording an op that is not
/// registered here fails at record time.
class OpRegistry {
 public:
  static OpRegistry& global();

  void add(std::string name, VjpFn vjp);
  const VjpFn& find(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  OpRegistry();
  std::map<std::string, VjpFn, std::less<>> ops_;
};

class Tape {
 public:
  enum class Mode { kRecord, kEvaluate };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const { return mode_; }
  bool recording() const { return mode_ == Mode::kRecord; }

  Var leaf(Tensor value, bool requires_grad = true);

  /// Appends a node producing `outputs` from `inputs`. In evaluate mode the
  /// values are kept but the node and its context are not.
  std::vector<Var> record(std::string_view op, std::span<const Var> inputs,
                          std::vector<Tensor> outputs, SavedContext ctx = {});
  Var record1(std::string_view op, std::span<const Var> inputs, Tensor output,
              SavedContext ctx = {});

  const Tensor& value(int id) const { return values_.at(id); }
  bool requires_grad(int id) const { return requires_grad_.at(id); }

  /// Reverse sweep seeded with `seed` at `output`; returns the gradient for
  /// each of `wrt` (zeros when unreachable). Does not modify the tape.
  std::vector<Tensor> backward(const Var& output, const Tensor& seed,
                               std::span<const Var> wrt) const;

  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  /// Bytes retained for backward across all nodes.
  std::size_t saved_bytes() const;

 private:
  Mode mode_;
  std::vector<Tensor> values_;
  std::vector<bool> requires_grad_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Core primitives. All take and return Vars on the same tape.

Var identity(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
/// x [N, in], w [out, in], optional bias [out].
Var linear(Var x, Var w, std::optional<Var> bias = std::nullopt);
Var conv2d(Var x, Var kernel, Conv2dParams p);
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var maxpool2d(Var x, Pool2dParams p);
Var avgpool2d(Var x, Pool2dParams p);
Var global_avgpool(Var x);
std::pair<Var, Var> split_channels(Var x);
Var concat_channels(Var a, Var b);

// ---------------------------------------------------------------------------
// Stage-level recording.

using StageFn = std::function<Var(Var x, std::span<const Var> params)>;

struct Graph {
  std::unique_ptr<Tape> tape;
  Var input;
  std::vector<Var> params;
  Var output;

  std::size_t saved_bytes() const { return tape ? tape->saved_bytes() : 0; }
};

struct GradPair {
  Tensor input_grad;
  std::vector<Tensor> param_grads;
};

struct Recorded {
  Tensor output;
  Graph graph;
};

/// Runs f on a recording tape. If the input does not require a gradient
/// (first stage), input_grad comes back empty.
Recorded record(const StageFn& f, const Tensor& x, std::span<const Tensor> params,
                bool input_requires_grad = true);

/// Runs f without retaining anything for backward.
Tensor evaluate(const StageFn& f, const Tensor& x, std::span<const Tensor> params);

GradPair vjp(const Graph& graph, const Tensor& delta_out);

struct ChainStage {
  StageFn fn;
  std::vector<Tensor> params;
};

/// Scalar loss and its gradient with respect to the final activation.
using LossFn = std::function<std::pair<double, Tensor>(const Tensor& output)>;

struct ChainResult {
  double loss = 0.0;
  Tensor output;
  std::vector<GradPair> grads;
};

/// Reference backpropagation: forward through every stage keeping its
/// graph, then sweep the stages in reverse starting from the loss gradient.
ChainResult chain_backprop(std::span<const ChainStage> stages, const Tensor& x0,
                           const LossFn& loss);

}  // namespace petra::ag
