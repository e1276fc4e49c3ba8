// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include "petra/autograd.hpp"

#include <array>
#include <mutex>
#include <shared_mutex>

namespace petra::ag {

namespace {

std::shared_mutex& registry_mutex() {
  static std::shared_mutex m;
  return m;
}

Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw Error("autograd: operand is not bound to a tape");
    if (tape == nullptr) tape = v.tape();
    if (v.tape() != tape) throw Error("autograd: operands live on different tapes");
  }
  return *tape;
}

Conv2dParams conv_params(const Node& n) {
  return {static_cast<int>(n.ctx.ints.at(0)), static_cast<int>(n.ctx.ints.at(1))};
}

Pool2dParams pool_params(const Node& n) {
  return {static_cast<int>(n.ctx.ints.at(0)), static_cast<int>(n.ctx.ints.at(1)),
          static_cast<int>(n.ctx.ints.at(2))};
}

void register_core_ops(OpRegistry& r) {
  r.add("identity", [](const VjpArgs& a) { return std::vector<Tensor>{a.out_grads[0]}; });
  r.add("add", [](const VjpArgs& a) {
    return std::vector<Tensor>{a.out_grads[0], a.out_grads[0]};
  });
  r.add("sub", [](const VjpArgs& a) {
    return std::vector<Tensor>{a.out_grads[0],
                               a.needs[1] ? scale(a.out_grads[0], -1.0) : Tensor()};
  });
  r.add("scale", [](const VjpArgs& a) {
    return std::vector<Tensor>{scale(a.out_grads[0], a.node.ctx.reals.at(0))};
  });
  r.add("matmul", [](const VjpArgs& a) {
    const Tensor& g = a.out_grads[0];
    const Tensor& lhs = a.node.ctx.saved.at(0);
    const Tensor& rhs = a.node.ctx.saved.at(1);
    return std::vector<Tensor>{a.needs[0] ? matmul(g, transpose(rhs)) : Tensor(),
                               a.needs[1] ? matmul(transpose(lhs), g) : Tensor()};
  });
  r.add("linear", [](const VjpArgs& a) {
    const Tensor& g = a.out_grads[0];
    const Tensor& x = a.node.ctx.saved.at(0);
    const Tensor& w = a.node.ctx.saved.at(1);
    std::vector<Tensor> out{a.needs[0] ? matmul(g, w) : Tensor(),
                            a.needs[1] ? matmul(transpose(g), x) : Tensor()};
    if (a.node.inputs.size() == 3) {
      out.push_back(a.needs[2] ? sum_to_channels(g) : Tensor());
    }
    return out;
  });
  r.add("conv2d", [](const VjpArgs& a) {
    const Tensor& g = a.out_grads[0];
    const Tensor& x = a.node.ctx.saved.at(0);
    const Tensor& k = a.node.ctx.saved.at(1);
    const Conv2dParams p = conv_params(a.node);
    return std::vector<Tensor>{
        a.needs[0] ? conv2d_input_grad(g, k, x.shape(), p) : Tensor(),
        a.needs[1] ? conv2d_kernel_grad(g, x, k.shape(), p) : Tensor()};
  });
  r.add("add_bias", [](const VjpArgs& a) {
    return std::vector<Tensor>{a.out_grads[0],
                               a.needs[1] ? sum_to_channels(a.out_grads[0]) : Tensor()};
  });
  r.add("relu", [](const VjpArgs& a) {
    return std::vector<Tensor>{select_mask(a.node.ctx.saved.at(0), a.out_grads[0])};
  });
  r.add("maxpool2d", [](const VjpArgs& a) {
    const auto& ints = a.node.ctx.ints;
    std::span<const std::int64_t> argmax(ints.data() + 3, ints.size() - 3);
    return std::vector<Tensor>{maxpool2d_grad(a.out_grads[0], a.input_shapes[0], argmax)};
  });
  r.add("avgpool2d", [](const VjpArgs& a) {
    return std::vector<Tensor>{
        avgpool2d_grad(a.out_grads[0], a.input_shapes[0], pool_params(a.node))};
  });
  r.add("global_avgpool", [](const VjpArgs& a) {
    return std::vector<Tensor>{global_avgpool_grad(a.out_grads[0], a.input_shapes[0])};
  });
  r.add("split_channels", [](const VjpArgs& a) {
    return std::vector<Tensor>{concat_channels(a.out_grads[0], a.out_grads[1])};
  });
  r.add("concat_channels", [](const VjpArgs& a) {
    const std::int64_t ca = a.node.ctx.ints.at(0);
    const Tensor& g = a.out_grads[0];
    return std::vector<Tensor>{
        a.needs[0] ? slice_channels(g, 0, ca) : Tensor(),
        a.needs[1] ? slice_channels(g, ca, g.dim(1)) : Tensor()};
  });
}

}  // namespace

const Tensor& Var::value() const {
  if (!valid()) throw Error("autograd: unbound Var");
  return tape_->value(id_);
}

std::size_t SavedContext::nbytes() const {
  std::size_t n = ints.size() * sizeof(std::int64_t) + reals.size() * sizeof(double);
  for (const auto& t : saved) n += t.nbytes();
  return n;
}

// ---------------------------------------------------------------------------

OpRegistry::OpRegistry() { register_core_ops(*this); }

OpRegistry& OpRegistry::global() {
  static OpRegistry registry;
  return registry;
}

void OpRegistry::add(std::string name, VjpFn vjp) {
  std::unique_lock lock(registry_mutex());
  ops_[std::move(name)] = std::move(vjp);
}

const VjpFn& OpRegistry::find(std::string_view name) const {
  std::shared_lock lock(registry_mutex());
  auto it = ops_.find(name);
  if (it == ops_.end()) {
    throw UnregisteredOpError("no VJP rule registered for primitive '" +
                              std::string(name) + "'");
  }
  return it->second;
}

bool OpRegistry::contains(std::string_view name) const {
  std::shared_lock lock(registry_mutex());
  return ops_.find(name) != ops_.end();
}

std::vector<std::string> OpRegistry::names() const {
  std::shared_lock lock(registry_mutex());
  std::vector<std::string> out;
  for (const auto& [name, fn] : ops_) out.push_back(name);
  return out;
}

// ---------------------------------------------------------------------------

Var Tape::leaf(Tensor value, bool requires_grad) {
  values_.push_back(std::move(value));
  requires_grad_.push_back(requires_grad && recording());
  return Var(this, static_cast<int>(values_.size() - 1));
}

std::vector<Var> Tape::record(std::string_view op, std::span<const Var> inputs,
                              std::vector<Tensor> outputs, SavedContext ctx) {
  if (!OpRegistry::global().contains(op)) {
    throw UnregisteredOpError("cannot record primitive '" + std::string(op) +
                              "': no VJP rule registered");
  }
  bool any_grad = false;
  Node node;
  node.op = std::string(op);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw Error("autograd: input recorded on another tape");
    node.inputs.push_back(in.id());
    any_grad = any_grad || requires_grad(in.id());
  }
  std::vector<Var> result;
  for (auto& out : outputs) {
    values_.push_back(std::move(out));
    requires_grad_.push_back(any_grad);
    node.outputs.push_back(static_cast<int>(values_.size() - 1));
    result.push_back(Var(this, node.outputs.back()));
  }
  if (recording() && any_grad) {
    node.ctx = std::move(ctx);
    nodes_.push_back(std::move(node));
  }
  return result;
}

Var Tape::record1(std::string_view op, std::span<const Var> inputs, Tensor output,
                  SavedContext ctx) {
  std::vector<Tensor> outs;
  outs.push_back(std::move(output));
  return record(op, inputs, std::move(outs), std::move(ctx)).front();
}

std::vector<Tensor> Tape::backward(const Var& output, const Tensor& seed,
                                   std::span<const Var> wrt) const {
  if (output.tape() != this) throw Error("autograd: output is on another tape");
  if (seed.shape() != value(output.id()).shape()) {
    throw ShapeError("vjp: gradient " + shape_str(seed.shape()) +
                     " does not match output " + shape_str(value(output.id()).shape()));
  }
  std::vector<std::optional<Tensor>> grads(values_.size());
  grads[output.id()] = seed;

  std::vector<Tensor> out_grads;
  std::vector<Shape> in_shapes;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& node = *it;
    bool any_out = false;
    for (int o : node.outputs) any_out = any_out || grads[o].has_value();
    if (!any_out) continue;

    out_grads.clear();
    for (int o : node.outputs) {
      out_grads.push_back(grads[o] ? *grads[o] : Tensor::zeros(values_[o].shape(),
                                                               values_[o].dtype()));
    }
    in_shapes.clear();
    // std::vector<bool> is not contiguous, so the span needs its own storage.
    std::unique_ptr<bool[]> needs(new bool[node.inputs.size()]);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      in_shapes.push_back(values_[node.inputs[i]].shape());
      needs[i] = requires_grad_[node.inputs[i]];
    }

    const VjpArgs args{node, out_grads, in_shapes,
                       std::span<const bool>(needs.get(), node.inputs.size()),
                       values_[node.outputs.front()].dtype()};
    std::vector<Tensor> in_grads = OpRegistry::global().find(node.op)(args);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!needs[i]) continue;
      const int id = node.inputs[i];
      Tensor& g = in_grads.at(i);
      if (g.shape() != values_[id].shape()) {
        throw ShapeError("vjp of '" + node.op + "' produced " + shape_str(g.shape()) +
                         " for input of shape " + shape_str(values_[id].shape()));
      }
      grads[id] = grads[id] ? petra::add(*grads[id], g) : std::move(g);
    }
    // Release intermediate gradients that no longer have consumers.
    for (int o : node.outputs) {
      if (o != output.id()) grads[o].reset();
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Var& v : wrt) {
    if (v.tape() != this) throw Error("autograd: wrt variable is on another tape");
    result.push_back(grads[v.id()] ? *grads[v.id()]
                                   : Tensor::zeros(values_[v.id()].shape(),
                                                   values_[v.id()].dtype()));
  }
  return result;
}

std::size_t Tape::saved_bytes() const {
  std::size_t n = 0;
  for (const auto& node : nodes_) n += node.ctx.nbytes();
  return n;
}

// ---------------------------------------------------------------------------

Var identity(Var x) {
  Tape& t = tape_of({x});
  return t.record1("identity", std::array{x}, x.value());
}

Var add(Var a, Var b) {
  Tape& t = tape_of({a, b});
  return t.record1("add", std::array{a, b}, petra::add(a.value(), b.value()));
}

Var sub(Var a, Var b) {
  Tape& t = tape_of({a, b});
  return t.record1("sub", std::array{a, b}, petra::sub(a.value(), b.value()));
}

Var scale(Var a, double s) {
  Tape& t = tape_of({a});
  SavedContext ctx;
  ctx.reals = {s};
  return t.record1("scale", std::array{a}, petra::scale(a.value(), s), std::move(ctx));
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of({a, b});
  SavedContext ctx;
  if (t.recording()) ctx.saved = {a.value(), b.value()};
  return t.record1("matmul", std::array{a, b}, petra::matmul(a.value(), b.value()),
                   std::move(ctx));
}

Var linear(Var x, Var w, std::optional<Var> bias) {
  Tape& t = bias ? tape_of({x, w, *bias}) : tape_of({x, w});
  SavedContext ctx;
  if (t.recording()) ctx.saved = {x.value(), w.value()};
  Tensor y = petra::linear(x.value(), w.value(), bias ? bias->value() : Tensor());
  if (bias) {
    return t.record1("linear", std::array{x, w, *bias}, std::move(y), std::move(ctx));
  }
  return t.record1("linear", std::array{x, w}, std::move(y), std::move(ctx));
}

Var conv2d(Var x, Var kernel, Conv2dParams p) {
  Tape& t = tape_of({x, kernel});
  SavedContext ctx;
  ctx.ints = {p.stride, p.padding};
  if (t.recording()) ctx.saved = {x.value(), kernel.value()};
  return t.record1("conv2d", std::array{x, kernel},
                   petra::conv2d(x.value(), kernel.value(), p), std::move(ctx));
}

Var add_bias(Var x, Var bias) {
  Tape& t = tape_of({x, bias});
  return t.record1("add_bias", std::array{x, bias},
                   petra::add_bias(x.value(), bias.value()));
}

Var relu(Var x) {
  Tape& t = tape_of({x});
  SavedContext ctx;
  if (t.recording()) ctx.saved = {relu_mask(x.value())};
  return t.record1("relu", std::array{x}, petra::relu(x.value()), std::move(ctx));
}

Var maxpool2d(Var x, Pool2dParams p) {
  Tape& t = tape_of({x});
  SavedContext ctx;
  std::vector<std::int64_t> argmax;
  Tensor y = petra::maxpool2d(x.value(), p, t.recording() ? &argmax : nullptr);
  ctx.ints = {p.kernel, p.stride, p.padding};
  ctx.ints.insert(ctx.ints.end(), argmax.begin(), argmax.end());
  return t.record1("maxpool2d", std::array{x}, std::move(y), std::move(ctx));
}

Var avgpool2d(Var x, Pool2dParams p) {
  Tape& t = tape_of({x});
  SavedContext ctx;
  ctx.ints = {p.kernel, p.stride, p.padding};
  return t.record1("avgpool2d", std::array{x}, petra::avgpool2d(x.value(), p),
                   std::move(ctx));
}

Var global_avgpool(Var x) {
  Tape& t = tape_of({x});
  return t.record1("global_avgpool", std::array{x}, petra::global_avgpool(x.value()));
}

std::pair<Var, Var> split_channels(Var x) {
  Tape& t = tape_of({x});
  auto [a, b] = petra::split_channels(x.value());
  std::vector<Tensor> outs;
  outs.push_back(std::move(a));
  outs.push_back(std::move(b));
  auto vars = t.record("split_channels", std::array{x}, std::move(outs));
  return {vars[0], vars[1]};
}

Var concat_channels(Var a, Var b) {
  Tape& t = tape_of({a, b});
  SavedContext ctx;
  ctx.ints = {a.value().dim(1)};
  return t.record1("concat_channels", std::array{a, b},
                   petra::concat_channels(a.value(), b.value()), std::move(ctx));
}

// ---------------------------------------------------------------------------

Recorded record(const StageFn& f, const Tensor& x, std::span<const Tensor> params,
                bool input_requires_grad) {
  Graph g;
  g.tape = std::make_unique<Tape>(Tape::Mode::kRecord);
  g.input = g.tape->leaf(x, input_requires_grad);
  for (const auto& p : params) g.params.push_back(g.tape->leaf(p, true));
  g.output = f(g.input, g.params);
  if (g.output.tape() != g.tape.get()) {
    throw Error("record: stage function returned a value from another tape");
  }
  Tensor y = g.output.value();
  return {std::move(y), std::move(g)};
}

Tensor evaluate(const StageFn& f, const Tensor& x, std::span<const Tensor> params) {
  Tape tape(Tape::Mode::kEvaluate);
  Var in = tape.leaf(x, false);
  std::vector<Var> ps;
  for (const auto& p : params) ps.push_back(tape.leaf(p, false));
  return f(in, ps).value();
}

GradPair vjp(const Graph& graph, const Tensor& delta_out) {
  if (!graph.tape) throw Error("vjp: graph has been released");
  std::vector<Var> wrt;
  wrt.push_back(graph.input);
  wrt.insert(wrt.end(), graph.params.begin(), graph.params.end());
  std::vector<Tensor> grads = graph.tape->backward(graph.output, delta_out, wrt);
  GradPair out;
  out.input_grad = graph.tape->requires_grad(graph.input.id()) ? std::move(grads[0])
                                                               : Tensor();
  out.param_grads.assign(std::make_move_iterator(grads.begin() + 1),
                         std::make_move_iterator(grads.end()));
  return out;
}

ChainResult chain_backprop(std::span<const ChainStage> stages, const Tensor& x0,
                           const LossFn& loss) {
  if (stages.empty()) throw Error("chain_backprop: no stages");
  std::vector<Graph> graphs;
  graphs.reserve(stages.size());
  Tensor x = x0;
  for (std::size_t j = 0; j < stages.size(); ++j) {
    Recorded r = record(stages[j].fn, x, stages[j].params, /*input_requires_grad=*/j > 0);
    x = std::move(r.output);
    graphs.push_back(std::move(r.graph));
  }
  ChainResult result;
  auto [value, delta] = loss(x);
  result.loss = value;
  result.output = x;
  result.grads.resize(stages.size());
  for (std::size_t j = stages.size(); j-- > 0;) {
    result.grads[j] = vjp(graphs[j], delta);
    delta = result.grads[j].input_grad;
  }
  return result;
}

}  // namespace petra::ag
