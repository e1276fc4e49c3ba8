// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include "petra/revnet.hpp"

#include <functional>
#include <map>

namespace petra::rev {

using nn::LayerSpec;

std::string to_string(StageKind kind) {
  switch (kind) {
    case StageKind::kHead: return "head";
    case StageKind::kReversible: return "reversible";
    case StageKind::kNonReversible: return "non-reversible";
    case StageKind::kTail: return "tail";
  }
  return "?";
}

StageKind stage_kind_from_string(const std::string& name) {
  for (auto k : {StageKind::kHead, StageKind::kReversible, StageKind::kNonReversible,
                 StageKind::kTail}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown stage kind '" + name + "'");
}

std::int64_t StageParams::count() const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

std::size_t StageParams::nbytes() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.nbytes();
  return n;
}

std::int64_t Network::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& s : stages) n += s.count();
  return n;
}

namespace {

template <typename Fn>
void for_each_layer(const StageSpec& spec, Fn&& fn) {
  for (const auto& l : spec.main) fn("main", l);
  for (const auto& l : spec.shortcut) fn("shortcut", l);
  for (const auto& l : spec.side) fn("side", l);
}

}  // namespace

std::vector<nn::ParamMeta> stage_param_meta(const StageSpec& spec) {
  std::vector<nn::ParamMeta> out;
  for_each_layer(spec, [&](const char* branch, const LayerSpec& l) {
    for (auto m : nn::layer_params(l)) {
      m.name = "stage" + std::to_string(spec.id) + "." + branch + "." + m.name;
      out.push_back(std::move(m));
    }
  });
  return out;
}

std::size_t stage_bn_count(const StageSpec& spec) {
  std::size_t n = 0;
  for_each_layer(spec, [&](const char*, const LayerSpec& l) { n += nn::layer_has_bn_state(l); });
  return n;
}

StageParams init_stage(const StageSpec& spec, Rng& rng, DType dtype) {
  StageParams s;
  s.meta = stage_param_meta(spec);
  for_each_layer(spec, [&](const char*, const LayerSpec& l) {
    for (auto& t : nn::init_params(l, rng, dtype)) s.params.push_back(std::move(t));
    if (nn::layer_has_bn_state(l)) s.bn.push_back(nn::BatchNormState::init(l.out_channels, dtype));
  });
  return s;
}

Network instantiate(NetworkPlan plan, std::uint64_t seed, DType dtype) {
  Network net;
  const Rng root(seed);
  for (const auto& spec : plan.stages) {
    Rng rng = root.fork(static_cast<std::uint64_t>(spec.id));
    net.stages.push_back(init_stage(spec, rng, dtype));
  }
  net.plan = std::move(plan);
  return net;
}

// ---------------------------------------------------------------------------
// Builders.

namespace {

struct Layout {
  std::vector<int> blocks;
  bool bottleneck = false;
};

Layout layout_for(const std::string& depth) {
  if (depth == "18") return {{2, 2, 2, 2}, false};
  if (depth == "34") return {{3, 4, 6, 3}, false};
  if (depth == "50") return {{3, 4, 6, 3}, true};
  throw ConfigError("unknown network depth '" + depth + "'");
}

std::vector<LayerSpec> basic_branch(std::int64_t in, std::int64_t out, int stride) {
  return {LayerSpec::conv("conv1", in, out, 3, stride, 1), LayerSpec::batch_norm("bn1", out),
          LayerSpec::relu("relu1"), LayerSpec::conv("conv2", out, out, 3, 1, 1),
          LayerSpec::batch_norm("bn2", out)};
}

std::vector<LayerSpec> bottleneck_branch(std::int64_t in, std::int64_t mid, std::int64_t out,
                                         int stride) {
  return {LayerSpec::conv("conv1", in, mid, 1, 1, 0),  LayerSpec::batch_norm("bn1", mid),
          LayerSpec::relu("relu1"),                     LayerSpec::conv("conv2", mid, mid, 3, stride, 1),
          LayerSpec::batch_norm("bn2", mid),            LayerSpec::relu("relu2"),
          LayerSpec::conv("conv3", mid, out, 1, 1, 0),  LayerSpec::batch_norm("bn3", out)};
}

std::vector<LayerSpec> projection(const char* name, std::int64_t in, std::int64_t out, int stride) {
  return {LayerSpec::conv(std::string(name) + ".conv", in, out, 1, stride, 0),
          LayerSpec::batch_norm(std::string(name) + ".bn", out)};
}

std::vector<LayerSpec> branch(bool bottleneck, std::int64_t in, std::int64_t mid, std::int64_t out,
                              int stride) {
  return bottleneck ? bottleneck_branch(in, mid, out, stride) : basic_branch(in, out, stride);
}

StageSpec head_stage(std::int64_t in, std::int64_t width, bool imagenet) {
  StageSpec s;
  s.kind = StageKind::kHead;
  s.block = "stem";
  if (imagenet) {
    s.main = {LayerSpec::conv("conv", in, width, 7, 2, 3), LayerSpec::batch_norm("bn", width),
              LayerSpec::relu("relu"), LayerSpec::max_pool("pool", 3, 2, 1)};
  } else {
    s.main = {LayerSpec::conv("conv", in, width, 3, 1, 1), LayerSpec::batch_norm("bn", width),
              LayerSpec::relu("relu")};
  }
  return s;
}

StageSpec tail_stage(std::int64_t width, std::int64_t classes) {
  StageSpec s;
  s.kind = StageKind::kTail;
  s.block = "classifier";
  s.main = {LayerSpec::global_avg_pool("pool"), LayerSpec::linear("fc", width, classes)};
  return s;
}

StageSpec reversible_stage(bool bottleneck, std::int64_t stream, std::int64_t mid) {
  StageSpec s;
  s.kind = StageKind::kReversible;
  s.block = bottleneck ? "rev_bottleneck" : "rev_basic";
  s.main = branch(bottleneck, stream, mid, stream, 1);
  return s;
}

// Splits the input: a full residual block maps the second stream, a strided
// projection maps the first.
StageSpec rev_downsample_stage(bool bottleneck, std::int64_t in_stream, std::int64_t mid,
                               std::int64_t out_stream, int stride) {
  StageSpec s;
  s.kind = StageKind::kNonReversible;
  s.block = bottleneck ? "down_bottleneck" : "down_basic";
  s.split = true;
  s.residual = true;
  s.main = branch(bottleneck, in_stream, mid, out_stream, stride);
  s.shortcut = projection("proj", in_stream, out_stream, stride);
  s.side = projection("side", in_stream, out_stream, stride);
  return s;
}

StageSpec residual_stage(bool bottleneck, std::int64_t in, std::int64_t mid, std::int64_t out,
                         int stride) {
  StageSpec s;
  s.kind = StageKind::kNonReversible;
  s.block = bottleneck ? "res_bottleneck" : "res_basic";
  s.residual = true;
  s.main = branch(bottleneck, in, mid, out, stride);
  if (stride != 1 || in != out) s.shortcut = projection("proj", in, out, stride);
  return s;
}

void number_stages(NetworkPlan& plan) {
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    plan.stages[i].id = static_cast<int>(i + 1);
    plan.stages[i].device = static_cast<int>(i);
  }
}

}  // namespace

NetworkPlan build_plan(const std::string& name, const std::string& dataset) {
  bool reversible;
  std::string depth;
  if (name.starts_with("revnet")) {
    reversible = true;
    depth = name.substr(6);
  } else if (name.starts_with("resnet")) {
    reversible = false;
    depth = name.substr(6);
  } else {
    throw ConfigError("unknown network '" + name + "'");
  }
  const Layout layout = layout_for(depth);

  NetworkPlan plan;
  plan.name = name;
  plan.dataset = dataset;
  std::int64_t base = 64;
  bool imagenet = false;
  if (dataset == "cifar10") {
    plan.input = {3, 32, 32};
    plan.classes = 10;
  } else if (dataset == "imagenet") {
    plan.input = {3, 224, 224};
    plan.classes = 1000;
    imagenet = true;
  } else if (dataset == "small") {
    plan.input = {3, 32, 32};
    plan.classes = 10;
    base = 16;
  } else {
    throw ConfigError("unknown dataset '" + dataset + "'");
  }

  const std::int64_t expansion = layout.bottleneck ? 4 : 1;
  // Reversible nets carry two streams, each as wide as the residual net.
  const std::int64_t streams = reversible ? 2 : 1;
  plan.stages.push_back(head_stage(plan.input[0], streams * base, imagenet));
  std::int64_t width = base;  // per stream
  for (std::size_t layer = 0; layer < layout.blocks.size(); ++layer) {
    const std::int64_t mid = base << layer;
    const std::int64_t out = mid * expansion;
    for (int b = 0; b < layout.blocks[layer]; ++b) {
      const int stride = (b == 0 && layer > 0) ? 2 : 1;
      if (!reversible) {
        plan.stages.push_back(residual_stage(layout.bottleneck, width, mid, out, stride));
      } else if (stride == 1 && width == out) {
        plan.stages.push_back(reversible_stage(layout.bottleneck, out, mid));
      } else {
        plan.stages.push_back(rev_downsample_stage(layout.bottleneck, width, mid, out, stride));
      }
      width = out;
    }
  }
  plan.stages.push_back(tail_stage(streams * width, plan.classes));
  number_stages(plan);
  return plan;
}

Network build_network(const std::string& name, const std::string& dataset, std::uint64_t seed,
                      DType dtype) {
  return instantiate(build_plan(name, dataset), seed, dtype);
}

NetworkPlan small_plan(int stages, std::int64_t width, const SmallOptions& o) {
  if (stages < 2) throw ConfigError("small network needs at least 2 stages, got " + std::to_string(stages));
  if (width < 2 || width % 2 != 0) throw ConfigError("small network width must be even and positive");
  if (o.downsample_stage != 0 && (o.downsample_stage < 2 || o.downsample_stage >= stages)) {
    throw ConfigError("downsample stage must lie strictly between head and tail");
  }
  NetworkPlan plan;
  plan.name = "small";
  plan.dataset = "custom";
  plan.input = {o.in_channels, o.spatial, o.spatial};
  plan.classes = o.classes;
  plan.stages.push_back(head_stage(o.in_channels, width, false));
  std::int64_t w = width;
  for (int j = 2; j < stages; ++j) {
    if (j == o.downsample_stage) {
      plan.stages.push_back(rev_downsample_stage(false, w / 2, w, w, 2));
      w *= 2;
    } else {
      plan.stages.push_back(reversible_stage(false, w / 2, w / 2));
    }
  }
  plan.stages.push_back(tail_stage(w, o.classes));
  number_stages(plan);
  return plan;
}

Network build_small(int stages, std::int64_t width, std::uint64_t seed, DType dtype,
                    const SmallOptions& options) {
  return instantiate(small_plan(stages, width, options), seed, dtype);
}

Shape stage_output_shape(const StageSpec& spec, const Shape& input) {
  auto through = [](const std::vector<LayerSpec>& layers, Shape s) {
    for (const auto& l : layers) s = nn::layer_output_shape(l, s);
    return s;
  };
  switch (spec.kind) {
    case StageKind::kReversible:
      return input;
    case StageKind::kHead:
    case StageKind::kTail:
      return through(spec.main, input);
    case StageKind::kNonReversible: {
      if (!spec.split) return through(spec.main, input);
      Shape half = input;
      half[1] /= 2;
      Shape r = through(spec.main, half);
      Shape s = through(spec.side, half);
      r[1] += s[1];
      return r;
    }
  }
  return input;
}

std::vector<Shape> activation_shapes(const NetworkPlan& plan, std::int64_t batch) {
  std::vector<Shape> out;
  Shape s{batch};
  s.insert(s.end(), plan.input.begin(), plan.input.end());
  out.push_back(s);
  for (const auto& spec : plan.stages) {
    s = stage_output_shape(spec, s);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage functions.

namespace {

class LayerRunner {
 public:
  LayerRunner(std::span<const ag::Var> params, nn::BnContext& bn) : params_(params), bn_(bn) {}

  ag::Var run(const std::vector<LayerSpec>& layers, ag::Var x) {
    for (const auto& l : layers) {
      const std::size_t n = nn::layer_params(l).size();
      if (offset_ + n > params_.size()) throw Error("stage received too few parameters");
      x = nn::apply_layer(l, x, params_.subspan(offset_, n), bn_);
      offset_ += n;
    }
    return x;
  }

  ag::Var residual(const StageSpec& spec, ag::Var x) {
    ag::Var m = run(spec.main, x);
    ag::Var s = spec.shortcut.empty() ? x : run(spec.shortcut, x);
    return ag::relu(ag::add(m, s));
  }

  std::size_t consumed() const { return offset_; }

 private:
  std::span<const ag::Var> params_;
  nn::BnContext& bn_;
  std::size_t offset_ = 0;
};

}  // namespace

ag::Var apply_stage(const StageSpec& spec, ag::Var x, std::span<const ag::Var> params,
                    nn::BnContext& bn) {
  LayerRunner r(params, bn);
  ag::Var y;
  if (spec.kind == StageKind::kReversible) {
    auto [x1, x2] = ag::split_channels(x);
    y = ag::concat_channels(x2, ag::add(x1, r.run(spec.main, x2)));
  } else if (spec.split) {
    auto [x1, x2] = ag::split_channels(x);
    ag::Var a = r.residual(spec, x2);
    y = ag::concat_channels(a, r.run(spec.side, x1));
  } else if (spec.residual) {
    y = r.residual(spec, x);
  } else {
    y = r.run(spec.main, x);
  }
  if (r.consumed() != params.size()) {
    throw Error("stage " + std::to_string(spec.id) + " received " + std::to_string(params.size()) +
                " parameters but uses " + std::to_string(r.consumed()));
  }
  return y;
}

ag::StageFn stage_fn(const StageSpec& spec, std::span<nn::BatchNormState> bn, nn::BnMode mode) {
  return [spec, bn, mode](ag::Var x, std::span<const ag::Var> params) {
    nn::BnContext ctx(bn, mode);
    return apply_stage(spec, x, params, ctx);
  };
}

ag::StageFn f_tilde_fn(const StageSpec& spec, std::span<nn::BatchNormState> bn, nn::BnMode mode) {
  if (!spec.reversible()) {
    throw Error("stage " + std::to_string(spec.id) + " is not reversible");
  }
  return [layers = spec.main, bn, mode](ag::Var x, std::span<const ag::Var> params) {
    nn::BnContext ctx(bn, mode);
    LayerRunner r(params, ctx);
    return r.run(layers, x);
  };
}

Tensor rev_forward(const ReversibleBlock& block, const Tensor& x) {
  auto [x1, x2] = split_channels(x);
  Tensor f = ag::evaluate(block.f_tilde, x2, block.params);
  return concat_channels(x2, add(x1, f));
}

Tensor rev_inverse(const ReversibleBlock& block, const Tensor& y) {
  auto [y1, y2] = split_channels(y);
  Tensor f = ag::evaluate(block.f_tilde, y1, block.params);
  return concat_channels(sub(y2, f), y1);
}

ReversibleBackward rev_backward_fused(const ReversibleBlock& block, const Tensor& y,
                                      const Tensor& delta_out) {
  if (delta_out.shape() != y.shape()) {
    throw ShapeError("rev_backward: gradient " + shape_str(delta_out.shape()) +
                     " does not match output " + shape_str(y.shape()));
  }
  auto [y1, y2] = split_channels(y);
  ag::Recorded f = ag::record(block.f_tilde, y1, block.params);
  auto [d1, d2] = split_channels(delta_out);
  ag::GradPair g = ag::vjp(f.graph, d2);
  ReversibleBackward out;
  out.input = concat_channels(sub(y2, f.output), y1);
  out.input_grad = concat_channels(d2, add(d1, g.input_grad));
  out.param_grads = std::move(g.param_grads);
  return out;
}

ReversibleBackward rev_backward_naive(const ReversibleBlock& block, const Tensor& y,
                                      const Tensor& delta_out) {
  ReversibleBackward out;
  out.input = rev_inverse(block, y);
  const ag::StageFn& ft = block.f_tilde;
  auto coupling = [&ft](ag::Var x, std::span<const ag::Var> p) {
    auto [x1, x2] = ag::split_channels(x);
    return ag::concat_channels(x2, ag::add(x1, ft(x2, p)));
  };
  ag::Recorded r = ag::record(coupling, out.input, block.params);
  ag::GradPair g = ag::vjp(r.graph, delta_out);
  out.input_grad = std::move(g.input_grad);
  out.param_grads = std::move(g.param_grads);
  return out;
}

}  // namespace petra::rev
