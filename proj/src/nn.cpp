// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include "petra/nn.hpp"

#include <array>
#include <cmath>
#include <mutex>

namespace petra::nn {

namespace {

struct Geometry {
  std::int64_t n, c, inner;
};

Geometry bn_geometry(const Shape& s) {
  if (s.size() != 2 && s.size() != 4) {
    throw ShapeError("batch_norm: expected 2-D or 4-D input, got " + shape_str(s));
  }
  return {s[0], s[1], s.size() == 4 ? s[2] * s[3] : 1};
}

// x_hat = (x - mean) * inv_std per channel; y = gamma * x_hat + beta.
template <typename T>
std::pair<Tensor, Tensor> normalize(const Tensor& x, const Tensor& mean,
                                    const Tensor& inv_std, const Tensor& gamma,
                                    const Tensor& beta) {
  const Geometry g = bn_geometry(x.shape());
  auto px = x.data<T>();
  auto pm = mean.data<T>();
  auto ps = inv_std.data<T>();
  auto pg = gamma.data<T>();
  auto pb = beta.data<T>();
  std::vector<T> xhat(px.size()), y(px.size());
  for (std::int64_t i = 0; i < g.n; ++i) {
    for (std::int64_t c = 0; c < g.c; ++c) {
      const std::int64_t off = (i * g.c + c) * g.inner;
      for (std::int64_t s = 0; s < g.inner; ++s) {
        const T h = (px[off + s] - pm[c]) * ps[c];
        xhat[off + s] = h;
        y[off + s] = pg[c] * h + pb[c];
      }
    }
  }
  return {Tensor(x.shape(), std::move(xhat)), Tensor(x.shape(), std::move(y))};
}

Tensor inv_std_of(const Tensor& var, double eps) {
  return dispatch(var.dtype(), [&]<typename T>() {
    auto pv = var.data<T>();
    std::vector<T> out(pv.size());
    for (std::size_t c = 0; c < pv.size(); ++c) {
      out[c] = T(1) / std::sqrt(pv[c] + static_cast<T>(eps));
    }
    return Tensor(var.shape(), std::move(out));
  });
}

void check_bn_operands(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const BatchNormState& state) {
  const Geometry g = bn_geometry(x.shape());
  if (gamma.shape() != Shape{g.c} || beta.shape() != Shape{g.c} ||
      state.channels() != g.c) {
    throw ShapeError("batch_norm: input " + shape_str(x.shape()) +
                     " does not match gamma " + shape_str(gamma.shape()) +
                     " / state with " + std::to_string(state.channels()) +
                     " channels");
  }
}

struct BnForward {
  Tensor y;
  Tensor xhat;
  Tensor inv_std;
};

BnForward bn_forward_impl(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          BatchNormState& state, BnMode mode) {
  check_bn_operands(x, gamma, beta, state);
  Tensor mean, var;
  if (mode == BnMode::kEval) {
    mean = state.running_mean;
    var = state.running_var;
  } else {
    ChannelStats st = channel_stats(x);
    mean = st.mean;
    var = st.var;
    if (mode == BnMode::kTrainWithStatUpdate) {
      update_running_stats(state, st.mean, st.var_unbiased);
    }
  }
  BnForward out;
  out.inv_std = inv_std_of(var, state.eps);
  std::tie(out.xhat, out.y) = dispatch(x.dtype(), [&]<typename T>() {
    return normalize<T>(x, mean, out.inv_std, gamma, beta);
  });
  return out;
}

std::vector<Tensor> bn_vjp(const ag::VjpArgs& a) {
  const Tensor& gout = a.out_grads[0];
  const Tensor& xhat = a.node.ctx.saved.at(0);
  const Tensor& inv_std = a.node.ctx.saved.at(1);
  const Tensor& gamma = a.node.ctx.saved.at(2);
  const bool eval = a.node.ctx.ints.at(0) != 0;
  const Geometry g = bn_geometry(gout.shape());
  return dispatch(gout.dtype(), [&]<typename T>() {
    auto pg = gout.data<T>();
    auto ph = xhat.data<T>();
    auto ps = inv_std.data<T>();
    auto pgam = gamma.data<T>();
    std::vector<T> dgamma(g.c, T(0)), dbeta(g.c, T(0));
    for (std::int64_t i = 0; i < g.n; ++i) {
      for (std::int64_t c = 0; c < g.c; ++c) {
        const std::int64_t off = (i * g.c + c) * g.inner;
        T sb = 0, sg = 0;
        for (std::int64_t s = 0; s < g.inner; ++s) {
          sb += pg[off + s];
          sg += pg[off + s] * ph[off + s];
        }
        dbeta[c] += sb;
        dgamma[c] += sg;
      }
    }
    std::vector<Tensor> out(3);
    if (a.needs[0]) {
      std::vector<T> dx(pg.size());
      const T m = static_cast<T>(g.n * g.inner);
      for (std::int64_t i = 0; i < g.n; ++i) {
        for (std::int64_t c = 0; c < g.c; ++c) {
          const std::int64_t off = (i * g.c + c) * g.inner;
          if (eval) {
            const T k = pgam[c] * ps[c];
            for (std::int64_t s = 0; s < g.inner; ++s) dx[off + s] = k * pg[off + s];
          } else {
            // Running statistics are constants; only batch statistics carry
            // gradient.
            const T k = pgam[c] * ps[c] / m;
            for (std::int64_t s = 0; s < g.inner; ++s) {
              dx[off + s] = k * (m * pg[off + s] - dbeta[c] - ph[off + s] * dgamma[c]);
            }
          }
        }
      }
      out[0] = Tensor(gout.shape(), std::move(dx));
    }
    if (a.needs[1]) out[1] = Tensor(Shape{g.c}, std::move(dgamma));
    if (a.needs[2]) out[2] = Tensor(Shape{g.c}, std::move(dbeta));
    return out;
  });
}

void ensure_registered() {
  static std::once_flag once;
  std::call_once(once, [] { ag::OpRegistry::global().add("batch_norm", bn_vjp); });
}

}  // namespace

BatchNormState BatchNormState::init(std::int64_t channels, DType dtype) {
  BatchNormState s;
  s.running_mean = Tensor::zeros(Shape{channels}, dtype);
  s.running_var = Tensor::full(Shape{channels}, 1.0, dtype);
  return s;
}

void update_running_stats(BatchNormState& state, const Tensor& batch_mean,
                          const Tensor& batch_var) {
  if (batch_mean.shape() != state.running_mean.shape() ||
      batch_var.shape() != state.running_var.shape()) {
    throw ShapeError("update_running_stats: batch statistics " +
                     shape_str(batch_mean.shape()) + " vs state " +
                     shape_str(state.running_mean.shape()));
  }
  const double m = state.momentum;
  state.running_mean = axpy(scale(state.running_mean, 1.0 - m), m, batch_mean);
  state.running_var = axpy(scale(state.running_var, 1.0 - m), m, batch_var);
  ++state.updates;
}

ChannelStats channel_stats(const Tensor& x) {
  const Geometry g = bn_geometry(x.shape());
  return dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    const double count = static_cast<double>(g.n * g.inner);
    std::vector<T> mean(g.c), var(g.c), var_u(g.c);
    for (std::int64_t c = 0; c < g.c; ++c) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < g.n; ++i) {
        const T* p = px.data() + (i * g.c + c) * g.inner;
        for (std::int64_t s = 0; s < g.inner; ++s) acc += p[s];
      }
      const double mu = acc / count;
      double sq = 0.0;
      for (std::int64_t i = 0; i < g.n; ++i) {
        const T* p = px.data() + (i * g.c + c) * g.inner;
        for (std::int64_t s = 0; s < g.inner; ++s) {
          const double d = p[s] - mu;
          sq += d * d;
        }
      }
      mean[c] = static_cast<T>(mu);
      var[c] = static_cast<T>(sq / count);
      var_u[c] = static_cast<T>(count > 1 ? sq / (count - 1) : sq / count);
    }
    return ChannelStats{Tensor(Shape{g.c}, std::move(mean)),
                        Tensor(Shape{g.c}, std::move(var)),
                        Tensor(Shape{g.c}, std::move(var_u))};
  });
}

Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         BatchNormState& state, BnMode mode) {
  return bn_forward_impl(x, gamma, beta, state, mode).y;
}

BatchNormState& BnContext::next() {
  if (cursor_ >= states_.size()) {
    throw Error("BnContext: stage has only " + std::to_string(states_.size()) +
                " batch-norm states");
  }
  return states_[cursor_++];
}

ag::Var batch_norm(ag::Var x, ag::Var gamma, ag::Var beta, BatchNormState& state,
                   BnMode mode) {
  ensure_registered();
  ag::Tape& tape = *x.tape();
  BnForward f = bn_forward_impl(x.value(), gamma.value(), beta.value(), state, mode);
  ag::SavedContext ctx;
  ctx.ints = {mode == BnMode::kEval ? 1 : 0};
  if (tape.recording()) ctx.saved = {f.xhat, f.inv_std, gamma.value()};
  return tape.record1("batch_norm", std::array{x, gamma, beta}, std::move(f.y),
                      std::move(ctx));
}

LossResult cross_entropy_loss(const Tensor& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy_loss: logits must be batch x classes, got " +
                     shape_str(logits.shape()));
  }
  const std::int64_t n = logits.dim(0), classes = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  }
  for (auto y : labels) {
    if (y < 0 || y >= classes) {
      throw Error("cross_entropy_loss: label " + std::to_string(y) +
                  " out of range [0, " + std::to_string(classes) + ")");
    }
  }
  const std::vector<double> z = logits.to_f64();
  std::vector<double> grad(z.size());
  LossResult r;
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * classes;
    double mx = row[0];
    std::int64_t arg = 0;
    for (std::int64_t c = 1; c < classes; ++c) {
      if (row[c] > mx) {
        mx = row[c];
        arg = c;
      }
    }
    if (arg == labels[i]) ++r.correct;
    double denom = 0.0;
    for (std::int64_t c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
    const double log_denom = std::log(denom);
    total += -(row[labels[i]] - mx - log_denom);
    for (std::int64_t c = 0; c < classes; ++c) {
      const double p = std::exp(row[c] - mx - log_denom);
      grad[i * classes + c] = (p - (c == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  r.loss = total / static_cast<double>(n);
  r.grad = Tensor::from_values(logits.shape(), grad, logits.dtype());
  return r;
}

// ---------------------------------------------------------------------------

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kBatchNorm: return "bn";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kAvgPool: return "avgpool";
    case LayerKind::kGlobalAvgPool: return "global_avgpool";
    case LayerKind::kLoss: return "loss";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::kConv, LayerKind::kLinear, LayerKind::kBatchNorm,
                 LayerKind::kRelu, LayerKind::kMaxPool, LayerKind::kAvgPool,
                 LayerKind::kGlobalAvgPool, LayerKind::kLoss}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv(std::string name, std::int64_t in, std::int64_t out, int kernel,
                          int stride, int padding) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.name = std::move(name);
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::linear(std::string name, std::int64_t in, std::int64_t out) {
  LayerSpec s;
  s.kind = LayerKind::kLinear;
  s.name = std::move(name);
  s.in_channels = in;
  s.out_channels = out;
  s.bias = true;
  return s;
}

LayerSpec LayerSpec::batch_norm(std::string name, std::int64_t channels) {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm;
  s.name = std::move(name);
  s.in_channels = s.out_channels = channels;
  return s;
}

LayerSpec LayerSpec::relu(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::max_pool(std::string name, int kernel, int stride, int padding) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.name = std::move(name);
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::global_avg_pool(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::kGlobalAvgPool;
  s.name = std::move(name);
  return s;
}

std::vector<ParamMeta> layer_params(const LayerSpec& spec) {
  std::vector<ParamMeta> out;
  switch (spec.kind) {
    case LayerKind::kConv:
      out.push_back({spec.name + ".weight",
                     Shape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}});
      if (spec.bias) out.push_back({spec.name + ".bias", Shape{spec.out_channels}, true});
      break;
    case LayerKind::kLinear:
      out.push_back({spec.name + ".weight", Shape{spec.out_channels, spec.in_channels}});
      if (spec.bias) out.push_back({spec.name + ".bias", Shape{spec.out_channels}, true});
      break;
    case LayerKind::kBatchNorm:
      out.push_back({spec.name + ".gamma", Shape{spec.out_channels}, false, true});
      out.push_back({spec.name + ".beta", Shape{spec.out_channels}, false, true});
      break;
    default:
      break;
  }
  return out;
}

bool layer_has_bn_state(const LayerSpec& spec) { return spec.kind == LayerKind::kBatchNorm; }

std::vector<Tensor> init_params(const LayerSpec& spec, Rng& rng, DType dtype) {
  std::vector<Tensor> out;
  for (const ParamMeta& m : layer_params(spec)) {
    if (m.is_bn_param) {
      const bool gamma = m.name.ends_with(".gamma");
      out.push_back(Tensor::full(m.shape, gamma ? 1.0 : 0.0, dtype));
    } else if (m.is_bias) {
      out.push_back(Tensor::zeros(m.shape, dtype));
    } else {
      std::int64_t fan_in = 1;
      for (std::size_t i = 1; i < m.shape.size(); ++i) fan_in *= m.shape[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      out.push_back(rng.uniform_tensor(m.shape, -bound, bound, dtype));
    }
  }
  return out;
}

ag::Var apply_layer(const LayerSpec& spec, ag::Var x, std::span<const ag::Var> params,
                    BnContext& bn) {
  switch (spec.kind) {
    case LayerKind::kConv: {
      ag::Var y = ag::conv2d(x, params[0], {spec.stride, spec.padding});
      return spec.bias ? ag::add_bias(y, params[1]) : y;
    }
    case LayerKind::kLinear:
      return spec.bias ? ag::linear(x, params[0], params[1]) : ag::linear(x, params[0]);
    case LayerKind::kBatchNorm:
      return batch_norm(x, params[0], params[1], bn.next(), bn.mode());
    case LayerKind::kRelu:
      return ag::relu(x);
    case LayerKind::kMaxPool:
      return ag::maxpool2d(x, {spec.kernel, spec.stride, spec.padding});
    case LayerKind::kAvgPool:
      return ag::avgpool2d(x, {spec.kernel, spec.stride, spec.padding});
    case LayerKind::kGlobalAvgPool:
      return ag::global_avgpool(x);
    case LayerKind::kLoss:
      return x;
  }
  return x;
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::kConv:
      return {in[0], spec.out_channels, conv_out_extent(in[2], spec.kernel, spec.stride, spec.padding),
              conv_out_extent(in[3], spec.kernel, spec.stride, spec.padding)};
    case LayerKind::kLinear:
      return {in[0], spec.out_channels};
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      return {in[0], in[1], conv_out_extent(in[2], spec.kernel, spec.stride, spec.padding),
              conv_out_extent(in[3], spec.kernel, spec.stride, spec.padding)};
    case LayerKind::kGlobalAvgPool:
      return {in[0], in[1]};
    default:
      return in;
  }
}

}  // namespace petra::nn
