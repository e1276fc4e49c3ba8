// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include "petra/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "petra/data.hpp"
#include "petra/errors.hpp"
#include "petra/revnet.hpp"
#include "petra/rng.hpp"
#include "petra/runtime.hpp"

namespace petra::verify {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Max-norm relative error of the VJP against central differences of
// <f(x, params), delta>, over the input and every parameter.
double fd_error(const ag::StageFn& f, const Tensor& x, const std::vector<Tensor>& params, Rng& rng,
                bool check_input = true) {
  constexpr double h = 1e-5;
  ag::Recorded rec = ag::record(f, x, params, check_input);
  const Tensor delta = rng.normal_tensor(rec.output.shape(), 0.0, 1.0, DType::kF64);
  const ag::GradPair g = ag::vjp(rec.graph, delta);

  auto probe = [&](const Tensor& xi, const std::vector<Tensor>& ps) { return dot(ag::evaluate(f, xi, ps), delta); };
  auto worst = [](const Tensor& analytic, const std::vector<double>& numeric) {
    const auto a = analytic.to_f64();
    double diff = 0, ref = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      diff = std::max(diff, std::abs(a[i] - numeric[i]));
      ref = std::max(ref, std::abs(numeric[i]));
    }
    return diff / std::max(ref, 1e-12);
  };
  auto numeric = [&](const Tensor& t, const auto& eval) {
    std::vector<double> base = t.to_f64(), out(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto v = base;
      v[i] = base[i] + h;
      const double up = eval(Tensor::from_values(t.shape(), v, t.dtype()));
      v[i] = base[i] - h;
      const double dn = eval(Tensor::from_values(t.shape(), v, t.dtype()));
      out[i] = (up - dn) / (2 * h);
    }
    return out;
  };

  double err = 0;
  if (check_input) err = worst(g.input_grad, numeric(x, [&](const Tensor& xi) { return probe(xi, params); }));
  for (std::size_t k = 0; k < params.size(); ++k) {
    err = std::max(err, worst(g.param_grads[k], numeric(params[k], [&](const Tensor& p) {
                                auto ps = params;
                                ps[k] = p;
                                return probe(x, ps);
                              })));
  }
  return err;
}

Check bound(std::string name, double err, double limit) {
  return {std::move(name), err < limit, "err " + sci(err) + " (limit " + sci(limit) + ")"};
}

std::vector<runtime::MicroBatch> micro_batches(std::int64_t count, std::int64_t batch, std::int64_t spatial,
                                               std::int64_t classes, std::uint64_t seed) {
  Rng rng(seed);
  data::Dataset ds = data::synth_dataset(classes, count * batch, {3, spatial, spatial}, rng);
  data::BatchIterator it(ds, batch, {}, seed, false, true, DType::kF64);
  std::vector<runtime::MicroBatch> out;
  for (std::int64_t i = 0; i < count; ++i) {
    auto b = it.batch(0, i);
    out.push_back({b.images, b.labels, 0});
  }
  return out;
}

runtime::BatchSource source_of(const std::vector<runtime::MicroBatch>& v) {
  auto at = std::make_shared<std::size_t>(0);
  return [&v, at]() -> std::optional<runtime::MicroBatch> {
    if (*at >= v.size()) return std::nullopt;
    return v[(*at)++];
  };
}

runtime::TrainConfig constant(double lr, int k = 1) {
  runtime::TrainConfig c;
  c.accumulation = k;
  c.sgd = {0.9, 5e-4, true};
  c.schedule.base_lr = lr;
  c.schedule.warmup_epochs = 0;
  return c;
}

bool same_params(const rev::Network& a, const rev::Network& b) {
  for (std::size_t j = 0; j < a.stages.size(); ++j) {
    for (std::size_t i = 0; i < a.stages[j].params.size(); ++i) {
      if (!a.stages[j].params[i].bitwise_equal(b.stages[j].params[i])) return false;
    }
    for (std::size_t i = 0; i < a.stages[j].bn.size(); ++i) {
      if (!a.stages[j].bn[i].running_mean.bitwise_equal(b.stages[j].bn[i].running_mean)) return false;
      if (!a.stages[j].bn[i].running_var.bitwise_equal(b.stages[j].bn[i].running_var)) return false;
    }
  }
  return true;
}

}  // namespace

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::string Report::text() const {
  std::ostringstream os;
  for (const auto& c : checks) os << (c.passed ? "PASS " : "FAIL ") << suite << '/' << c.name << "  " << c.detail << '\n';
  os << suite << ": " << (passed() ? "ok" : "FAILED") << '\n';
  return os.str();
}

Report grad(const Options& o) {
  Report r{"grad", {}};
  Rng rng(o.seed);
  const std::vector<std::pair<nn::LayerSpec, Shape>> layers{
      {nn::LayerSpec::conv("conv3x3", 2, 3, 3, 1, 1), {2, 2, 4, 4}},
      {nn::LayerSpec::conv("conv_strided", 2, 3, 3, 2, 1), {2, 2, 5, 5}},
      {nn::LayerSpec::linear("linear", 4, 3), {3, 4}},
      {nn::LayerSpec::batch_norm("batch_norm", 3), {4, 3, 2, 2}},
      {nn::LayerSpec::relu("relu"), {3, 5}},
      {nn::LayerSpec::max_pool("max_pool", 3, 2, 1), {2, 2, 5, 5}},
      {nn::LayerSpec::global_avg_pool("global_avg_pool"), {2, 3, 3, 3}},
  };
  for (const auto& [spec, shape] : layers) {
    std::vector<nn::BatchNormState> states;
    if (spec.kind == nn::LayerKind::kBatchNorm) states.push_back(nn::BatchNormState::init(spec.out_channels, DType::kF64));
    auto params = nn::init_params(spec, rng, DType::kF64);
    for (auto& p : params) p = add(p, rng.normal_tensor(p.shape(), 0, 0.3, DType::kF64));
    ag::StageFn f = [&spec, &states](ag::Var x, std::span<const ag::Var> p) {
      nn::BnContext bn(states, nn::BnMode::kTrainNoStatUpdate);
      return nn::apply_layer(spec, x, p, bn);
    };
    r.checks.push_back(bound("layer " + spec.name, fd_error(f, rng.normal_tensor(shape, 0, 1, DType::kF64), params, rng), 1e-4));
  }

  rev::SmallOptions so;
  so.spatial = 4;
  so.classes = 3;
  so.downsample_stage = 3;
  auto net = rev::build_small(5, 4, o.seed, DType::kF64, so);
  const auto shapes = rev::activation_shapes(net.plan, 2);
  for (std::size_t j = 0; j < net.stages.size(); ++j) {
    auto bn = net.stages[j].bn;
    auto f = rev::stage_fn(net.plan.stages[j], bn, nn::BnMode::kTrainNoStatUpdate);
    const Tensor x = rng.normal_tensor(shapes[j], 0, 1, DType::kF64);
    const auto& spec = net.plan.stages[j];
    r.checks.push_back(bound("stage " + std::to_string(spec.id) + " (" + rev::to_string(spec.kind) + ")",
                             fd_error(f, x, net.stages[j].params, rng, j > 0), 1e-4));
  }
  return r;
}

Report reversibility(const Options& o) {
  Report r{"reversibility", {}};
  Rng rng(o.seed);
  double worst32 = 0, worst64 = 0;
  bool fused_equal = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t width = 2 * (1 + static_cast<std::int64_t>(rng.below(4)));
    const auto spec = rev::small_plan(3, width).stages[1];
    for (DType dt : {DType::kF32, DType::kF64}) {
      auto sp = rev::init_stage(spec, rng, dt);
      for (std::size_t i = 0; i < sp.params.size(); ++i) {
        if (sp.meta[i].is_bn_param) sp.params[i] = add(sp.params[i], rng.normal_tensor(sp.params[i].shape(), 0, 0.3, dt));
      }
      rev::ReversibleBlock block{rev::f_tilde_fn(spec, sp.bn, nn::BnMode::kTrainNoStatUpdate), sp.params};
      const Tensor x = rng.normal_tensor({2, width, 4, 4}, 0, 1, dt);
      const double err = max_abs_diff(rev::rev_inverse(block, rev::rev_forward(block, x)), x);
      double& w = dt == DType::kF32 ? worst32 : worst64;
      w = std::max(w, err);
      if (dt == DType::kF64 && trial % 10 == 0) {
        const Tensor d = rng.normal_tensor(x.shape(), 0, 1, dt);
        const Tensor y = rev::rev_forward(block, x);
        const auto a = rev::rev_backward_fused(block, y, d);
        const auto b = rev::rev_backward_naive(block, y, d);
        fused_equal = fused_equal && a.input.bitwise_equal(b.input) && a.input_grad.bitwise_equal(b.input_grad);
        for (std::size_t i = 0; i < a.param_grads.size(); ++i) {
          fused_equal = fused_equal && a.param_grads[i].bitwise_equal(b.param_grads[i]);
        }
      }
    }
  }
  r.checks.push_back(bound("round trip f64 (100 blocks)", worst64, 1e-11));
  r.checks.push_back(bound("round trip f32 (100 blocks)", worst32, 1e-5));
  r.checks.push_back({"fused backward equals naive", fused_equal, fused_equal ? "bitwise" : "differs"});
  return r;
}

Report staleness(const Options& o) {
  const int J = o.stages;
  if (J < 2) throw ConfigError("staleness suite needs at least 2 stages");
  const std::int64_t n = o.micro_batches > 0 ? o.micro_batches : 20 * J;
  Report r{"staleness", {}};
  rev::SmallOptions so;
  so.spatial = 4;
  so.classes = 2;
  so.downsample_stage = J > 3 ? J / 2 : 0;
  auto net = rev::build_small(J, 4, o.seed, DType::kF64, so);
  runtime::Pipeline pipe(net, constant(0.01));
  const auto batches = micro_batches(n, 2, 4, 2, o.seed);
  const auto log = pipe.run_rounds(source_of(batches));
  for (int j = 1; j <= J; ++j) {
    const auto& s = log.stages[j - 1];
    const std::int64_t lag = 2 * (J - j);
    // Micro-batch m sees min(m, lag) backwards between its forward and backward.
    std::map<std::int64_t, std::int64_t> want;
    for (std::int64_t m = 0; m < n; ++m) ++want[std::min(m, lag)];
    const bool delay_ok = s.delay == want;
    const bool counts_ok = s.forwards == n && s.backwards == n;
    const bool buffer_ok = log.roles[j - 1] == runtime::Role::kReversible
                               ? s.buffer_high_water == 0
                               : s.buffer_high_water <= static_cast<std::size_t>(lag + 2);
    const std::int64_t steady = s.delay.contains(lag) ? s.delay.at(lag) : 0;
    r.checks.push_back({"stage " + std::to_string(j) + " delay " + std::to_string(lag),
                        delay_ok && counts_ok && buffer_ok,
                        std::to_string(steady) + "/" + std::to_string(n) + " at " + std::to_string(lag) +
                            ", buffer high-water " + std::to_string(s.buffer_high_water) + " (" +
                            runtime::to_string(log.roles[j - 1]) + ")"});
  }
  return r;
}

Report oracle(const Options& o) {
  Report r{"oracle", {}};
  const auto batches = micro_batches(20, 8, 8, 4, o.seed);
  rev::SmallOptions so;
  so.spatial = 8;
  so.classes = 4;
  for (int k : {1, 4}) {
    auto a = rev::build_small(4, 8, o.seed, DType::kF64, so);
    auto b = rev::build_small(4, 8, o.seed, DType::kF64, so);
    runtime::Pipeline pipe(a, constant(0.05, k));
    runtime::ReferenceTrainer ref(b, constant(0.05, k));
    int first_bad = -1;
    for (std::size_t i = 0; i < batches.size() && first_bad < 0; ++i) {
      std::vector<runtime::MicroBatch> one{batches[i]};
      const auto log = pipe.run_lockstep(source_of(one));
      const auto t = ref.step(batches[i]);
      if (log.losses.size() != 1 || log.losses[0] != t.loss || !same_params(a, b)) first_bad = static_cast<int>(i);
    }
    r.checks.push_back({"lockstep J=4 k=" + std::to_string(k) + " 20 steps", first_bad < 0,
                        first_bad < 0 ? "bitwise" : "diverged at step " + std::to_string(first_bad + 1)});
  }
  {
    auto a = rev::build_small(4, 8, o.seed, DType::kF64, so);
    auto b = rev::build_small(4, 8, o.seed, DType::kF64, so);
    const std::size_t all = a.plan.size();
    runtime::Pipeline pipe(a, constant(0.05), runtime::partition_by_sizes(a.plan, std::span(&all, 1)));
    runtime::ReferenceTrainer ref(b, constant(0.05));
    pipe.run_threads(source_of(batches));
    for (const auto& mb : batches) ref.step(mb);
    const bool eq = same_params(a, b);
    r.checks.push_back({"threads J=1 20 steps", eq, eq ? "bitwise" : "differs"});
  }
  return r;
}

std::vector<std::string> suites() { return {"grad", "reversibility", "staleness", "oracle"}; }

Report run(const std::string& suite, const Options& options) {
  if (suite == "grad") return grad(options);
  if (suite == "reversibility") return reversibility(options);
  if (suite == "staleness") return staleness(options);
  if (suite == "oracle") return oracle(options);
  throw ConfigError("unknown verify suite '" + suite + "' (expected grad, reversibility, staleness, oracle)");
}

}  // namespace petra::verify
