// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Layers used to build ResNet/RevNet stages, each with a forward that records
// onto an autograd tape and a registered VJP.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "petra/autograd.hpp"
#include "petra/rng.hpp"
#include "petra/tensor.hpp"

namespace petra::nn {

/// Non-learnable batch-norm state. The affine gamma/beta are ordinary
/// parameters of the owning stage. Running statistics change only through
/// update_running_stats.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  std::int64_t updates = 0;

  static BatchNormState init(std::int64_t channels, DType dtype);
  std::int64_t channels() const { return running_mean.numel(); }
};

enum class BnMode {
  kTrainNoStatUpdate,    // batch statistics, running stats untouched
  kTrainWithStatUpdate,  // batch statistics, running stats updated by EMA
  kEval,                 // running statistics
};

/// running <- (1 - momentum) * running + momentum * batch. `batch_var` is the
/// unbiased estimate.
void update_running_stats(BatchNormState& state, const Tensor& batch_mean,
                          const Tensor& batch_var);

/// Per-channel statistics of a 2-D or 4-D batch: (mean, biased var,
/// unbiased var).
struct ChannelStats {
  Tensor mean;
  Tensor var;
  Tensor var_unbiased;
};
ChannelStats channel_stats(const Tensor& x);

/// Plain (unrecorded) batch norm.
Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         BatchNormState& state, BnMode mode);

/// Context threaded through stage forwards: the mode for every batch norm and
/// the stage's states, consumed in layer order.
class BnContext {
 public:
  BnContext(std::span<BatchNormState> states, BnMode mode)
      : states_(states), mode_(mode) {}

  BnMode mode() const { return mode_; }
  BatchNormState& next();
  std::size_t consumed() const { return cursor_; }

 private:
  std::span<BatchNormState> states_;
  BnMode mode_;
  std::size_t cursor_ = 0;
};

ag::Var batch_norm(ag::Var x, ag::Var gamma, ag::Var beta, BatchNormState& state,
                   BnMode mode);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, same shape as logits
  std::int64_t correct = 0;
};

/// Mean softmax cross-entropy over the batch.
LossResult cross_entropy_loss(const Tensor& logits, std::span<const std::int32_t> labels);

// ---------------------------------------------------------------------------

enum class LayerKind { kConv, kLinear, kBatchNorm, kRelu, kMaxPool, kAvgPool, kGlobalAvgPool, kLoss };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::string name;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  bool bias = false;

  static LayerSpec conv(std::string name, std::int64_t in, std::int64_t out, int kernel,
                        int stride, int padding);
  static LayerSpec linear(std::string name, std::int64_t in, std::int64_t out);
  static LayerSpec batch_norm(std::string name, std::int64_t channels);
  static LayerSpec relu(std::string name);
  static LayerSpec max_pool(std::string name, int kernel, int stride, int padding);
  static LayerSpec global_avg_pool(std::string name);
};

struct ParamMeta {
  std::string name;
  Shape shape;
  bool is_bias = false;
  bool is_bn_param = false;

  bool decay_exempt() const { return is_bias || is_bn_param; }
};

std::vector<ParamMeta> layer_params(const LayerSpec& spec);
bool layer_has_bn_state(const LayerSpec& spec);

/// Kaiming-uniform (fan-in, ReLU gain) for conv/linear weights, zeros for
/// biases and beta, ones for gamma.
std::vector<Tensor> init_params(const LayerSpec& spec, Rng& rng, DType dtype);

/// Applies one layer. `params` are the layer's own parameters in
/// layer_params order.
ag::Var apply_layer(const LayerSpec& spec, ag::Var x, std::span<const ag::Var> params,
                    BnContext& bn);

/// Output shape of a layer for an input shape (batch dim included).
Shape layer_output_shape(const LayerSpec& spec, const Shape& input);

}  // namespace petra::nn
