// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Reversible coupling blocks, residual/downsampling blocks, and builders that
// lay ResNet/RevNet architectures out as a list of stages.
//
// Coupling: (x1, x2) = split(x); y1 = x2; y2 = x1 + F~(x2).
// Inverse:  x2 = y1; x1 = y2 - F~(y1).

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "petra/autograd.hpp"
#include "petra/nn.hpp"
#include "petra/tensor.hpp"

namespace petra::rev {

enum class StageKind { kHead, kReversible, kNonReversible, kTail };

std::string to_string(StageKind kind);
StageKind stage_kind_from_string(const std::string& name);

struct StageSpec {
  int id = 0;  // 1-based position in the pipeline
  StageKind kind = StageKind::kNonReversible;
  std::string block;
  /// F~ for reversible stages; the main path otherwise.
  std::vector<nn::LayerSpec> main;
  /// Projection on the skip path of a residual block; empty means identity.
  std::vector<nn::LayerSpec> shortcut;
  /// Applied to the first stream when the stage splits its input.
  std::vector<nn::LayerSpec> side;
  /// relu(main(x) + shortcut(x)).
  bool residual = false;
  /// y = concat(R(x2), side(x1)) where R is the residual main path.
  bool split = false;
  int device = 0;

  bool reversible() const { return kind == StageKind::kReversible; }
};

struct NetworkPlan {
  std::string name;
  std::string dataset;
  Shape input;  // per sample: channels, height, width
  std::int64_t classes = 10;
  std::vector<StageSpec> stages;

  std::size_t size() const { return stages.size(); }
};

/// Learnable tensors, their metadata, and batch-norm state for one stage.
struct StageParams {
  std::vector<Tensor> params;
  std::vector<nn::ParamMeta> meta;
  std::vector<nn::BatchNormState> bn;

  std::int64_t count() const;
  std::size_t nbytes() const;
};

struct Network {
  NetworkPlan plan;
  std::vector<StageParams> stages;

  std::int64_t parameter_count() const;
};

std::vector<nn::ParamMeta> stage_param_meta(const StageSpec& spec);
std::size_t stage_bn_count(const StageSpec& spec);
StageParams init_stage(const StageSpec& spec, Rng& rng, DType dtype);

/// Parameters for every stage, each stage drawing from its own fork of seed.
Network instantiate(NetworkPlan plan, std::uint64_t seed, DType dtype);

/// name: revnet18|revnet34|revnet50|resnet18|resnet34|resnet50.
/// dataset: cifar10 (3x3 stem, no max-pool, 10 classes), imagenet
/// (7x7 stem with max-pool, 1000 classes), small (cifar10 layout at 1/4 width).
NetworkPlan build_plan(const std::string& name, const std::string& dataset);
Network build_network(const std::string& name, const std::string& dataset, std::uint64_t seed,
                      DType dtype);

struct SmallOptions {
  std::int64_t in_channels = 3;
  std::int64_t spatial = 32;
  std::int64_t classes = 10;
  /// Stage id (2 .. stages-1) replaced by a stride-2 downsampling block that
  /// doubles the width; 0 for none.
  int downsample_stage = 0;
};

/// Head + (stages - 2) reversible blocks + tail. `width` is the full channel
/// count (two streams of width / 2).
NetworkPlan small_plan(int stages, std::int64_t width, const SmallOptions& options = {});
Network build_small(int stages, std::int64_t width, std::uint64_t seed, DType dtype,
                    const SmallOptions& options = {});

/// Output shape (batch included) of a stage for a given input shape.
Shape stage_output_shape(const StageSpec& spec, const Shape& input);
/// Activation shapes x_0 .. x_J for a batch size.
std::vector<Shape> activation_shapes(const NetworkPlan& plan, std::int64_t batch);

// ---------------------------------------------------------------------------
// Stage functions.

ag::Var apply_stage(const StageSpec& spec, ag::Var x, std::span<const ag::Var> params,
                    nn::BnContext& bn);

/// The whole stage as a differentiable function. Batch-norm states are
/// referenced, not copied; they must outlive the returned function.
ag::StageFn stage_fn(const StageSpec& spec, std::span<nn::BatchNormState> bn, nn::BnMode mode);

/// F~ of a reversible stage, acting on one stream.
ag::StageFn f_tilde_fn(const StageSpec& spec, std::span<nn::BatchNormState> bn, nn::BnMode mode);

struct ReversibleBlock {
  ag::StageFn f_tilde;
  std::vector<Tensor> params;
};

Tensor rev_forward(const ReversibleBlock& block, const Tensor& x);
Tensor rev_inverse(const ReversibleBlock& block, const Tensor& y);

struct ReversibleBackward {
  Tensor input;  // reconstructed x
  Tensor input_grad;
  std::vector<Tensor> param_grads;
};

/// Reconstructs x while recording F~ once and reuses that graph for the
/// gradients.
ReversibleBackward rev_backward_fused(const ReversibleBlock& block, const Tensor& y,
                                      const Tensor& delta_out);
/// Inverse, then a fresh recording of the full coupling, then its VJP.
ReversibleBackward rev_backward_naive(const ReversibleBlock& block, const Tensor& y,
                                      const Tensor& delta_out);

// ---------------------------------------------------------------------------
// Serialization.

std::string plan_to_json(const NetworkPlan& plan);
NetworkPlan plan_from_json(const std::string& text);

/// Binary checkpoint: "PTRA" magic, u32 version, u8 dtype, u32 tensor count,
/// then per tensor (u32 name length, name, u32 rank, u64 dims, u64 offset),
/// then the raw little-endian payloads. Covers parameters and running
/// statistics.
void save_checkpoint(const std::filesystem::path& path, const Network& net);
void load_checkpoint(const std::filesystem::path& path, Network& net);

}  // namespace petra::rev
