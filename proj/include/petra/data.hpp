// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Datasets (CIFAR-10 binary batches, synthetic Gaussian classes), train-time
// augmentation, and deterministic batching.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "petra/rng.hpp"
#include "petra/tensor.hpp"

namespace petra::data {

struct Dataset {
  Tensor images;  // N x C x H x W, f32
  std::vector<std::int32_t> labels;
  std::int64_t classes = 10;
  std::string split = "train";

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
};

inline constexpr std::int64_t kCifarRecordBytes = 1 + 3 * 32 * 32;
inline constexpr std::int64_t kCifarBatchBytes = 10000 * kCifarRecordBytes;

/// Reads data_batch_1..5.bin and test_batch.bin from `dir` (or its
/// cifar-10-batches-bin subdirectory). Pixels scaled to [0, 1].
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);

/// Parses one CIFAR-10 binary batch file.
Dataset read_cifar_batch(const std::filesystem::path& file);

/// Gaussian classes with isotropic noise `sigma`. Class means sit on a
/// regular simplex of radius separation * sigma around zero, spanned by
/// smooth per-channel patterns (constant and lowest cosine modes), so a
/// convolutional net with global pooling can separate them. Labels are
/// balanced and shuffled.
Dataset synth_dataset(std::int64_t classes, std::int64_t n, const Shape& sample_shape, Rng& rng,
                      double separation = 2.0, double sigma = 1.0);

/// The class means synth_dataset would draw for the same rng state.
Tensor synth_class_means(std::int64_t classes, const Shape& sample_shape, Rng& rng,
                         double separation = 2.0, double sigma = 1.0);

/// First n samples (already shuffled for synthetic data; CIFAR files are
/// in random order).
Dataset head(const Dataset& ds, std::int64_t n);
/// Samples [begin, end), clamped to the dataset.
Dataset slice(const Dataset& ds, std::int64_t begin, std::int64_t end);

/// Train and test sets drawn around the same class means.
std::pair<Dataset, Dataset> synth_split(std::int64_t classes, std::int64_t n_train, std::int64_t n_test,
                                        const Shape& sample_shape, Rng& rng, double separation = 2.0,
                                        double sigma = 1.0);

struct ChannelNorm {
  std::vector<double> mean;
  std::vector<double> std;
};

ChannelNorm channel_norm(const Dataset& ds);
Dataset normalized(const Dataset& ds, const ChannelNorm& norm);

struct AugmentConfig {
  bool hflip = false;
  int crop_pad = 0;  // random crop back to the original size after zero padding

  bool enabled() const { return hflip || crop_pad > 0; }
  static AugmentConfig cifar() { return {true, 4}; }
};

/// Flips and/or pad-crops each image independently.
Tensor augment(const Tensor& images, const AugmentConfig& config, Rng& rng);

struct Batch {
  Tensor images;
  std::vector<std::int32_t> labels;
  int epoch = 0;
  std::int64_t index = 0;
};

/// Random-access, reproducible batching: batch (epoch, i) depends only on
/// the seed, never on the order in which batches are requested.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::int64_t batch_size, AugmentConfig augment,
                std::uint64_t seed, bool shuffle = true, bool drop_last = true,
                DType dtype = DType::kF32);

  std::int64_t batches_per_epoch() const;
  Batch batch(int epoch, std::int64_t index);

 private:
  const std::vector<std::int64_t>& order(int epoch);

  const Dataset* ds_;
  std::int64_t batch_size_;
  AugmentConfig augment_;
  std::uint64_t seed_;
  bool shuffle_;
  bool drop_last_;
  DType dtype_;
  int cached_epoch_ = -1;
  std::vector<std::int64_t> order_;
};

}  // namespace petra::data
