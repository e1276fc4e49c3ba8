// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "petra/tensor.hpp"

namespace petra {

/// Counter-based generator: draw i is SplitMix64's finalizer applied to
/// seed + (i + 1) * 0x9E3779B97F4A7C15. The stream is a pure function of
/// (seed, counter), so equal seeds give equal streams on every platform.
/// Floating-point transforms (normal) go through libm and are only
/// bit-reproducible where libm is.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (uses two draws, no caching).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// An independent generator derived from this seed and a stream id.
  Rng fork(std::uint64_t stream) const;

  Tensor uniform_tensor(const Shape& shape, double lo, double hi, DType dtype);
  Tensor normal_tensor(const Shape& shape, double mean, double stddev, DType dtype);
  /// Fisher-Yates permutation of [0, n).
  std::vector<std::int64_t> permutation(std::int64_t n);

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace petra
