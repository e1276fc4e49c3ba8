// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Dense immutable tensors and the deterministic kernels everything else is
// built on. Layout is row-major; 4-D activations are N x C x H x W.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "petra/errors.hpp"

namespace petra {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& name);
std::size_t dtype_size(DType dtype);

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
  static constexpr DType value = DType::kF32;
};
template <>
struct DTypeOf<double> {
  static constexpr DType value = DType::kF64;
};

/// Calls fn.template operator()<T>() with T matching the runtime dtype.
template <typename Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::kF32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

class Tensor {
 public:
  using Storage = std::variant<std::vector<float>, std::vector<double>>;

  /// An empty rank-1 tensor of zero elements.
  Tensor();

  template <typename T>
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)),
        dtype_(DTypeOf<T>::value),
        storage_(std::make_shared<const Storage>(std::move(data))) {
    check_size();
  }

  static Tensor zeros(Shape shape, DType dtype);
  static Tensor full(Shape shape, double value, DType dtype);
  /// Values are converted to the requested dtype.
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dtype);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dtype = DType::kF64);

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const;
  DType dtype() const { return dtype_; }
  std::size_t nbytes() const { return numel() * dtype_size(dtype_); }
  bool empty() const { return numel() == 0; }

  template <typename T>
  std::span<const T> data() const {
    const auto* v = std::get_if<std::vector<T>>(storage_.get());
    if (v == nullptr) throw DTypeError("tensor dtype is " + to_string(dtype_));
    return {v->data(), v->size()};
  }

  /// Element at flat index, widened to double.
  double at(std::int64_t flat) const;
  std::vector<double> to_f64() const;

  Tensor cast(DType dtype) const;
  /// Shares storage; numel must match.
  Tensor reshape(Shape shape) const;

  /// Raw little-endian bytes of the payload (host order is little-endian on
  /// all supported targets).
  std::span<const std::byte> bytes() const;

  bool bitwise_equal(const Tensor& other) const;

 private:
  void check_size() const;

  Shape shape_;
  DType dtype_ = DType::kF64;
  std::shared_ptr<const Storage> storage_;
};

// ---------------------------------------------------------------------------
// Elementwise and reduction kernels. Binary ops require identical shapes and
// dtypes; mismatches raise ShapeError naming both shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a + s * b
Tensor axpy(const Tensor& a, double s, const Tensor& b);
Tensor relu(const Tensor& x);
/// 1 where x > 0, else 0.
Tensor relu_mask(const Tensor& x);
/// Picks g where mask is nonzero and +0 elsewhere.
Tensor select_mask(const Tensor& mask, const Tensor& g);
double sum(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);
double norm2(const Tensor& x);
bool all_finite(const Tensor& x);

// ---------------------------------------------------------------------------
// Linear algebra. matmul takes 2-D operands [m,k] x [k,n].

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor identity(std::int64_t n, DType dtype);

/// y[n, o] = sum_i x[n, i] * w[o, i] + b[o]; bias may be empty.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
/// Adds a per-feature (2-D) or per-channel (4-D) bias broadcast over batch.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// Sums a 2-D or 4-D tensor down to its feature/channel axis.
Tensor sum_to_channels(const Tensor& x);

// ---------------------------------------------------------------------------
// Convolution and pooling over N x C x H x W.

struct Conv2dParams {
  int stride = 1;
  int padding = 0;
};

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride,
                             int padding);

/// Cross-correlation with kernel [O, C, kh, kw]; no bias.
Tensor conv2d(const Tensor& x, const Tensor& kernel, Conv2dParams p);
/// Gradient of conv2d with respect to its input.
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel,
                         const Shape& input_shape, Conv2dParams p);
/// Gradient of conv2d with respect to its kernel.
Tensor conv2d_kernel_grad(const Tensor& grad_out, const Tensor& x,
                          const Shape& kernel_shape, Conv2dParams p);

struct Pool2dParams {
  int kernel = 2;
  int stride = 2;
  int padding = 0;
};

Tensor avgpool2d(const Tensor& x, Pool2dParams p);
Tensor avgpool2d_grad(const Tensor& grad_out, const Shape& input_shape,
                      Pool2dParams p);

/// Max pooling; `argmax` receives, per output element, the flat input index
/// that won. Ties go to the first index in row-major window order.
Tensor maxpool2d(const Tensor& x, Pool2dParams p,
                 std::vector<std::int64_t>* argmax = nullptr);
Tensor maxpool2d_grad(const Tensor& grad_out, const Shape& input_shape,
                      std::span<const std::int64_t> argmax);

/// N x C x H x W -> N x C.
Tensor global_avgpool(const Tensor& x);
Tensor global_avgpool_grad(const Tensor& grad_out, const Shape& input_shape);

// ---------------------------------------------------------------------------
// Channel split/concat (axis 1).

/// Channels [begin, end) of a rank >= 2 tensor.
Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t end);
std::pair<Tensor, Tensor> split_channels(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace petra
