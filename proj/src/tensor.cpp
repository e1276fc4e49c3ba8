// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include "petra/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace petra {

namespace {

// c[m x n] (+)= a[m x k] * b[k x n], row-major. Every output accumulates
// over the inner index in increasing order, whatever the vector width or
// buffer alignment, so results are reproducible bit for bit.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  constexpr std::int64_t kBlock = 256;
  for (std::int64_t j0 = 0; j0 < n; j0 += kBlock) {
    const std::int64_t j1 = std::min(n, j0 + kBlock);
    for (std::int64_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (std::int64_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + p * n;
        for (std::int64_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void transpose_into(const T* a, T* out, std::int64_t m, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.dtype() != b.dtype()) {
    throw DTypeError(std::string(op) + ": dtype mismatch " +
                     to_string(a.dtype()) + " vs " + to_string(b.dtype()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

template <typename Fn>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fn fn) {
  require_same(a, b, op);
  return dispatch(a.dtype(), [&]<typename T>() {
    auto pa = a.data<T>();
    auto pb = b.data<T>();
    std::vector<T> out(pa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(pa[i], pb[i]);
    return Tensor(a.shape(), std::move(out));
  });
}

template <typename Fn>
Tensor unary(const Tensor& a, Fn fn) {
  return dispatch(a.dtype(), [&]<typename T>() {
    auto pa = a.data<T>();
    std::vector<T> out(pa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(pa[i]);
    return Tensor(a.shape(), std::move(out));
  });
}

struct ConvGeom {
  std::int64_t n, c, h, w, o, kh, kw, ho, wo;
};

ConvGeom conv_geom(const Shape& x, const Shape& k, Conv2dParams p,
                   const char* op) {
  if (x.size() != 4 || k.size() != 4) {
    throw ShapeError(std::string(op) + ": expected 4-D input and kernel, got " +
                     shape_str(x) + " and " + shape_str(k));
  }
  if (x[1] != k[1]) {
    throw ShapeError(std::string(op) + ": input channels of " + shape_str(x) +
                     " do not match kernel " + shape_str(k));
  }
  ConvGeom g{x[0], x[1], x[2], x[3], k[0], k[2], k[3], 0, 0};
  g.ho = conv_out_extent(g.h, g.kh, p.stride, p.padding);
  g.wo = conv_out_extent(g.w, g.kw, p.stride, p.padding);
  if (g.ho <= 0 || g.wo <= 0) {
    throw ShapeError(std::string(op) + ": kernel " + shape_str(k) +
                     " does not fit input " + shape_str(x));
  }
  return g;
}

// cols is (C*kh*kw) x (ho*wo), row-major.
template <typename T>
void im2col(const T* img, const ConvGeom& g, Conv2dParams p, T* cols) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * p.stride - p.padding + ki;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = img + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * p.stride - p.padding + kj;
            dst[ox] = (ix < 0 || ix >= g.w) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, Conv2dParams p, T* img) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * p.stride - p.padding + ki;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = img + (c * g.h + iy) * g.w;
          const T* src = row + oy * g.wo;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * p.stride - p.padding + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct PoolGeom {
  std::int64_t n, c, h, w, ho, wo;
};

PoolGeom pool_geom(const Shape& x, Pool2dParams p, const char* op) {
  if (x.size() != 4) {
    throw ShapeError(std::string(op) + ": expected 4-D input, got " +
                     shape_str(x));
  }
  PoolGeom g{x[0], x[1], x[2], x[3], 0, 0};
  g.ho = conv_out_extent(g.h, p.kernel, p.stride, p.padding);
  g.wo = conv_out_extent(g.w, p.kernel, p.stride, p.padding);
  if (g.ho <= 0 || g.wo <= 0) {
    throw ShapeError(std::string(op) + ": window does not fit " + shape_str(x));
  }
  return g;
}

}  // namespace

std::string to_string(DType dtype) {
  return dtype == DType::kF32 ? "f32" : "f64";
}

DType dtype_from_string(const std::string& name) {
  if (name == "f32") return DType::kF32;
  if (name == "f64") return DType::kF64;
  throw ConfigError("unknown dtype '" + name + "' (expected f32 or f64)");
}

std::size_t dtype_size(DType dtype) {
  return dtype == DType::kF32 ? sizeof(float) : sizeof(double);
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor() : Tensor(Shape{0}, std::vector<double>{}) {}

void Tensor::check_size() const {
  for (auto d : shape_) {
    if (d < 0) throw ShapeError("negative extent in " + shape_str(shape_));
  }
  const auto n = static_cast<std::size_t>(shape_numel(shape_));
  const std::size_t len = std::visit([](auto& v) { return v.size(); }, *storage_);
  if (n != len) {
    throw ShapeError("shape " + shape_str(shape_) + " needs " +
                     std::to_string(n) + " elements, buffer has " +
                     std::to_string(len));
  }
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return dispatch(dtype, [&]<typename T>() {
    return Tensor(std::move(shape), std::vector<T>(n, static_cast<T>(value)));
  });
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values,
                           DType dtype) {
  return dispatch(dtype, [&]<typename T>() {
    return Tensor(std::move(shape), std::vector<T>(values.begin(), values.end()));
  });
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values,
                           DType dtype) {
  return from_values(std::move(shape),
                     std::span<const double>(values.begin(), values.size()),
                     dtype);
}

std::int64_t Tensor::numel() const { return shape_numel(shape_); }

double Tensor::at(std::int64_t flat) const {
  return dispatch(dtype_, [&]<typename T>() {
    return static_cast<double>(data<T>()[static_cast<std::size_t>(flat)]);
  });
}

std::vector<double> Tensor::to_f64() const {
  return dispatch(dtype_, [&]<typename T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

Tensor Tensor::cast(DType dtype) const {
  if (dtype == dtype_) return *this;
  return dispatch(dtype_, [&]<typename S>() {
    auto src = data<S>();
    return dispatch(dtype, [&]<typename D>() {
      return Tensor(shape_, std::vector<D>(src.begin(), src.end()));
    });
  });
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

std::span<const std::byte> Tensor::bytes() const {
  return std::visit(
      [](auto& v) {
        return std::as_bytes(std::span(v.data(), v.size()));
      },
      *storage_);
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  auto a = bytes();
  auto b = other.bytes();
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size()) == 0;
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](auto x, auto y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](auto x, auto y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](auto x, auto y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
  return dispatch(a.dtype(), [&]<typename T>() {
    const T f = static_cast<T>(s);
    return unary(a, [f](T x) { return x * f; });
  });
}

Tensor axpy(const Tensor& a, double s, const Tensor& b) {
  require_same(a, b, "axpy");
  return dispatch(a.dtype(), [&]<typename T>() {
    const T f = static_cast<T>(s);
    return binary(a, b, "axpy", [f](T x, T y) { return x + f * y; });
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](auto v) { return v > 0 ? v : decltype(v)(0); });
}

Tensor relu_mask(const Tensor& x) {
  return unary(x, [](auto v) { return v > 0 ? decltype(v)(1) : decltype(v)(0); });
}

Tensor select_mask(const Tensor& mask, const Tensor& g) {
  return binary(mask, g, "select_mask",
                [](auto m, auto v) { return m != 0 ? v : decltype(v)(0); });
}

double sum(const Tensor& x) {
  return dispatch(x.dtype(), [&]<typename T>() {
    double acc = 0.0;
    for (T v : x.data<T>()) acc += static_cast<double>(v);
    return acc;
  });
}

double dot(const Tensor& a, const Tensor& b) {
  require_same(a, b, "dot");
  return dispatch(a.dtype(), [&]<typename T>() {
    auto pa = a.data<T>();
    auto pb = b.data<T>();
    double acc = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      acc += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
    }
    return acc;
  });
}

double max_abs(const Tensor& x) {
  return dispatch(x.dtype(), [&]<typename T>() {
    double m = 0.0;
    for (T v : x.data<T>()) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const auto va = a.to_f64();
  const auto vb = b.to_f64();
  double m = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
  return m;
}

double norm2(const Tensor& x) { return std::sqrt(dot(x, x)); }

bool all_finite(const Tensor& x) {
  return dispatch(x.dtype(), [&]<typename T>() {
    for (T v : x.data<T>()) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  });
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  if (a.dtype() != b.dtype()) throw DTypeError("matmul: dtype mismatch");
  return dispatch(a.dtype(), [&]<typename T>() {
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(static_cast<std::size_t>(m * n));
    gemm(a.data<T>().data(), b.data<T>().data(), out.data(), m, k, n, false);
    return Tensor(Shape{m, n}, std::move(out));
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  return dispatch(a.dtype(), [&]<typename T>() {
    const auto m = a.dim(0), n = a.dim(1);
    std::vector<T> out(static_cast<std::size_t>(m * n));
    transpose_into(a.data<T>().data(), out.data(), m, n);
    return Tensor(Shape{n, m}, std::move(out));
  });
}

Tensor identity(std::int64_t n, DType dtype) {
  return dispatch(dtype, [&]<typename T>() {
    std::vector<T> out(static_cast<std::size_t>(n * n), T(0));
    for (std::int64_t i = 0; i < n; ++i) out[i * n + i] = T(1);
    return Tensor(Shape{n, n}, std::move(out));
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  Tensor y = matmul(x, transpose(w));
  if (!bias.empty()) y = add_bias(y, bias);
  return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if ((x.rank() != 2 && x.rank() != 4) || bias.rank() != 1 ||
      bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: cannot broadcast " + shape_str(bias.shape()) +
                     " over " + shape_str(x.shape()));
  }
  return dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    auto pb = bias.data<T>();
    const std::int64_t n = x.dim(0), c = x.dim(1);
    const std::int64_t inner = x.numel() / (n * c);
    std::vector<T> out(px.begin(), px.end());
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        T* dst = out.data() + (i * c + ch) * inner;
        for (std::int64_t s = 0; s < inner; ++s) dst[s] += pb[ch];
      }
    }
    return Tensor(x.shape(), std::move(out));
  });
}

Tensor sum_to_channels(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("sum_to_channels: expected 2-D or 4-D, got " +
                     shape_str(x.shape()));
  }
  return dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    const std::int64_t n = x.dim(0), c = x.dim(1);
    const std::int64_t inner = x.numel() / std::max<std::int64_t>(1, n * c);
    std::vector<T> out(static_cast<std::size_t>(c), T(0));
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* src = px.data() + (i * c + ch) * inner;
        T acc = 0;
        for (std::int64_t s = 0; s < inner; ++s) acc += src[s];
        out[ch] += acc;
      }
    }
    return Tensor(Shape{c}, std::move(out));
  });
}

// ---------------------------------------------------------------------------

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride,
                             int padding) {
  if (stride <= 0) throw ShapeError("stride must be positive");
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, Conv2dParams p) {
  const ConvGeom g = conv_geom(x.shape(), kernel.shape(), p, "conv2d");
  if (x.dtype() != kernel.dtype()) throw DTypeError("conv2d: dtype mismatch");
  return dispatch(x.dtype(), [&]<typename T>() {
    const std::int64_t ckk = g.c * g.kh * g.kw;
    const std::int64_t plane = g.ho * g.wo;
    std::vector<T> out(static_cast<std::size_t>(g.n * g.o * plane));
    std::vector<T> cols(static_cast<std::size_t>(ckk * plane));
    const T* w = kernel.data<T>().data();
    const T* px = x.data<T>().data();
    for (std::int64_t i = 0; i < g.n; ++i) {
      im2col(px + i * g.c * g.h * g.w, g, p, cols.data());
      gemm(w, cols.data(), out.data() + i * g.o * plane, g.o, ckk, plane, false);
    }
    return Tensor(Shape{g.n, g.o, g.ho, g.wo}, std::move(out));
  });
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel,
                         const Shape& input_shape, Conv2dParams p) {
  const ConvGeom g = conv_geom(input_shape, kernel.shape(), p, "conv2d_input_grad");
  if (grad_out.shape() != Shape{g.n, g.o, g.ho, g.wo}) {
    throw ShapeError("conv2d_input_grad: gradient " + shape_str(grad_out.shape()) +
                     " does not match output of " + shape_str(input_shape));
  }
  return dispatch(kernel.dtype(), [&]<typename T>() {
    const std::int64_t ckk = g.c * g.kh * g.kw;
    const std::int64_t plane = g.ho * g.wo;
    std::vector<T> out(static_cast<std::size_t>(g.n * g.c * g.h * g.w), T(0));
    std::vector<T> cols(static_cast<std::size_t>(ckk * plane));
    std::vector<T> wt(static_cast<std::size_t>(ckk * g.o));
    transpose_into(kernel.data<T>().data(), wt.data(), g.o, ckk);
    const T* pg = grad_out.data<T>().data();
    for (std::int64_t i = 0; i < g.n; ++i) {
      gemm(wt.data(), pg + i * g.o * plane, cols.data(), ckk, g.o, plane, false);
      col2im(cols.data(), g, p, out.data() + i * g.c * g.h * g.w);
    }
    return Tensor(input_shape, std::move(out));
  });
}

Tensor conv2d_kernel_grad(const Tensor& grad_out, const Tensor& x,
                          const Shape& kernel_shape, Conv2dParams p) {
  const ConvGeom g = conv_geom(x.shape(), kernel_shape, p, "conv2d_kernel_grad");
  if (grad_out.shape() != Shape{g.n, g.o, g.ho, g.wo}) {
    throw ShapeError("conv2d_kernel_grad: gradient " + shape_str(grad_out.shape()) +
                     " does not match output of " + shape_str(x.shape()));
  }
  return dispatch(x.dtype(), [&]<typename T>() {
    const std::int64_t ckk = g.c * g.kh * g.kw;
    const std::int64_t plane = g.ho * g.wo;
    std::vector<T> out(static_cast<std::size_t>(g.o * ckk), T(0));
    std::vector<T> cols(static_cast<std::size_t>(ckk * plane));
    std::vector<T> colst(static_cast<std::size_t>(plane * ckk));
    const T* px = x.data<T>().data();
    const T* pg = grad_out.data<T>().data();
    for (std::int64_t i = 0; i < g.n; ++i) {
      im2col(px + i * g.c * g.h * g.w, g, p, cols.data());
      transpose_into(cols.data(), colst.data(), ckk, plane);
      gemm(pg + i * g.o * plane, colst.data(), out.data(), g.o, plane, ckk, true);
    }
    return Tensor(kernel_shape, std::move(out));
  });
}

Tensor avgpool2d(const Tensor& x, Pool2dParams p) {
  const PoolGeom g = pool_geom(x.shape(), p, "avgpool2d");
  return dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    std::vector<T> out(static_cast<std::size_t>(g.n * g.c * g.ho * g.wo));
    const T inv = T(1) / static_cast<T>(p.kernel * p.kernel);
    std::size_t o = 0;
    for (std::int64_t nc = 0; nc < g.n * g.c; ++nc) {
      const T* plane = px.data() + nc * g.h * g.w;
      for (std::int64_t oy = 0; oy < g.ho; ++oy) {
        for (std::int64_t ox = 0; ox < g.wo; ++ox) {
          T acc = 0;
          for (int ky = 0; ky < p.kernel; ++ky) {
            const std::int64_t iy = oy * p.stride - p.padding + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (int kx = 0; kx < p.kernel; ++kx) {
              const std::int64_t ix = ox * p.stride - p.padding + kx;
              if (ix >= 0 && ix < g.w) acc += plane[iy * g.w + ix];
            }
          }
          out[o++] = acc * inv;
        }
      }
    }
    return Tensor(Shape{g.n, g.c, g.ho, g.wo}, std::move(out));
  });
}

Tensor avgpool2d_grad(const Tensor& grad_out, const Shape& input_shape,
                      Pool2dParams p) {
  const PoolGeom g = pool_geom(input_shape, p, "avgpool2d_grad");
  return dispatch(grad_out.dtype(), [&]<typename T>() {
    auto pg = grad_out.data<T>();
    std::vector<T> out(static_cast<std::size_t>(shape_numel(input_shape)), T(0));
    const T inv = T(1) / static_cast<T>(p.kernel * p.kernel);
    std::size_t o = 0;
    for (std::int64_t nc = 0; nc < g.n * g.c; ++nc) {
      T* plane = out.data() + nc * g.h * g.w;
      for (std::int64_t oy = 0; oy < g.ho; ++oy) {
        for (std::int64_t ox = 0; ox < g.wo; ++ox) {
          const T v = pg[o++] * inv;
          for (int ky = 0; ky < p.kernel; ++ky) {
            const std::int64_t iy = oy * p.stride - p.padding + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (int kx = 0; kx < p.kernel; ++kx) {
              const std::int64_t ix = ox * p.stride - p.padding + kx;
              if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += v;
            }
          }
        }
      }
    }
    return Tensor(input_shape, std::move(out));
  });
}

Tensor maxpool2d(const Tensor& x, Pool2dParams p,
                 std::vector<std::int64_t>* argmax) {
  const PoolGeom g = pool_geom(x.shape(), p, "maxpool2d");
  return dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    const auto total = static_cast<std::size_t>(g.n * g.c * g.ho * g.wo);
    std::vector<T> out(total);
    if (argmax) argmax->assign(total, -1);
    std::size_t o = 0;
    for (std::int64_t nc = 0; nc < g.n * g.c; ++nc) {
      const std::int64_t base = nc * g.h * g.w;
      for (std::int64_t oy = 0; oy < g.ho; ++oy) {
        for (std::int64_t ox = 0; ox < g.wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (int ky = 0; ky < p.kernel; ++ky) {
            const std::int64_t iy = oy * p.stride - p.padding + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (int kx = 0; kx < p.kernel; ++kx) {
              const std::int64_t ix = ox * p.stride - p.padding + kx;
              if (ix < 0 || ix >= g.w) continue;
              const std::int64_t idx = base + iy * g.w + ix;
              // strict > keeps the first maximum in row-major order
              if (best_idx < 0 || px[idx] > best) {
                best = px[idx];
                best_idx = idx;
              }
            }
          }
          out[o] = best;
          if (argmax) (*argmax)[o] = best_idx;
          ++o;
        }
      }
    }
    return Tensor(Shape{g.n, g.c, g.ho, g.wo}, std::move(out));
  });
}

Tensor maxpool2d_grad(const Tensor& grad_out, const Shape& input_shape,
                      std::span<const std::int64_t> argmax) {
  if (static_cast<std::int64_t>(argmax.size()) != grad_out.numel()) {
    throw ShapeError("maxpool2d_grad: argmax size does not match gradient " +
                     shape_str(grad_out.shape()));
  }
  return dispatch(grad_out.dtype(), [&]<typename T>() {
    auto pg = grad_out.data<T>();
    std::vector<T> out(static_cast<std::size_t>(shape_numel(input_shape)), T(0));
    for (std::size_t i = 0; i < argmax.size(); ++i) out[argmax[i]] += pg[i];
    return Tensor(input_shape, std::move(out));
  });
}

Tensor global_avgpool(const Tensor& x) {
  require_rank(x, 4, "global_avgpool");
  return dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    const std::int64_t nc = x.dim(0) * x.dim(1);
    const std::int64_t hw = x.dim(2) * x.dim(3);
    std::vector<T> out(static_cast<std::size_t>(nc));
    const T inv = T(1) / static_cast<T>(hw);
    for (std::int64_t i = 0; i < nc; ++i) {
      T acc = 0;
      for (std::int64_t s = 0; s < hw; ++s) acc += px[i * hw + s];
      out[i] = acc * inv;
    }
    return Tensor(Shape{x.dim(0), x.dim(1)}, std::move(out));
  });
}

Tensor global_avgpool_grad(const Tensor& grad_out, const Shape& input_shape) {
  if (input_shape.size() != 4 ||
      grad_out.shape() != Shape{input_shape[0], input_shape[1]}) {
    throw ShapeError("global_avgpool_grad: gradient " +
                     shape_str(grad_out.shape()) + " vs input " +
                     shape_str(input_shape));
  }
  return dispatch(grad_out.dtype(), [&]<typename T>() {
    auto pg = grad_out.data<T>();
    const std::int64_t nc = input_shape[0] * input_shape[1];
    const std::int64_t hw = input_shape[2] * input_shape[3];
    std::vector<T> out(static_cast<std::size_t>(nc * hw));
    const T inv = T(1) / static_cast<T>(hw);
    for (std::int64_t i = 0; i < nc; ++i) {
      std::fill_n(out.data() + i * hw, hw, pg[i] * inv);
    }
    return Tensor(input_shape, std::move(out));
  });
}

// ---------------------------------------------------------------------------

Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t end) {
  if (x.rank() < 2 || begin < 0 || end > x.dim(1) || begin > end) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " + shape_str(x.shape()));
  }
  return dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    const std::int64_t n = x.dim(0), c = x.dim(1);
    const std::int64_t inner = c == 0 ? 0 : x.numel() / (n * c);
    const std::int64_t width = end - begin;
    std::vector<T> out(static_cast<std::size_t>(n * width * inner));
    for (std::int64_t i = 0; i < n; ++i) {
      std::copy_n(px.data() + (i * c + begin) * inner, width * inner,
                  out.data() + i * width * inner);
    }
    Shape shape = x.shape();
    shape[1] = width;
    return Tensor(std::move(shape), std::move(out));
  });
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x) {
  if (x.rank() < 2) {
    throw ShapeError("split_channels: expected rank >= 2, got " + shape_str(x.shape()));
  }
  const std::int64_t c = x.dim(1);
  if (c % 2 != 0) {
    throw ShapeError("split_channels: odd channel count in " + shape_str(x.shape()));
  }
  return {slice_channels(x, 0, c / 2), slice_channels(x, c / 2, c)};
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || a.rank() != b.rank() || a.dim(0) != b.dim(0) ||
      !std::equal(a.shape().begin() + 2, a.shape().end(), b.shape().begin() + 2)) {
    throw ShapeError("concat_channels: incompatible " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  if (a.dtype() != b.dtype()) throw DTypeError("concat_channels: dtype mismatch");
  return dispatch(a.dtype(), [&]<typename T>() {
    auto pa = a.data<T>();
    auto pb = b.data<T>();
    const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const std::int64_t inner = shape_numel(Shape(a.shape().begin() + 2, a.shape().end()));
    std::vector<T> out(static_cast<std::size_t>(n * (ca + cb) * inner));
    for (std::int64_t i = 0; i < n; ++i) {
      T* dst = out.data() + i * (ca + cb) * inner;
      std::copy_n(pa.data() + i * ca * inner, ca * inner, dst);
      std::copy_n(pb.data() + i * cb * inner, cb * inner, dst + ca * inner);
    }
    Shape shape = a.shape();
    shape[1] = ca + cb;
    return Tensor(std::move(shape), std::move(out));
  });
}

}  // namespace petra
