// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include "petra/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace petra::data {

namespace fs = std::filesystem;

Dataset read_cifar_batch(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) {
    throw IoError("missing CIFAR-10 file " + file.string() + " (expected " +
                  std::to_string(kCifarBatchBytes) + " bytes)");
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(kCifarBatchBytes));
  is.read(reinterpret_cast<char*>(raw.data()), kCifarBatchBytes);
  const auto got = is.gcount();
  const bool extra = is.peek() != std::char_traits<char>::eof();
  if (got != kCifarBatchBytes || extra) {
    throw IoError("CIFAR-10 file " + file.string() + " has wrong size (expected " +
                  std::to_string(kCifarBatchBytes) + " bytes)");
  }
  constexpr std::int64_t n = 10000, px = 3 * 32 * 32;
  std::vector<float> pixels(static_cast<std::size_t>(n * px));
  Dataset ds;
  ds.labels.resize(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const unsigned char* rec = raw.data() + i * kCifarRecordBytes;
    if (rec[0] > 9) throw IoError(file.string() + ": label out of range in record " + std::to_string(i));
    ds.labels[i] = rec[0];
    for (std::int64_t p = 0; p < px; ++p) pixels[i * px + p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  ds.images = Tensor({n, 3, 32, 32}, std::move(pixels));
  return ds;
}

namespace {

Dataset concat(std::vector<Dataset> parts, const std::string& split) {
  Dataset out;
  out.split = split;
  std::vector<float> px;
  Shape shape = parts.front().images.shape();
  shape[0] = 0;
  for (auto& p : parts) {
    auto d = p.images.data<float>();
    px.insert(px.end(), d.begin(), d.end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    shape[0] += p.images.dim(0);
  }
  out.images = Tensor(shape, std::move(px));
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const fs::path& dir) {
  fs::path root = dir;
  if (!fs::exists(root / "data_batch_1.bin") && fs::exists(root / "cifar-10-batches-bin")) {
    root /= "cifar-10-batches-bin";
  }
  std::vector<Dataset> train;
  for (int b = 1; b <= 5; ++b) train.push_back(read_cifar_batch(root / ("data_batch_" + std::to_string(b) + ".bin")));
  std::vector<Dataset> test;
  test.push_back(read_cifar_batch(root / "test_batch.bin"));
  return {concat(std::move(train), "train"), concat(std::move(test), "test")};
}

// ---------------------------------------------------------------------------

Tensor synth_class_means(std::int64_t classes, const Shape& sample_shape, Rng& rng,
                         double separation, double sigma) {
  if (classes < 2) throw ConfigError("synth_dataset needs at least 2 classes");
  if (sample_shape.size() != 3) throw ShapeError("sample shape must be C x H x W, got " + shape_str(sample_shape));
  const std::int64_t c = sample_shape[0], h = sample_shape[1], w = sample_shape[2];
  const std::int64_t d = c * h * w;

  // Smooth basis: per channel, cos(pi u (y+.5)/H) cos(pi v (x+.5)/W) for u,v in {0,1}.
  std::vector<std::vector<double>> basis;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (int u = 0; u < 2; ++u) {
      for (int v = 0; v < 2; ++v) {
        if ((u == 1 && h == 1) || (v == 1 && w == 1)) continue;
        std::vector<double> b(static_cast<std::size_t>(d), 0.0);
        double nn = 0;
        for (std::int64_t y = 0; y < h; ++y) {
          for (std::int64_t x = 0; x < w; ++x) {
            const double val = std::cos(std::numbers::pi * u * (y + 0.5) / h) *
                               std::cos(std::numbers::pi * v * (x + 0.5) / w);
            b[(ch * h + y) * w + x] = val;
            nn += val * val;
          }
        }
        for (auto& e : b) e /= std::sqrt(nn);
        basis.push_back(std::move(b));
      }
    }
  }
  const auto m = static_cast<std::int64_t>(basis.size());
  if (classes - 1 > m) {
    throw ConfigError("synth_dataset: " + std::to_string(classes) + " classes need " +
                      std::to_string(classes - 1) + " smooth directions, shape " +
                      shape_str(sample_shape) + " offers " + std::to_string(m));
  }

  // classes-1 random orthonormal coefficient vectors in the m-dim basis.
  std::vector<std::vector<double>> q;
  while (static_cast<std::int64_t>(q.size()) < classes - 1) {
    std::vector<double> a(static_cast<std::size_t>(m));
    for (auto& e : a) e = rng.normal();
    for (const auto& p : q) {
      double proj = 0;
      for (std::int64_t i = 0; i < m; ++i) proj += a[i] * p[i];
      for (std::int64_t i = 0; i < m; ++i) a[i] -= proj * p[i];
    }
    double nn = 0;
    for (double e : a) nn += e * e;
    if (nn < 1e-12) continue;
    for (auto& e : a) e /= std::sqrt(nn);
    q.push_back(std::move(a));
  }

  // Regular simplex in R^{classes-1}: centred one-hot vectors of R^classes
  // projected onto an orthonormal basis of the sum-zero hyperplane.
  const double radius = separation * sigma;
  const auto k = classes;
  std::vector<std::vector<double>> hyper;  // k-1 vectors in R^k
  for (std::int64_t i = 1; i < k; ++i) {
    std::vector<double> e(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t j = 0; j < i; ++j) e[j] = 1.0;
    e[i] = -static_cast<double>(i);
    const double nn = std::sqrt(static_cast<double>(i * (i + 1)));
    for (auto& x : e) x /= nn;
    hyper.push_back(std::move(e));
  }
  const double vertex_norm = std::sqrt(static_cast<double>(k - 1) / k);

  std::vector<double> means(static_cast<std::size_t>(k * d), 0.0);
  for (std::int64_t cls = 0; cls < k; ++cls) {
    for (std::int64_t a = 0; a < k - 1; ++a) {
      const double coord = hyper[a][cls] / vertex_norm * radius;
      for (std::int64_t b = 0; b < m; ++b) {
        const double coef = coord * q[a][b];
        const auto& bb = basis[b];
        for (std::int64_t p = 0; p < d; ++p) means[cls * d + p] += coef * bb[p];
      }
    }
  }
  return Tensor({k, c, h, w}, std::move(means));
}

Dataset synth_dataset(std::int64_t classes, std::int64_t n, const Shape& sample_shape, Rng& rng,
                      double separation, double sigma) {
  if (n < classes) throw ConfigError("synth_dataset: n must be at least the class count");
  const Tensor means = synth_class_means(classes, sample_shape, rng, separation, sigma);
  const std::int64_t d = shape_numel(sample_shape);
  const auto mu = means.data<double>();

  Dataset ds;
  ds.classes = classes;
  ds.labels.resize(n);
  const auto order = rng.permutation(n);
  for (std::int64_t i = 0; i < n; ++i) ds.labels[order[i]] = static_cast<std::int32_t>(i % classes);

  std::vector<float> px(static_cast<std::size_t>(n * d));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t y = ds.labels[i];
    for (std::int64_t p = 0; p < d; ++p) {
      px[i * d + p] = static_cast<float>(mu[y * d + p] + sigma * rng.normal());
    }
  }
  Shape shape{n};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  ds.images = Tensor(shape, std::move(px));
  return ds;
}

Dataset slice(const Dataset& ds, std::int64_t begin, std::int64_t end) {
  end = std::min(end, ds.size());
  begin = std::clamp<std::int64_t>(begin, 0, end);
  const std::int64_t d = shape_numel(ds.sample_shape());
  auto src = ds.images.data<float>();
  Dataset out;
  out.classes = ds.classes;
  out.split = ds.split;
  out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + end);
  Shape shape = ds.images.shape();
  shape[0] = end - begin;
  out.images = Tensor(shape, std::vector<float>(src.begin() + begin * d, src.begin() + end * d));
  return out;
}

Dataset head(const Dataset& ds, std::int64_t n) { return slice(ds, 0, n); }

std::pair<Dataset, Dataset> synth_split(std::int64_t classes, std::int64_t n_train, std::int64_t n_test,
                                        const Shape& sample_shape, Rng& rng, double separation, double sigma) {
  Dataset all = synth_dataset(classes, n_train + n_test, sample_shape, rng, separation, sigma);
  Dataset train = slice(all, 0, n_train), test = slice(all, n_train, n_train + n_test);
  train.split = "train";
  test.split = "test";
  return {std::move(train), std::move(test)};
}

ChannelNorm channel_norm(const Dataset& ds) {
  const std::int64_t n = ds.images.dim(0), c = ds.images.dim(1);
  const std::int64_t hw = ds.images.dim(2) * ds.images.dim(3);
  auto px = ds.images.data<float>();
  ChannelNorm norm{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const double count = static_cast<double>(n * hw);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double s = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t p = 0; p < hw; ++p) s += px[(i * c + ch) * hw + p];
    }
    const double mean = s / count;
    double v = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t p = 0; p < hw; ++p) {
        const double e = px[(i * c + ch) * hw + p] - mean;
        v += e * e;
      }
    }
    norm.mean[ch] = mean;
    norm.std[ch] = std::sqrt(v / count);
    if (norm.std[ch] == 0) norm.std[ch] = 1;
  }
  return norm;
}

Dataset normalized(const Dataset& ds, const ChannelNorm& norm) {
  const std::int64_t n = ds.images.dim(0), c = ds.images.dim(1);
  const std::int64_t hw = ds.images.dim(2) * ds.images.dim(3);
  if (static_cast<std::int64_t>(norm.mean.size()) != c) throw ShapeError("channel norm does not match channels");
  auto src = ds.images.data<float>();
  std::vector<float> px(src.begin(), src.end());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double m = norm.mean[ch], s = norm.std[ch];
      for (std::int64_t p = 0; p < hw; ++p) {
        auto& e = px[(i * c + ch) * hw + p];
        e = static_cast<float>((e - m) / s);
      }
    }
  }
  Dataset out = ds;
  out.images = Tensor(ds.images.shape(), std::move(px));
  return out;
}

Tensor augment(const Tensor& images, const AugmentConfig& config, Rng& rng) {
  if (!config.enabled()) return images;
  return dispatch(images.dtype(), [&]<typename T>() {
    const std::int64_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    auto src = images.data<T>();
    std::vector<T> out(src.size(), T(0));
    const int pad = config.crop_pad;
    for (std::int64_t i = 0; i < n; ++i) {
      const bool flip = config.hflip && rng.below(2) == 1;
      std::int64_t dy = 0, dx = 0;
      if (pad > 0) {
        dy = static_cast<std::int64_t>(rng.below(2 * pad + 1)) - pad;
        dx = static_cast<std::int64_t>(rng.below(2 * pad + 1)) - pad;
      }
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* s = src.data() + (i * c + ch) * h * w;
        T* o = out.data() + (i * c + ch) * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
          const std::int64_t sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t fx = flip ? w - 1 - x : x;
            const std::int64_t sx = fx + dx;
            if (sx < 0 || sx >= w) continue;
            o[y * w + x] = s[sy * w + sx];
          }
        }
      }
    }
    return Tensor(images.shape(), std::move(out));
  });
}

// ---------------------------------------------------------------------------

BatchIterator::BatchIterator(const Dataset& ds, std::int64_t batch_size, AugmentConfig augment,
                             std::uint64_t seed, bool shuffle, bool drop_last, DType dtype)
    : ds_(&ds),
      batch_size_(batch_size),
      augment_(augment),
      seed_(seed),
      shuffle_(shuffle),
      drop_last_(drop_last),
      dtype_(dtype) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (ds.split != "train" && augment.enabled()) throw ConfigError("augmentation applies to the train split only");
}

std::int64_t BatchIterator::batches_per_epoch() const {
  const std::int64_t n = ds_->size();
  return drop_last_ ? n / batch_size_ : (n + batch_size_ - 1) / batch_size_;
}

const std::vector<std::int64_t>& BatchIterator::order(int epoch) {
  if (epoch != cached_epoch_) {
    if (shuffle_) {
      Rng rng = Rng(seed_).fork(static_cast<std::uint64_t>(epoch));
      order_ = rng.permutation(ds_->size());
    } else {
      order_.resize(static_cast<std::size_t>(ds_->size()));
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::int64_t>(i);
    }
    cached_epoch_ = epoch;
  }
  return order_;
}

Batch BatchIterator::batch(int epoch, std::int64_t index) {
  if (index < 0 || index >= batches_per_epoch()) throw Error("batch index out of range");
  const auto& ord = order(epoch);
  const std::int64_t begin = index * batch_size_;
  const std::int64_t end = std::min(begin + batch_size_, ds_->size());
  const std::int64_t b = end - begin;
  const Shape sample = ds_->sample_shape();
  const std::int64_t d = shape_numel(sample);
  auto src = ds_->images.data<float>();

  Batch out;
  out.epoch = epoch;
  out.index = index;
  out.labels.resize(b);
  std::vector<float> px(static_cast<std::size_t>(b * d));
  for (std::int64_t i = 0; i < b; ++i) {
    const std::int64_t s = ord[begin + i];
    out.labels[i] = ds_->labels[s];
    std::copy_n(src.begin() + s * d, d, px.begin() + i * d);
  }
  Shape shape{b};
  shape.insert(shape.end(), sample.begin(), sample.end());
  Tensor images(shape, std::move(px));
  if (augment_.enabled()) {
    Rng rng = Rng(seed_).fork(0x8000'0000ULL + static_cast<std::uint64_t>(epoch)).fork(static_cast<std::uint64_t>(index));
    images = augment(images, augment_, rng);
  }
  out.images = dtype_ == DType::kF32 ? images : images.cast(dtype_);
  return out;
}

}  // namespace petra::data
