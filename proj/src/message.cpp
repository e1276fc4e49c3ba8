// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>

#include "petra/runtime.hpp"

namespace petra::runtime {

static_assert(std::endian::native == std::endian::little, "wire format assumes a little-endian host");

std::string to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::kForward: return "forward";
    case MessageKind::kBackward: return "backward";
    case MessageKind::kEndOfStream: return "end-of-stream";
  }
  return "?";
}

Message Message::forward(std::uint64_t id, Tensor x, std::vector<std::int32_t> labels, int epoch) {
  Message m;
  m.kind = MessageKind::kForward;
  m.micro_batch_id = id;
  m.tensors.push_back(std::move(x));
  m.labels = std::move(labels);
  m.epoch = epoch;
  return m;
}

Message Message::backward(std::uint64_t id, Tensor x, Tensor delta, int epoch) {
  Message m;
  m.kind = MessageKind::kBackward;
  m.micro_batch_id = id;
  m.tensors.push_back(std::move(x));
  m.tensors.push_back(std::move(delta));
  m.epoch = epoch;
  return m;
}

Message Message::end_of_stream(std::uint64_t id) {
  Message m;
  m.kind = MessageKind::kEndOfStream;
  m.micro_batch_id = id;
  return m;
}

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    raw(&v, sizeof(T));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::byte> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}
  template <typename T>
  T get() {
    T v{};
    raw(&v, sizeof(T));
    return v;
  }
  void raw(void* p, std::size_t n) {
    if (n > in_.size() - at_) {
      throw IoError("message truncated: need " + std::to_string(n) + " bytes at offset " + std::to_string(at_) +
                    " of " + std::to_string(in_.size()));
    }
    std::memcpy(p, in_.data() + at_, n);
    at_ += n;
  }
  bool done() const { return at_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - at_; }

 private:
  std::span<const std::byte> in_;
  std::size_t at_ = 0;
};

}  // namespace

std::vector<std::byte> encode(const Message& msg) {
  Writer w;
  w.put<std::uint8_t>(static_cast<std::uint8_t>(msg.kind));
  w.put<std::uint64_t>(msg.micro_batch_id);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(msg.tensors.size()));
  for (const auto& t : msg.tensors) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
    auto b = t.bytes();
    w.raw(b.data(), b.size());
  }
  w.put<std::int32_t>(msg.epoch);
  w.put<std::int64_t>(msg.sender_version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(msg.labels.size()));
  w.raw(msg.labels.data(), msg.labels.size() * sizeof(std::int32_t));
  return std::move(w.out);
}

Message decode(std::span<const std::byte> bytes) {
  Reader r(bytes);
  Message m;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 2) throw IoError("message: unknown kind " + std::to_string(kind));
  m.kind = static_cast<MessageKind>(kind);
  m.micro_batch_id = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto dt = r.get<std::uint8_t>();
    if (dt > 1) throw IoError("message: unknown dtype tag " + std::to_string(dt));
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::int64_t>(r.get<std::uint64_t>());
    const auto numel = static_cast<std::uint64_t>(shape_numel(shape));
    if (numel > r.remaining()) throw IoError("message: tensor " + shape_str(shape) + " exceeds payload");
    m.tensors.push_back(dispatch(static_cast<DType>(dt), [&]<typename T>() {
      std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
      r.raw(v.data(), v.size() * sizeof(T));
      return Tensor(shape, std::move(v));
    }));
  }
  m.epoch = r.get<std::int32_t>();
  m.sender_version = r.get<std::int64_t>();
  const auto labels = r.get<std::uint32_t>();
  if (labels > r.remaining() / sizeof(std::int32_t)) throw IoError("message: label block truncated");
  m.labels.resize(labels);
  r.raw(m.labels.data(), m.labels.size() * sizeof(std::int32_t));
  if (!r.done()) throw IoError("message: trailing bytes");
  return m;
}

}  // namespace petra::runtime
