// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <fstream>
#include <type_traits>

#include "json.hpp"
#include "petra/revnet.hpp"

namespace petra::rev {

using nlohmann::json;

namespace {

json layer_json(const nn::LayerSpec& l) {
  return {{"kind", nn::to_string(l.kind)}, {"name", l.name},       {"in", l.in_channels},
          {"out", l.out_channels},         {"kernel", l.kernel},   {"stride", l.stride},
          {"padding", l.padding},          {"bias", l.bias}};
}

nn::LayerSpec layer_from(const json& j) {
  nn::LayerSpec l;
  l.kind = nn::layer_kind_from_string(j.at("kind").get<std::string>());
  l.name = j.at("name").get<std::string>();
  l.in_channels = j.at("in").get<std::int64_t>();
  l.out_channels = j.at("out").get<std::int64_t>();
  l.kernel = j.at("kernel").get<int>();
  l.stride = j.at("stride").get<int>();
  l.padding = j.at("padding").get<int>();
  l.bias = j.at("bias").get<bool>();
  return l;
}

json layers_json(const std::vector<nn::LayerSpec>& ls) {
  json a = json::array();
  for (const auto& l : ls) a.push_back(layer_json(l));
  return a;
}

std::vector<nn::LayerSpec> layers_from(const json& a) {
  std::vector<nn::LayerSpec> out;
  for (const auto& j : a) out.push_back(layer_from(j));
  return out;
}

}  // namespace

std::string plan_to_json(const NetworkPlan& plan) {
  json stages = json::array();
  for (const auto& s : plan.stages) {
    stages.push_back({{"id", s.id},
                      {"kind", to_string(s.kind)},
                      {"block", s.block},
                      {"device", s.device},
                      {"residual", s.residual},
                      {"split", s.split},
                      {"main", layers_json(s.main)},
                      {"shortcut", layers_json(s.shortcut)},
                      {"side", layers_json(s.side)}});
  }
  json doc = {{"name", plan.name},
              {"dataset", plan.dataset},
              {"input", plan.input},
              {"classes", plan.classes},
              {"stages", stages}};
  return doc.dump(2);
}

NetworkPlan plan_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    NetworkPlan plan;
    plan.name = doc.at("name").get<std::string>();
    plan.dataset = doc.at("dataset").get<std::string>();
    plan.input = doc.at("input").get<Shape>();
    plan.classes = doc.at("classes").get<std::int64_t>();
    for (const auto& s : doc.at("stages")) {
      StageSpec spec;
      spec.id = s.at("id").get<int>();
      spec.kind = stage_kind_from_string(s.at("kind").get<std::string>());
      spec.block = s.at("block").get<std::string>();
      spec.device = s.at("device").get<int>();
      spec.residual = s.at("residual").get<bool>();
      spec.split = s.at("split").get<bool>();
      spec.main = layers_from(s.at("main"));
      spec.shortcut = layers_from(s.at("shortcut"));
      spec.side = layers_from(s.at("side"));
      plan.stages.push_back(std::move(spec));
    }
    return plan;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed network plan: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'T', 'R', 'A'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
struct Entry {
  std::string name;
  T* tensor;
};

// Parameters then running statistics, stage by stage.
template <typename Net>
auto checkpoint_entries(Net& net) {
  using T = std::remove_reference_t<decltype(net.stages[0].params[0])>;
  std::vector<Entry<T>> out;
  for (std::size_t j = 0; j < net.stages.size(); ++j) {
    auto& s = net.stages[j];
    for (std::size_t i = 0; i < s.params.size(); ++i) out.push_back({s.meta[i].name, &s.params[i]});
    for (std::size_t i = 0; i < s.bn.size(); ++i) {
      const std::string prefix = "stage" + std::to_string(j + 1) + ".bn_state" + std::to_string(i);
      out.push_back({prefix + ".running_mean", &s.bn[i].running_mean});
      out.push_back({prefix + ".running_var", &s.bn[i].running_var});
    }
  }
  return out;
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  auto entries = checkpoint_entries(net);
  if (entries.empty()) throw IoError("checkpoint: network has no tensors");
  const DType dtype = entries.front().tensor->dtype();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    if (e.tensor->dtype() != dtype) throw DTypeError("checkpoint: mixed dtypes");
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.tensor->rank()));
    for (auto d : e.tensor->shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    put<std::uint64_t>(os, offset);
    offset += e.tensor->nbytes();
  }
  for (const auto& e : entries) {
    auto b = e.tensor->bytes();
    os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, Network& net) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + " is not a checkpoint");
  if (get<std::uint32_t>(is) != kVersion) throw IoError("unsupported checkpoint version");
  const auto dtype = static_cast<DType>(get<std::uint8_t>(is));
  if (dtype != DType::kF32 && dtype != DType::kF64) throw IoError("checkpoint: bad dtype tag");
  const auto count = get<std::uint32_t>(is);

  auto entries = checkpoint_entries(net);
  if (count != entries.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, network has " +
                  std::to_string(entries.size()));
  }
  std::vector<Shape> shapes;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    Shape shape(get<std::uint32_t>(is));
    for (auto& d : shape) d = static_cast<std::int64_t>(get<std::uint64_t>(is));
    get<std::uint64_t>(is);  // offsets are implied by order
    if (name != entries[i].name || shape != entries[i].tensor->shape()) {
      throw IoError("checkpoint tensor '" + name + "' " + shape_str(shape) + " does not match '" +
                    entries[i].name + "' " + shape_str(entries[i].tensor->shape()));
    }
    shapes.push_back(std::move(shape));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    *entries[i].tensor = dispatch(dtype, [&]<typename T>() {
      std::vector<T> v(static_cast<std::size_t>(shape_numel(shapes[i])));
      is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
      if (!is) throw IoError("checkpoint truncated");
      return Tensor(shapes[i], std::move(v));
    });
  }
}

}  // namespace petra::rev
