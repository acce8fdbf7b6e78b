#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npcl/error.hpp"
#include "npcl/lineval.hpp"
#include "npcl/model.hpp"

namespace npcl {

// Binary container, little-endian:
//   "NPCLCKPT" | u32 version | u64 len | JSON header (configs, run metadata)
//   | u32 tensor count | per tensor: u32 name len, name, u32 rank, u64 dims[rank],
//     u32 dtype (4 = f32, 8 = f64), raw values
// Values are stored bit-exactly.
inline constexpr char kCheckpointMagic[8] = {'N', 'P', 'C', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> values;
};

namespace detail {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require<data_error>(static_cast<bool>(in), "truncated checkpoint: " + path);
  return v;
}

inline void write_container(const std::string& path, const nlohmann::json& header,
                            const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  require<data_error>(static_cast<bool>(out), "cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(out, kCheckpointVersion);
  const std::string text = header.dump();
  put(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put(out, d);
    put(out, std::uint32_t{4});
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  require<data_error>(static_cast<bool>(out), "failed writing checkpoint: " + path);
}

inline std::vector<NamedTensor> read_container(const std::string& path, nlohmann::json& header) {
  std::ifstream in(path, std::ios::binary);
  require<data_error>(static_cast<bool>(in), "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  require<data_error>(in && std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0, "not a checkpoint file: " + path);
  const auto version = get<std::uint32_t>(in, path);
  require<data_error>(version == kCheckpointVersion, "unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(in, path);
  require<data_error>(len < (1ull << 30), "corrupt checkpoint header: " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  require<data_error>(static_cast<bool>(in), "truncated checkpoint: " + path);
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw data_error("corrupt checkpoint header in " + path + ": " + e.what());
  }
  const auto count = get<std::uint32_t>(in, path);
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    const auto name_len = get<std::uint32_t>(in, path);
    require<data_error>(name_len < 4096, "corrupt tensor name in " + path);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    const auto rank = get<std::uint32_t>(in, path);
    require<data_error>(rank <= 8, "corrupt tensor rank in " + path);
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(get<std::uint64_t>(in, path));
      n *= t.shape.back();
    }
    const auto dtype = get<std::uint32_t>(in, path);
    require<data_error>(dtype == 4, "unsupported tensor dtype in " + path);
    require<data_error>(n < (1ull << 32), "corrupt tensor size in " + path);
    t.values.resize(n);
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(float)));
    require<data_error>(static_cast<bool>(in), "truncated checkpoint: " + path);
  }
  return tensors;
}

}  // namespace detail

inline nlohmann::json to_json(const EncoderConfig& e) {
  return {{"preset", e.preset}, {"channels", e.channels}, {"feature_dim", e.feature_dim}, {"stride", e.stride}};
}

inline nlohmann::json to_json(const ProjectionConfig& p) {
  return {{"hidden_dim", p.hidden_dim}, {"output_dim", p.output_dim}};
}

// `meta` is stored alongside the model configuration (run config echo etc.).
inline void save_checkpoint(const std::string& path, const Model<float>& model, const nlohmann::json& meta = {}) {
  nlohmann::json header = {{"kind", "model"},
                           {"encoder", to_json(model.encoder_config())},
                           {"projection", to_json(model.projection_config())},
                           {"meta", meta}};
  std::vector<NamedTensor> tensors;
  for (const auto& p : model.params())
    tensors.push_back({p.name, {p.shape.begin(), p.shape.end()}, p.value});
  detail::write_container(path, header, tensors);
}

struct LoadedModel {
  Model<float> model;
  nlohmann::json meta;
};

inline LoadedModel load_checkpoint(const std::string& path) {
  nlohmann::json header;
  const auto tensors = detail::read_container(path, header);
  try {
    detail::require<data_error>(header.at("kind") == "model", "checkpoint does not hold a model: " + path);
    EncoderConfig enc;
    const auto& e = header.at("encoder");
    enc.preset = e.at("preset").get<std::string>();
    enc.channels = e.at("channels").get<std::vector<int>>();
    enc.feature_dim = e.at("feature_dim").get<int>();
    enc.stride = e.at("stride").get<int>();
    ProjectionConfig proj;
    proj.hidden_dim = header.at("projection").at("hidden_dim").get<int>();
    proj.output_dim = header.at("projection").at("output_dim").get<int>();
    LoadedModel out{Model<float>(enc, proj, 0), header.value("meta", nlohmann::json::object())};
    auto& params = out.model.params();
    detail::require<data_error>(params.size() == tensors.size(), "checkpoint tensor count mismatch: " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
      detail::require<data_error>(params[i].name == tensors[i].name &&
                                      std::vector<std::uint64_t>(params[i].shape.begin(), params[i].shape.end()) ==
                                          tensors[i].shape,
                                  "checkpoint tensor mismatch at " + tensors[i].name);
      params[i].value = tensors[i].values;
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed checkpoint header in " + path + ": " + e.what());
  }
}

// Fold classifiers of one linear evaluation.
inline void save_heads(const std::string& path, const std::vector<LinearHead<float>>& heads,
                       const nlohmann::json& meta = {}) {
  std::vector<NamedTensor> tensors;
  for (std::size_t f = 0; f < heads.size(); ++f) {
    const auto& h = heads[f];
    tensors.push_back({"head" + std::to_string(f) + ".weight", {h.weight.rows, h.weight.cols}, h.weight.data});
    tensors.push_back({"head" + std::to_string(f) + ".bias", {h.bias.size()}, h.bias});
  }
  detail::write_container(path, {{"kind", "heads"}, {"count", heads.size()}, {"meta", meta}}, tensors);
}

inline std::vector<LinearHead<float>> load_heads(const std::string& path) {
  nlohmann::json header;
  const auto tensors = detail::read_container(path, header);
  detail::require<data_error>(header.value("kind", "") == "heads", "file does not hold classifiers: " + path);
  detail::require<data_error>(tensors.size() % 2 == 0, "corrupt classifier file: " + path);
  std::vector<LinearHead<float>> heads;
  for (std::size_t i = 0; i < tensors.size(); i += 2) {
    const auto& w = tensors[i];
    const auto& b = tensors[i + 1];
    detail::require<data_error>(w.shape.size() == 2 && b.shape.size() == 1 && b.shape[0] == w.shape[0],
                                "corrupt classifier shapes: " + path);
    LinearHead<float> h(w.shape[0], w.shape[1]);
    h.weight.data = w.values;
    h.bias = b.values;
    heads.push_back(std::move(h));
  }
  return heads;
}

}  // namespace npcl
