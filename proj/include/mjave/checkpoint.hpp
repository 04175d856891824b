#pragma once

// Named-tensor checkpoint: one JSON header line (dimensions, ablation,
// labels, vocabulary, tensor manifest) followed by a little-endian float32
// payload. Save, load and forward are bit-identical at 32 bits.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mjave/dataio.hpp"
#include "mjave/errors.hpp"
#include "mjave/model.hpp"

namespace mjave {

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

// A trained model bundle. Multitask checkpoints carry one parameter set under
// the prefix "model"; the no-multitask variant carries two independently
// trained sets under "attr_model" and "value_model".
template <typename T>
struct Checkpoint {
  ModelConfig config;
  AblationConfig ablation;
  std::vector<std::string> labels;
  std::vector<std::string> vocab_tokens;
  std::vector<std::pair<std::string, ModelParams<T>>> models;

  bool multitask() const {
    return models.size() == 1 && models.front().first == "model";
  }

  const ModelParams<T>& model_for(const std::string& prefix) const {
    for (const auto& [name, params] : models)
      if (name == prefix) return params;
    throw DataError("checkpoint: no model named " + prefix);
  }

  // The parameter set answering each task.
  const ModelParams<T>& attribute_model() const {
    return multitask() ? models.front().second : model_for("attr_model");
  }
  const ModelParams<T>& value_model() const {
    return multitask() ? models.front().second : model_for("value_model");
  }
};

namespace detail {

inline nlohmann::ordered_json ablation_to_json(const AblationConfig& a) {
  nlohmann::ordered_json j;
  j["use_visual"] = a.use_visual;
  j["use_global_gate"] = a.use_global_gate;
  j["use_regional_gate"] = a.use_regional_gate;
  j["use_attr_feed"] = a.use_attr_feed;
  j["use_mtl"] = a.use_mtl;
  j["use_kl"] = a.use_kl;
  j["teacher_force_attributes"] = a.teacher_force_attributes;
  j["teacher_force_values"] = a.teacher_force_values;
  return j;
}

inline AblationConfig ablation_from_json(const nlohmann::ordered_json& j) {
  AblationConfig a;
  a.use_visual = j.at("use_visual").get<bool>();
  a.use_global_gate = j.at("use_global_gate").get<bool>();
  a.use_regional_gate = j.at("use_regional_gate").get<bool>();
  a.use_attr_feed = j.at("use_attr_feed").get<bool>();
  a.use_mtl = j.at("use_mtl").get<bool>();
  a.use_kl = j.at("use_kl").get<bool>();
  a.teacher_force_attributes = j.at("teacher_force_attributes").get<bool>();
  a.teacher_force_values = j.at("teacher_force_values").get<bool>();
  return a;
}

inline nlohmann::ordered_json dims_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["hidden"] = c.hidden;
  j["attention_dim"] = c.attention_dim;
  j["visual_dim"] = c.visual_dim;
  j["regions"] = c.regions;
  j["num_labels"] = c.num_labels;
  j["vocab_size"] = c.vocab_size;
  j["max_len"] = c.max_len;
  j["encoder_layers"] = c.encoder_layers;
  j["ff_hidden"] = c.ff_hidden;
  j["include_special_in_sums"] = c.include_special_in_sums;
  j["untie_visual_value"] = c.untie_visual_value;
  return j;
}

inline ModelConfig dims_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  c.hidden = j.at("hidden").get<std::size_t>();
  c.attention_dim = j.at("attention_dim").get<std::size_t>();
  c.visual_dim = j.at("visual_dim").get<std::size_t>();
  c.regions = j.at("regions").get<std::size_t>();
  c.num_labels = j.at("num_labels").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.ff_hidden = j.at("ff_hidden").get<std::size_t>();
  c.include_special_in_sums = j.at("include_special_in_sums").get<bool>();
  c.untie_visual_value = j.at("untie_visual_value").get<bool>();
  return c;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
  if (ckpt.models.empty()) throw DataError("checkpoint: nothing to save");

  nlohmann::ordered_json header;
  header["format"] = "mjave-checkpoint-v1";
  header["dims"] = detail::dims_to_json(ckpt.config);
  header["ablation"] = detail::ablation_to_json(ckpt.ablation);
  header["labels"] = ckpt.labels;
  header["vocab"] = ckpt.vocab_tokens;
  {
    nlohmann::ordered_json identity;
    identity["dims"] = header["dims"];
    identity["ablation"] = header["ablation"];
    identity["labels"] = header["labels"];
    identity["vocab"] = header["vocab"];
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(identity.dump())));
    header["config_hash"] = hex;
  }

  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::vector<float> payload;
  for (const auto& [prefix, params] : ckpt.models) {
    const_cast<ModelParams<T>&>(params).visit(
        [&](const std::string& name, Tensor<T>& t) {
          nlohmann::ordered_json entry;
          entry["name"] = prefix + "/" + name;
          entry["rows"] = t.rows();
          entry["cols"] = t.cols();
          entry["offset"] = payload.size() * sizeof(float);
          tensors.push_back(std::move(entry));
          for (const T v : t.value())
            payload.push_back(static_cast<float>(v));
        });
  }
  header["tensors"] = std::move(tensors);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << header.dump() << "\n";
  for (float f : payload) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string header_line;
  if (!std::getline(in, header_line))
    throw DataError("checkpoint " + path + ": missing header");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(header_line);
  } catch (const std::exception& e) {
    throw DataError("checkpoint " + path + ": bad header: " + e.what());
  }
  if (header.value("format", "") != "mjave-checkpoint-v1")
    throw DataError("checkpoint " + path + ": unknown format");

  Checkpoint<T> ckpt;
  try {
    ckpt.config = detail::dims_from_json(header.at("dims"));
    ckpt.ablation = detail::ablation_from_json(header.at("ablation"));
    ckpt.labels = header.at("labels").get<std::vector<std::string>>();
    ckpt.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }

  std::vector<char> payload(std::istreambuf_iterator<char>(in), {});
  if (payload.size() % sizeof(float) != 0)
    throw DataError("checkpoint " + path + ": payload is not float-aligned");

  struct Entry {
    std::size_t rows, cols, offset;
  };
  std::map<std::string, Entry> index;
  std::vector<std::string> prefixes;
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    index[name] = {t.at("rows").get<std::size_t>(),
                   t.at("cols").get<std::size_t>(),
                   t.at("offset").get<std::size_t>()};
    const auto slash = name.find('/');
    if (slash == std::string::npos)
      throw DataError("checkpoint " + path + ": unprefixed tensor " + name);
    const auto prefix = name.substr(0, slash);
    if (prefixes.empty() || prefixes.back() != prefix)
      prefixes.push_back(prefix);
  }

  std::size_t consumed = 0;
  for (const auto& prefix : prefixes) {
    ModelParams<T> params = ModelParams<T>::init(ckpt.config, 0);
    params.visit([&](const std::string& name, Tensor<T>& tensor) {
      const std::string full = prefix + "/" + name;
      const auto it = index.find(full);
      if (it == index.end())
        throw DataError("checkpoint " + path + ": missing tensor " + full);
      const Entry& e = it->second;
      if (e.rows != tensor.rows() || e.cols != tensor.cols())
        throw DataError("checkpoint " + path + ": tensor " + full +
                        " has unexpected shape");
      const std::size_t bytes = e.rows * e.cols * sizeof(float);
      if (e.offset + bytes > payload.size())
        throw DataError("checkpoint " + path + ": tensor " + full +
                        " overruns the payload");
      auto& value = tensor.mutable_value();
      for (std::size_t i = 0; i < e.rows * e.cols; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, payload.data() + e.offset + i * sizeof(float),
                    sizeof bits);
        value[i] = static_cast<T>(std::bit_cast<float>(bits));
      }
      tensor.zero_grad();
      ++consumed;
    });
    ckpt.models.emplace_back(prefix, std::move(params));
  }
  if (consumed != index.size())
    throw DataError("checkpoint " + path + ": unexpected extra tensors");
  return ckpt;
}

// Eval-time guard: a checkpoint only applies to data with the same scheme.
template <typename T>
void check_compatible(const Checkpoint<T>& ckpt, const Manifest& manifest) {
  if (ckpt.labels != manifest.labels)
    throw DataError("checkpoint/manifest label sets differ");
  if (ckpt.config.visual_dim != manifest.d_v ||
      ckpt.config.regions != manifest.k)
    throw DataError("checkpoint/manifest image dimensions differ");
  if (ckpt.config.max_len != manifest.max_len)
    throw DataError("checkpoint/manifest max_len differs");
}

}  // namespace mjave
