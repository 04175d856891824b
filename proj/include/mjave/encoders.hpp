#pragma once

// Toy transformer text encoder (replaces a pretrained language model at desk
// scale) and the image feature pass-through. The text encoder is pre-norm
// with single-head self-attention; with zero layers it reduces to embedding
// lookup plus position add, which keeps a hand-checkable mode for tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mjave/dataio.hpp"
#include "mjave/errors.hpp"
#include "mjave/random.hpp"
#include "mjave/tensor.hpp"

namespace mjave {

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t max_positions = 48;  // max_len + 2
  std::size_t layers = 2;
  std::size_t ff_hidden = 128;
};

template <typename T>
struct EncoderLayerParams {
  Tensor<T> attn_norm_gain, attn_norm_bias;
  Tensor<T> attn_query, attn_key, attn_value, attn_output;  // [d x d]
  Tensor<T> ff_norm_gain, ff_norm_bias;
  Tensor<T> ff_in, ff_in_bias;    // [ff x d], [1 x ff]
  Tensor<T> ff_out, ff_out_bias;  // [d x ff], [1 x d]
};

template <typename T>
struct TextEncoderParams {
  TextEncoderConfig config;
  Tensor<T> token_embedding;     // [V x d]
  Tensor<T> position_embedding;  // [max_positions x d]
  std::vector<EncoderLayerParams<T>> layers;

  static TextEncoderParams init(const TextEncoderConfig& config, Rng& rng,
                                bool trainable = true) {
    if (config.vocab_size == 0 || config.hidden == 0 ||
        config.max_positions < 3)
      throw ConfigError("text encoder: vocab, hidden and positions required");
    TextEncoderParams p;
    p.config = config;
    const std::size_t d = config.hidden;
    p.token_embedding =
        normal_init<T>(config.vocab_size, d, rng, 0.02, trainable);
    p.position_embedding =
        normal_init<T>(config.max_positions, d, rng, 0.02, trainable);
    for (std::size_t l = 0; l < config.layers; ++l) {
      EncoderLayerParams<T> layer;
      layer.attn_norm_gain = ones<T>(1, d, trainable);
      layer.attn_norm_bias = zeros<T>(1, d, trainable);
      layer.attn_query = xavier_init<T>(d, d, rng, d, d, trainable);
      layer.attn_key = xavier_init<T>(d, d, rng, d, d, trainable);
      layer.attn_value = xavier_init<T>(d, d, rng, d, d, trainable);
      layer.attn_output = xavier_init<T>(d, d, rng, d, d, trainable);
      layer.ff_norm_gain = ones<T>(1, d, trainable);
      layer.ff_norm_bias = zeros<T>(1, d, trainable);
      layer.ff_in =
          xavier_init<T>(config.ff_hidden, d, rng, d, config.ff_hidden, trainable);
      layer.ff_in_bias = zeros<T>(1, config.ff_hidden, trainable);
      layer.ff_out =
          xavier_init<T>(d, config.ff_hidden, rng, config.ff_hidden, d, trainable);
      layer.ff_out_bias = zeros<T>(1, d, trainable);
      p.layers.push_back(std::move(layer));
    }
    return p;
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("encoder/token_embedding", token_embedding);
    fn("encoder/position_embedding", position_embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string base = "encoder/layer" + std::to_string(l) + "/";
      auto& layer = layers[l];
      fn(base + "attn_norm_gain", layer.attn_norm_gain);
      fn(base + "attn_norm_bias", layer.attn_norm_bias);
      fn(base + "attn_query", layer.attn_query);
      fn(base + "attn_key", layer.attn_key);
      fn(base + "attn_value", layer.attn_value);
      fn(base + "attn_output", layer.attn_output);
      fn(base + "ff_norm_gain", layer.ff_norm_gain);
      fn(base + "ff_norm_bias", layer.ff_norm_bias);
      fn(base + "ff_in", layer.ff_in);
      fn(base + "ff_in_bias", layer.ff_in_bias);
      fn(base + "ff_out", layer.ff_out);
      fn(base + "ff_out_bias", layer.ff_out_bias);
    }
  }
};

// Encode ids into one hidden vector per position. Row 0 is the [CLS]
// representation. Padded positions still receive rows; downstream consumers
// exclude them through the masks.
template <typename T>
Tensor<T> text_encode(const std::vector<int>& ids,
                      const std::vector<unsigned char>& attend,
                      const TextEncoderParams<T>& params) {
  if (ids.size() != attend.size())
    throw ShapeError("text_encode: ids and mask lengths differ");
  if (ids.size() > params.config.max_positions)
    throw ShapeError("text_encode: sequence of length " +
                     std::to_string(ids.size()) +
                     " exceeds the positional table (" +
                     std::to_string(params.config.max_positions) + ")");
  const std::size_t n = ids.size();
  const T inv_sqrt_d =
      T(1) / std::sqrt(static_cast<T>(params.config.hidden));

  Tensor<T> x = add(embed(params.token_embedding, ids),
                    slice_rows(params.position_embedding, 0, n));
  for (const auto& layer : params.layers) {
    Tensor<T> h = layer_norm(x, layer.attn_norm_gain, layer.attn_norm_bias);
    Tensor<T> q = matmul_nt(h, layer.attn_query);
    Tensor<T> k = matmul_nt(h, layer.attn_key);
    Tensor<T> v = matmul_nt(h, layer.attn_value);
    Tensor<T> alpha = masked_softmax(scale(matmul_nt(q, k), inv_sqrt_d), attend);
    Tensor<T> ctx = matmul_nt(matmul(alpha, v), layer.attn_output);
    x = add(x, ctx);

    Tensor<T> f = layer_norm(x, layer.ff_norm_gain, layer.ff_norm_bias);
    f = relu(add_rowvec(matmul_nt(f, layer.ff_in), layer.ff_in_bias));
    f = add_rowvec(matmul_nt(f, layer.ff_out), layer.ff_out_bias);
    x = add(x, f);
  }
  return x;
}

// Image features are inputs, not computed; optionally a learned linear
// projection maps them to another width.
struct ImageEncoderConfig {
  std::size_t d_v = 32;
  std::size_t regions = 9;
  std::size_t project_to = 0;  // 0 disables the projection

  std::size_t output_dim() const { return project_to == 0 ? d_v : project_to; }
};

template <typename T>
struct ImageEncoderParams {
  ImageEncoderConfig config;
  Tensor<T> projection;  // [project_to x d_v], defined only when enabled

  static ImageEncoderParams init(const ImageEncoderConfig& config, Rng& rng,
                                 bool trainable = true) {
    ImageEncoderParams p;
    p.config = config;
    if (config.project_to > 0)
      p.projection = xavier_init<T>(config.project_to, config.d_v, rng,
                                    config.d_v, config.project_to, trainable);
    return p;
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    if (config.project_to > 0) fn("image/projection", projection);
  }
};

template <typename T>
struct EncodedImage {
  Tensor<T> global;   // [1 x d_v']
  Tensor<T> regions;  // [K x d_v']
};

template <typename T>
EncodedImage<T> image_encode(const ImageFeatures& features,
                             const ImageEncoderParams<T>& params) {
  const auto& cfg = params.config;
  if (features.dim() != cfg.d_v)
    throw DataError("image_encode: feature dimension " +
                    std::to_string(features.dim()) + ", expected " +
                    std::to_string(cfg.d_v));
  if (features.num_regions() != cfg.regions)
    throw DataError("image_encode: " + std::to_string(features.num_regions()) +
                    " regions, expected " + std::to_string(cfg.regions));
  for (const auto& r : features.regions)
    if (r.size() != cfg.d_v)
      throw DataError("image_encode: region dimension " +
                      std::to_string(r.size()) + ", expected " +
                      std::to_string(cfg.d_v));

  std::vector<T> global_data(cfg.d_v);
  for (std::size_t i = 0; i < cfg.d_v; ++i)
    global_data[i] = static_cast<T>(features.global[i]);
  std::vector<T> region_data(cfg.regions * cfg.d_v);
  for (std::size_t r = 0; r < cfg.regions; ++r)
    for (std::size_t i = 0; i < cfg.d_v; ++i)
      region_data[r * cfg.d_v + i] = static_cast<T>(features.regions[r][i]);

  EncodedImage<T> out;
  out.global = Tensor<T>(1, cfg.d_v, std::move(global_data));
  out.regions = Tensor<T>(cfg.regions, cfg.d_v, std::move(region_data));
  if (cfg.project_to > 0) {
    out.global = matmul_nt(out.global, params.projection);
    out.regions = matmul_nt(out.regions, params.projection);
  }
  return out;
}

}  // namespace mjave
