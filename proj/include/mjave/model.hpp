#pragma once

// The multimodal joint model: global-gated cross-modality fusion, the
// multilabel attribute head, and the regional-gated value tagging head,
// with ablation switches covering the text-only variant and every gate.

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mjave/dataio.hpp"
#include "mjave/encoders.hpp"
#include "mjave/errors.hpp"
#include "mjave/random.hpp"
#include "mjave/tensor.hpp"

namespace mjave {

struct AblationConfig {
  bool use_visual = true;
  bool use_global_gate = true;
  bool use_regional_gate = true;
  bool use_attr_feed = true;
  bool use_mtl = true;
  bool use_kl = true;
  bool teacher_force_attributes = false;
  bool teacher_force_values = false;

  void validate() const {
    if (!use_visual && (use_global_gate || use_regional_gate))
      throw ConfigError(
          "ablation: use_global_gate/use_regional_gate require use_visual");
  }

  static const std::vector<std::string>& key_names() {
    static const std::vector<std::string> keys = {
        "use_visual",       "use_global_gate",
        "use_regional_gate", "use_attr_feed",
        "use_mtl",          "use_kl",
        "teacher_force_attributes", "teacher_force_values"};
    return keys;
  }

  bool& field(const std::string& key) {
    if (key == "use_visual") return use_visual;
    if (key == "use_global_gate") return use_global_gate;
    if (key == "use_regional_gate") return use_regional_gate;
    if (key == "use_attr_feed") return use_attr_feed;
    if (key == "use_mtl") return use_mtl;
    if (key == "use_kl") return use_kl;
    if (key == "teacher_force_attributes") return teacher_force_attributes;
    if (key == "teacher_force_values") return teacher_force_values;
    std::ostringstream os;
    os << "ablation: unknown key '" << key << "'; valid keys:";
    for (const auto& k : key_names()) os << " " << k;
    throw ConfigError(os.str());
  }

  // Parse "use_kl=false,use_visual=true"; turning use_visual off also drops
  // the gates unless they were set explicitly in the same string.
  void apply(const std::string& spec) {
    bool gates_explicit = false;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos)
        throw ConfigError("ablation: expected key=value, got '" + item + "'");
      const std::string key = item.substr(0, eq);
      const std::string value = item.substr(eq + 1);
      bool parsed;
      if (value == "true" || value == "1")
        parsed = true;
      else if (value == "false" || value == "0")
        parsed = false;
      else
        throw ConfigError("ablation: value for " + key +
                          " must be true/false, got '" + value + "'");
      field(key) = parsed;
      if (key == "use_global_gate" || key == "use_regional_gate")
        gates_explicit = true;
    }
    if (!use_visual && !gates_explicit) {
      use_global_gate = false;
      use_regional_gate = false;
    }
    validate();
  }
};

struct ModelConfig {
  std::size_t hidden = 64;          // d, text hidden size
  std::size_t attention_dim = 200;  // d_a, attention vector size
  std::size_t visual_dim = 32;      // d_v
  std::size_t regions = 9;          // K
  std::size_t num_labels = 0;       // L
  std::size_t vocab_size = 0;
  std::size_t max_len = 46;
  std::size_t encoder_layers = 2;
  std::size_t ff_hidden = 128;
  bool include_special_in_sums = false;
  bool untie_visual_value = false;

  std::size_t num_tags() const { return 2 * num_labels + 1; }
  std::size_t positions() const { return max_len + 2; }

  void validate() const {
    if (num_labels == 0) throw ConfigError("model: num_labels required");
    if (vocab_size == 0) throw ConfigError("model: vocab_size required");
    if (hidden == 0 || attention_dim == 0 || visual_dim == 0 || regions == 0)
      throw ConfigError("model: dimensions must be positive");
    if (max_len < 3) throw ConfigError("model: max_len must be >= 3");
  }
};

// Cross-modality attention and the global gate.
template <typename T>
struct FusionParams {
  Tensor<T> text_query, text_key;      // [d_a x d]
  Tensor<T> text_value;                // [d x d]
  Tensor<T> visual_query;              // [d_a x d]
  Tensor<T> visual_key;                // [d_a x d_v]
  Tensor<T> visual_value;              // [d x d_v]
  Tensor<T> gate_text;                 // [1 x d]
  Tensor<T> gate_visual;               // [1 x d_v]
  Tensor<T> gate_bias;                 // [1 x 1]
};

// Attribute head, value head and the regional gate.
template <typename T>
struct HeadParams {
  Tensor<T> attr_from_text, attr_from_fused, attr_from_cls;  // [L x d]
  Tensor<T> tag_from_text, tag_from_fused;                   // [(2L+1) x d]
  Tensor<T> tag_from_attr;                                   // [(2L+1) x L]
  Tensor<T> tag_from_visual;                                 // [(2L+1) x d]
  Tensor<T> region_gate_attr;                                // [1 x L]
  Tensor<T> region_gate_visual;                              // [1 x d_v]
  Tensor<T> visual_value_untied;                             // [d x d_v]
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  TextEncoderParams<T> encoder;
  FusionParams<T> fusion;
  HeadParams<T> heads;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    p.config = config;
    Rng rng(seed);

    TextEncoderConfig tc;
    tc.vocab_size = config.vocab_size;
    tc.hidden = config.hidden;
    tc.max_positions = config.positions();
    tc.layers = config.encoder_layers;
    tc.ff_hidden = config.ff_hidden;
    p.encoder = TextEncoderParams<T>::init(tc, rng);

    const std::size_t d = config.hidden;
    const std::size_t da = config.attention_dim;
    const std::size_t dv = config.visual_dim;
    const std::size_t L = config.num_labels;
    const std::size_t tags = config.num_tags();

    auto& f = p.fusion;
    f.text_query = xavier_init<T>(da, d, rng, d, da);
    f.text_key = xavier_init<T>(da, d, rng, d, da);
    f.text_value = xavier_init<T>(d, d, rng, d, d);
    f.visual_query = xavier_init<T>(da, d, rng, d, da);
    f.visual_key = xavier_init<T>(da, dv, rng, dv, da);
    f.visual_value = xavier_init<T>(d, dv, rng, dv, d);
    f.gate_text = xavier_init<T>(1, d, rng, d, 1);
    f.gate_visual = xavier_init<T>(1, dv, rng, dv, 1);
    f.gate_bias = zeros<T>(1, 1);

    auto& h = p.heads;
    h.attr_from_text = xavier_init<T>(L, d, rng, d, L);
    h.attr_from_fused = xavier_init<T>(L, d, rng, d, L);
    h.attr_from_cls = xavier_init<T>(L, d, rng, d, L);
    h.tag_from_text = xavier_init<T>(tags, d, rng, d, tags);
    h.tag_from_fused = xavier_init<T>(tags, d, rng, d, tags);
    h.tag_from_attr = xavier_init<T>(tags, L, rng, L, tags);
    h.tag_from_visual = xavier_init<T>(tags, d, rng, d, tags);
    h.region_gate_attr = xavier_init<T>(1, L, rng, L, 1);
    h.region_gate_visual = xavier_init<T>(1, dv, rng, dv, 1);
    h.visual_value_untied = xavier_init<T>(d, dv, rng, dv, d);
    return p;
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    encoder.visit(fn);
    fn("fusion/text_query", fusion.text_query);
    fn("fusion/text_key", fusion.text_key);
    fn("fusion/text_value", fusion.text_value);
    fn("fusion/visual_query", fusion.visual_query);
    fn("fusion/visual_key", fusion.visual_key);
    fn("fusion/visual_value", fusion.visual_value);
    fn("fusion/gate_text", fusion.gate_text);
    fn("fusion/gate_visual", fusion.gate_visual);
    fn("fusion/gate_bias", fusion.gate_bias);
    fn("heads/attr_from_text", heads.attr_from_text);
    fn("heads/attr_from_fused", heads.attr_from_fused);
    fn("heads/attr_from_cls", heads.attr_from_cls);
    fn("heads/tag_from_text", heads.tag_from_text);
    fn("heads/tag_from_fused", heads.tag_from_fused);
    fn("heads/tag_from_attr", heads.tag_from_attr);
    fn("heads/tag_from_visual", heads.tag_from_visual);
    fn("heads/region_gate_attr", heads.region_gate_attr);
    fn("heads/region_gate_visual", heads.region_gate_visual);
    fn("heads/visual_value_untied", heads.visual_value_untied);
  }

  ModelParams clone() const {
    ModelParams copy = init(config, 0);
    std::vector<Tensor<T>*> src, dst;
    const_cast<ModelParams*>(this)->visit(
        [&](const std::string&, Tensor<T>& t) { src.push_back(&t); });
    copy.visit([&](const std::string&, Tensor<T>& t) { dst.push_back(&t); });
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i]->mutable_value() = src[i]->value();
      dst[i]->zero_grad();
    }
    return copy;
  }
};

template <typename T>
struct ForwardOutput {
  Tensor<T> attr_probs;     // [1 x L]
  Tensor<T> tag_probs;      // [P x (2L+1)]
  Tensor<T> global_gate;    // [P x 1]
  Tensor<T> regional_gate;  // [K x 1]
  Tensor<T> attn_text;      // [P x P]
  Tensor<T> attn_visual;    // [P x K]
  Tensor<T> fused;          // [P x d]
};

// Test hooks replacing computed gates with fixed tensors (used to verify the
// algebraic identity between disabled visual input and zeroed gates).
template <typename T>
struct ForwardOverrides {
  const Tensor<T>* global_gate = nullptr;
  const Tensor<T>* regional_gate = nullptr;
};

namespace detail {

template <typename T>
Tensor<T> row_mask_tensor(const std::vector<unsigned char>& mask) {
  std::vector<T> data(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) data[i] = mask[i] ? T(1) : T(0);
  return Tensor<T>(1, mask.size(), std::move(data));
}

}  // namespace detail

// Full forward pass over one encoded instance. `gold_attributes` (a 0/1 row
// [1 x L]) is required when the ablation teacher-forces attributes.
template <typename T>
ForwardOutput<T> forward(const Encoded& enc, const EncodedImage<T>& image,
                         const ModelParams<T>& params,
                         const AblationConfig& ablation,
                         const Tensor<T>* gold_attributes = nullptr,
                         const ForwardOverrides<T>* overrides = nullptr) {
  ablation.validate();
  const auto& cfg = params.config;
  if (enc.ids.size() != cfg.positions())
    throw ShapeError("forward: encoded length " +
                     std::to_string(enc.ids.size()) + ", expected " +
                     std::to_string(cfg.positions()));
  if (image.regions.rows() != cfg.regions ||
      image.regions.cols() != cfg.visual_dim ||
      image.global.cols() != cfg.visual_dim)
    throw ShapeError("forward: image features " + image.regions.shape_str() +
                     " do not match the model (K=" +
                     std::to_string(cfg.regions) +
                     ", d_v=" + std::to_string(cfg.visual_dim) + ")");
  if (ablation.teacher_force_attributes && gold_attributes == nullptr)
    throw ConfigError("forward: teacher_force_attributes needs gold labels");

  const T inv_sqrt_da =
      T(1) / std::sqrt(static_cast<T>(cfg.attention_dim));
  const std::vector<unsigned char> all_regions(cfg.regions, 1);

  ForwardOutput<T> out;
  Tensor<T> H = text_encode(enc.ids, enc.attend, params.encoder);

  // Cross-modality attention scores, one text row over text / region columns.
  Tensor<T> q_text = matmul_nt(H, params.fusion.text_query);
  Tensor<T> k_text = matmul_nt(H, params.fusion.text_key);
  out.attn_text = masked_softmax(
      scale(matmul_nt(q_text, k_text), inv_sqrt_da), enc.attend);
  Tensor<T> q_vis = matmul_nt(H, params.fusion.visual_query);
  Tensor<T> k_vis = matmul_nt(image.regions, params.fusion.visual_key);
  out.attn_visual = masked_softmax(
      scale(matmul_nt(q_vis, k_vis), inv_sqrt_da), all_regions);

  // Global gate: one scalar per token from its hidden state and the global
  // image vector.
  out.global_gate = sigmoid(add_scalar(
      add_scalar(matmul_nt(H, params.fusion.gate_text),
                 matmul_nt(image.global, params.fusion.gate_visual)),
      params.fusion.gate_bias));
  const Tensor<T>& global_gate_used =
      overrides && overrides->global_gate ? *overrides->global_gate
                                          : out.global_gate;

  // Fused representation: text attention context plus the gated visual
  // attention context.
  Tensor<T> text_ctx =
      matmul(out.attn_text, matmul_nt(H, params.fusion.text_value));
  Tensor<T> visual_proj_shared;
  if (ablation.use_visual) {
    visual_proj_shared = matmul_nt(image.regions, params.fusion.visual_value);
    Tensor<T> vis_ctx = matmul(out.attn_visual, visual_proj_shared);
    if (ablation.use_global_gate)
      vis_ctx = scale_rows(vis_ctx, global_gate_used);
    out.fused = add(text_ctx, vis_ctx);
  } else {
    out.fused = text_ctx;
  }

  // Attribute head over the sequence sums and the [CLS] row.
  const auto& sum_positions =
      cfg.include_special_in_sums ? enc.attend : enc.real;
  Tensor<T> sum_row = detail::row_mask_tensor<T>(sum_positions);
  Tensor<T> text_sum = matmul(sum_row, H);
  Tensor<T> fused_sum = matmul(sum_row, out.fused);
  Tensor<T> cls_row = slice_rows(H, 0, 1);
  Tensor<T> attr_logits =
      add(add(matmul_nt(text_sum, params.heads.attr_from_text),
              matmul_nt(fused_sum, params.heads.attr_from_fused)),
          matmul_nt(cls_row, params.heads.attr_from_cls));
  out.attr_probs = sigmoid(attr_logits);

  const Tensor<T>& attr_feed = ablation.teacher_force_attributes
                                   ? *gold_attributes
                                   : out.attr_probs;

  // Regional gate: one scalar per region from the attribute scores and the
  // region's own features.
  out.regional_gate = sigmoid(add_scalar(
      matmul_nt(image.regions, params.heads.region_gate_visual),
      matmul_nt(attr_feed, params.heads.region_gate_attr)));
  const Tensor<T>& regional_gate_used =
      overrides && overrides->regional_gate ? *overrides->regional_gate
                                            : out.regional_gate;

  // Value head: per-token tag logits from the hidden state, the fused state,
  // the attribute feed, and the regionally gated visual context.
  Tensor<T> tag_logits =
      add(matmul_nt(H, params.heads.tag_from_text),
          matmul_nt(out.fused, params.heads.tag_from_fused));
  if (ablation.use_attr_feed)
    tag_logits = add_rowvec(
        tag_logits, matmul_nt(attr_feed, params.heads.tag_from_attr));
  if (ablation.use_visual) {
    Tensor<T> value_proj = cfg.untie_visual_value
                               ? matmul_nt(image.regions,
                                           params.heads.visual_value_untied)
                               : visual_proj_shared;
    if (ablation.use_regional_gate)
      value_proj = scale_rows(value_proj, regional_gate_used);
    Tensor<T> value_ctx = matmul(out.attn_visual, value_proj);
    tag_logits =
        add(tag_logits, matmul_nt(value_ctx, params.heads.tag_from_visual));
  }
  out.tag_probs = softmax_rows(tag_logits);
  return out;
}

// 0/1 row tensor of the gold attribute set.
template <typename T>
Tensor<T> attributes_to_row(const std::vector<int>& attributes,
                            std::size_t num_labels) {
  std::vector<T> data(num_labels, T(0));
  for (int label : attributes) {
    if (label < 0 || static_cast<std::size_t>(label) >= num_labels)
      throw DataError("attribute label index " + std::to_string(label) +
                      " out of range");
    data[static_cast<std::size_t>(label)] = T(1);
  }
  return Tensor<T>(1, num_labels, std::move(data));
}

// An instance readied for the model: encoded ids/masks, image tensors, the
// gold attribute row and the padded gold tag sequence.
template <typename T>
struct PreparedInstance {
  const Instance* source = nullptr;
  Encoded enc;
  EncodedImage<T> image;
  Tensor<T> gold_attr_row;
  std::vector<int> gold_tags_padded;
};

template <typename T>
PreparedInstance<T> prepare_instance(const Instance& instance,
                                     const Vocabulary& vocab,
                                     const ModelConfig& config) {
  ImageEncoderConfig ic;
  ic.d_v = config.visual_dim;
  ic.regions = config.regions;
  ImageEncoderParams<T> identity;
  identity.config = ic;

  PreparedInstance<T> p;
  p.source = &instance;
  p.enc = encode(instance, vocab, config.max_len);
  p.image = image_encode(instance.image, identity);
  p.gold_attr_row = attributes_to_row<T>(instance.attributes, config.num_labels);
  p.gold_tags_padded = p.enc.tags;
  return p;
}

template <typename T>
std::vector<PreparedInstance<T>> prepare_instances(
    const std::vector<Instance>& instances, const Vocabulary& vocab,
    const ModelConfig& config) {
  std::vector<PreparedInstance<T>> out;
  out.reserve(instances.size());
  for (const auto& inst : instances)
    out.push_back(prepare_instance<T>(inst, vocab, config));
  return out;
}

}  // namespace mjave
