#pragma once

// Independent straight-loop re-implementation of the full forward pass and
// losses, used as the oracle the graph-based model is checked against. All
// math here is plain double arithmetic on flat vectors; nothing is shared
// with the production code path except the parameter values themselves and
// pinned constants (layer-norm epsilon, probability floors).

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mjave/dataio.hpp"
#include "mjave/model.hpp"

namespace refmodel {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

using ParamMap = std::map<std::string, Mat>;

inline ParamMap extract_params(mjave::ModelParams<double>& params) {
  ParamMap out;
  params.visit([&](const std::string& name, mjave::Tensor<double>& t) {
    Mat m(t.rows(), t.cols());
    m.v = t.value();
    out[name] = std::move(m);
  });
  return out;
}

// y = x * w^T for weights stored [out x in].
inline Mat apply_weight(const Mat& x, const Mat& w) {
  Mat y(x.rows, w.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t o = 0; o < w.rows; ++o) {
      double acc = 0.0;
      for (std::size_t p = 0; p < x.cols; ++p)
        acc += x.at(i, p) * w.at(o, p);
      y.at(i, o) = acc;
    }
  return y;
}

inline double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Softmax without max subtraction: independent of the stabilized production
// form, adequate for toy-scale logits.
inline void softmax_masked_rows(Mat& m, const std::vector<unsigned char>& mask) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j)
      if (mask[j]) denom += std::exp(m.at(i, j));
    for (std::size_t j = 0; j < m.cols; ++j)
      m.at(i, j) = mask[j] ? std::exp(m.at(i, j)) / denom : 0.0;
  }
}

inline Mat layer_norm_rows(const Mat& x, const Mat& gain, const Mat& bias,
                           double eps = 1e-5) {
  Mat y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(x.cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols; ++j)
      y.at(i, j) = gain.v[j] * (x.at(i, j) - mean) * inv + bias.v[j];
  }
  return y;
}

inline Mat ref_text_encode(const std::vector<int>& ids,
                           const std::vector<unsigned char>& attend,
                           const ParamMap& p, std::size_t layers,
                           std::size_t hidden) {
  const Mat& tok = p.at("encoder/token_embedding");
  const Mat& pos = p.at("encoder/position_embedding");
  const std::size_t n = ids.size();
  Mat x(n, hidden);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < hidden; ++j)
      x.at(i, j) = tok.at(static_cast<std::size_t>(ids[i]), j) + pos.at(i, j);

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = "encoder/layer" + std::to_string(l) + "/";
    Mat h = layer_norm_rows(x, p.at(base + "attn_norm_gain"),
                            p.at(base + "attn_norm_bias"));
    Mat q = apply_weight(h, p.at(base + "attn_query"));
    Mat k = apply_weight(h, p.at(base + "attn_key"));
    Mat v = apply_weight(h, p.at(base + "attn_value"));
    Mat scores(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t d = 0; d < hidden; ++d)
          acc += q.at(i, d) * k.at(j, d);
        scores.at(i, j) = acc * inv_sqrt_d;
      }
    softmax_masked_rows(scores, attend);
    Mat mixed(n, hidden);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < hidden; ++d) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          acc += scores.at(i, j) * v.at(j, d);
        mixed.at(i, d) = acc;
      }
    Mat ctx = apply_weight(mixed, p.at(base + "attn_output"));
    for (std::size_t i = 0; i < n * hidden; ++i) x.v[i] += ctx.v[i];

    Mat f = layer_norm_rows(x, p.at(base + "ff_norm_gain"),
                            p.at(base + "ff_norm_bias"));
    Mat f1 = apply_weight(f, p.at(base + "ff_in"));
    const Mat& b1 = p.at(base + "ff_in_bias");
    for (std::size_t i = 0; i < f1.rows; ++i)
      for (std::size_t j = 0; j < f1.cols; ++j) {
        const double z = f1.at(i, j) + b1.v[j];
        f1.at(i, j) = z > 0.0 ? z : 0.0;
      }
    Mat f2 = apply_weight(f1, p.at(base + "ff_out"));
    const Mat& b2 = p.at(base + "ff_out_bias");
    for (std::size_t i = 0; i < f2.rows; ++i)
      for (std::size_t j = 0; j < f2.cols; ++j)
        x.at(i, j) += f2.at(i, j) + b2.v[j];
  }
  return x;
}

struct RefForward {
  std::vector<double> attr_probs;              // L
  Mat tag_probs;                               // P x (2L+1)
  std::vector<double> global_gate;             // P
  std::vector<double> regional_gate;           // K
  Mat attn_text;                               // P x P
  Mat attn_visual;                             // P x K
  Mat fused;                                   // P x d
};

inline RefForward ref_forward(const mjave::Encoded& enc,
                              const mjave::ImageFeatures& image,
                              const ParamMap& p,
                              const mjave::ModelConfig& cfg,
                              const mjave::AblationConfig& ab,
                              const std::vector<double>* gold_attr = nullptr) {
  const std::size_t P = enc.ids.size();
  const std::size_t d = cfg.hidden;
  const std::size_t K = cfg.regions;
  const std::size_t dv = cfg.visual_dim;
  const std::size_t L = cfg.num_labels;
  const std::size_t tags = 2 * L + 1;

  Mat H = ref_text_encode(enc.ids, enc.attend, p, cfg.encoder_layers, d);
  Mat regions(K, dv);
  for (std::size_t r = 0; r < K; ++r)
    for (std::size_t j = 0; j < dv; ++j)
      regions.at(r, j) = image.regions[r][j];

  RefForward out;
  const double inv_sqrt_da =
      1.0 / std::sqrt(static_cast<double>(cfg.attention_dim));

  // Text self attention over the fused space.
  Mat q_text = apply_weight(H, p.at("fusion/text_query"));
  Mat k_text = apply_weight(H, p.at("fusion/text_key"));
  out.attn_text = Mat(P, P);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < P; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < q_text.cols; ++a)
        acc += q_text.at(i, a) * k_text.at(j, a);
      out.attn_text.at(i, j) = acc * inv_sqrt_da;
    }
  softmax_masked_rows(out.attn_text, enc.attend);

  // Text-to-region attention.
  Mat q_vis = apply_weight(H, p.at("fusion/visual_query"));
  Mat k_vis = apply_weight(regions, p.at("fusion/visual_key"));
  out.attn_visual = Mat(P, K);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t r = 0; r < K; ++r) {
      double acc = 0.0;
      for (std::size_t a = 0; a < q_vis.cols; ++a)
        acc += q_vis.at(i, a) * k_vis.at(r, a);
      out.attn_visual.at(i, r) = acc * inv_sqrt_da;
    }
  softmax_masked_rows(out.attn_visual, std::vector<unsigned char>(K, 1));

  // Global gate per token.
  const Mat& gate_text = p.at("fusion/gate_text");
  const Mat& gate_visual = p.at("fusion/gate_visual");
  double gate_img = p.at("fusion/gate_bias").v[0];
  for (std::size_t j = 0; j < dv; ++j)
    gate_img += image.global[j] * gate_visual.v[j];
  out.global_gate.resize(P);
  for (std::size_t i = 0; i < P; ++i) {
    double acc = gate_img;
    for (std::size_t j = 0; j < d; ++j) acc += H.at(i, j) * gate_text.v[j];
    out.global_gate[i] = ref_sigmoid(acc);
  }

  // Fused states.
  Mat v_text = apply_weight(H, p.at("fusion/text_value"));
  out.fused = Mat(P, d);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < P; ++j)
        acc += out.attn_text.at(i, j) * v_text.at(j, c);
      out.fused.at(i, c) = acc;
    }
  Mat v_regions = apply_weight(regions, p.at("fusion/visual_value"));
  if (ab.use_visual) {
    for (std::size_t i = 0; i < P; ++i) {
      const double g = ab.use_global_gate ? out.global_gate[i] : 1.0;
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < K; ++r)
          acc += out.attn_visual.at(i, r) * v_regions.at(r, c);
        out.fused.at(i, c) += g * acc;
      }
    }
  }

  // Attribute head.
  const auto& mask = cfg.include_special_in_sums ? enc.attend : enc.real;
  std::vector<double> text_sum(d, 0.0), fused_sum(d, 0.0);
  for (std::size_t i = 0; i < P; ++i)
    if (mask[i])
      for (std::size_t c = 0; c < d; ++c) {
        text_sum[c] += H.at(i, c);
        fused_sum[c] += out.fused.at(i, c);
      }
  const Mat& a_text = p.at("heads/attr_from_text");
  const Mat& a_fused = p.at("heads/attr_from_fused");
  const Mat& a_cls = p.at("heads/attr_from_cls");
  out.attr_probs.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c)
      acc += text_sum[c] * a_text.at(l, c) + fused_sum[c] * a_fused.at(l, c) +
             H.at(0, c) * a_cls.at(l, c);
    out.attr_probs[l] = ref_sigmoid(acc);
  }

  const std::vector<double>& attr_feed =
      ab.teacher_force_attributes ? *gold_attr : out.attr_probs;

  // Regional gate per region.
  const Mat& rg_attr = p.at("heads/region_gate_attr");
  const Mat& rg_visual = p.at("heads/region_gate_visual");
  double rg_from_attr = 0.0;
  for (std::size_t l = 0; l < L; ++l) rg_from_attr += attr_feed[l] * rg_attr.v[l];
  out.regional_gate.resize(K);
  for (std::size_t r = 0; r < K; ++r) {
    double acc = rg_from_attr;
    for (std::size_t j = 0; j < dv; ++j)
      acc += regions.at(r, j) * rg_visual.v[j];
    out.regional_gate[r] = ref_sigmoid(acc);
  }

  // Value head.
  Mat logits = apply_weight(H, p.at("heads/tag_from_text"));
  Mat from_fused = apply_weight(out.fused, p.at("heads/tag_from_fused"));
  for (std::size_t i = 0; i < P * tags; ++i) logits.v[i] += from_fused.v[i];
  if (ab.use_attr_feed) {
    const Mat& t_attr = p.at("heads/tag_from_attr");
    for (std::size_t t = 0; t < tags; ++t) {
      double acc = 0.0;
      for (std::size_t l = 0; l < L; ++l) acc += attr_feed[l] * t_attr.at(t, l);
      for (std::size_t i = 0; i < P; ++i) logits.at(i, t) += acc;
    }
  }
  if (ab.use_visual) {
    Mat value_proj = cfg.untie_visual_value
                         ? apply_weight(regions, p.at("heads/visual_value_untied"))
                         : v_regions;
    if (ab.use_regional_gate)
      for (std::size_t r = 0; r < K; ++r)
        for (std::size_t c = 0; c < value_proj.cols; ++c)
          value_proj.at(r, c) *= out.regional_gate[r];
    Mat value_ctx(P, value_proj.cols);
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t c = 0; c < value_proj.cols; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < K; ++r)
          acc += out.attn_visual.at(i, r) * value_proj.at(r, c);
        value_ctx.at(i, c) = acc;
      }
    Mat from_visual = apply_weight(value_ctx, p.at("heads/tag_from_visual"));
    for (std::size_t i = 0; i < P * tags; ++i) logits.v[i] += from_visual.v[i];
  }
  softmax_masked_rows(logits, std::vector<unsigned char>(tags, 1));
  out.tag_probs = std::move(logits);
  return out;
}

// Per-label score from the tag distribution: half the sum of the best B- and
// best I- probability over the selected rows.
inline std::vector<double> ref_map_value_to_attribute(
    const Mat& tag_probs, const std::vector<unsigned char>& positions,
    std::size_t num_labels) {
  std::vector<double> mapped(num_labels, 0.0);
  for (std::size_t l = 0; l < num_labels; ++l) {
    double best_b = -1.0, best_i = -1.0;
    for (std::size_t r = 0; r < tag_probs.rows; ++r) {
      if (!positions[r]) continue;
      best_b = std::max(best_b, tag_probs.at(r, 1 + 2 * l));
      best_i = std::max(best_i, tag_probs.at(r, 2 + 2 * l));
    }
    mapped[l] = 0.5 * (best_b + best_i);
  }
  return mapped;
}

inline double ref_bce(const std::vector<double>& probs,
                      const std::vector<double>& gold) {
  const double eps = 1e-12;
  double acc = 0.0;
  for (std::size_t l = 0; l < probs.size(); ++l) {
    const double p = std::min(std::max(probs[l], eps), 1.0 - eps);
    acc += gold[l] * std::log(p) + (1.0 - gold[l]) * std::log(1.0 - p);
  }
  return -acc / static_cast<double>(probs.size());
}

inline double ref_nll(const Mat& tag_probs, const std::vector<int>& tags,
                      const std::vector<unsigned char>& positions) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < tag_probs.rows; ++i) {
    if (!positions[i]) continue;
    acc += std::log(
        std::max(tag_probs.at(i, static_cast<std::size_t>(tags[i])), 1e-12));
    ++count;
  }
  return -acc / static_cast<double>(count);
}

inline double ref_kl(const std::vector<double>& a,
                     const std::vector<double>& m) {
  double acc = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l)
    acc += a[l] * (std::log(std::max(a[l], 1e-12)) -
                   std::log(std::max(m[l], 1e-12)));
  return acc;
}

}  // namespace refmodel
