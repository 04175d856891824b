#pragma once

// Dataset evaluation, the adversarial image-awareness protocol (deranged
// image assignments, paired sign-flip tests, Fisher combination), the
// teacher-forcing upper-bound modes, and gate inspection dumps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mjave/dataio.hpp"
#include "mjave/errors.hpp"
#include "mjave/losses.hpp"
#include "mjave/metrics.hpp"
#include "mjave/model.hpp"
#include "mjave/random.hpp"

namespace mjave {

struct Prediction {
  std::vector<int> attributes;        // sorted label ids, threshold 0.5
  std::vector<double> attr_scores;    // per label
  std::vector<int> tags;              // one per real token
};

template <typename T>
Prediction decode_prediction(const ForwardOutput<T>& out, const Encoded& enc,
                             std::size_t num_labels) {
  Prediction p;
  p.attr_scores.resize(num_labels);
  for (std::size_t l = 0; l < num_labels; ++l) {
    const double score = static_cast<double>(out.attr_probs(0, l));
    p.attr_scores[l] = score;
    if (score >= 0.5) p.attributes.push_back(static_cast<int>(l));
  }
  const std::size_t num_tags = out.tag_probs.cols();
  for (std::size_t i = 0; i < enc.real.size(); ++i) {
    if (!enc.real[i]) continue;
    std::size_t best = 0;
    T best_p = out.tag_probs(i, 0);
    for (std::size_t t = 1; t < num_tags; ++t)
      if (out.tag_probs(i, t) > best_p) {
        best_p = out.tag_probs(i, t);
        best = t;
      }
    p.tags.push_back(static_cast<int>(best));
  }
  return p;
}

template <typename T>
Prediction predict_one(const ModelParams<T>& params,
                       const AblationConfig& ablation,
                       const PreparedInstance<T>& inst) {
  auto out = forward(inst.enc, inst.image, params, ablation,
                     &inst.gold_attr_row);
  return decode_prediction(out, inst.enc, params.config.num_labels);
}

// Gold tags restricted to real token positions, aligned with Prediction::tags.
template <typename T>
std::vector<int> gold_real_tags(const PreparedInstance<T>& inst) {
  std::vector<int> tags;
  for (std::size_t i = 0; i < inst.enc.real.size(); ++i)
    if (inst.enc.real[i]) tags.push_back(inst.gold_tags_padded[i]);
  return tags;
}

template <typename T>
MetricsReport evaluate_dataset(const ModelParams<T>& params,
                               const AblationConfig& ablation,
                               const std::vector<PreparedInstance<T>>& data,
                               const TagScheme& scheme) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  std::vector<std::vector<int>> pred_attrs, gold_attrs, pred_tags, gold_tags;
  for (const auto& inst : data) {
    auto pred = predict_one(params, ablation, inst);
    pred_attrs.push_back(std::move(pred.attributes));
    pred_tags.push_back(std::move(pred.tags));
    gold_attrs.push_back(inst.source->attributes);
    gold_tags.push_back(gold_real_tags(inst));
  }
  return build_report(pred_attrs, gold_attrs, pred_tags, gold_tags, scheme);
}

// ---------------------------------------------------------------------------
// Upper-bound (teacher forcing) evaluation
// ---------------------------------------------------------------------------

// mode "value_given_gold_attrs": gold attribute labels are fed through the
// value head's attribute pathways; the value task is measured, the attribute
// task is perfect by construction. mode "attr_given_gold_values": gold tags
// are pushed through the value-to-attribute mapping and thresholded; the
// attribute task is measured, the value task is perfect by construction.
template <typename T>
MetricsReport upper_bound_eval(const ModelParams<T>& params,
                               const AblationConfig& ablation,
                               const std::vector<PreparedInstance<T>>& data,
                               const TagScheme& scheme,
                               const std::string& mode) {
  if (data.empty()) throw DataError("upper_bound_eval: empty dataset");
  std::vector<std::vector<int>> pred_attrs, gold_attrs, pred_tags, gold_tags;
  for (const auto& inst : data) {
    gold_attrs.push_back(inst.source->attributes);
    gold_tags.push_back(gold_real_tags(inst));
  }

  if (mode == "value_given_gold_attrs") {
    AblationConfig forced = ablation;
    forced.teacher_force_attributes = true;
    for (const auto& inst : data) {
      auto pred = predict_one(params, forced, inst);
      pred_tags.push_back(std::move(pred.tags));
    }
    pred_attrs = gold_attrs;
  } else if (mode == "attr_given_gold_values") {
    const std::size_t L = scheme.num_labels();
    const std::size_t num_tags = scheme.num_tags();
    for (const auto& inst : data) {
      const auto tags = gold_real_tags(inst);
      std::vector<T> rows(tags.size() * num_tags, T(0));
      for (std::size_t i = 0; i < tags.size(); ++i)
        rows[i * num_tags + static_cast<std::size_t>(tags[i])] = T(1);
      Tensor<T> one_hot(tags.size(), num_tags, std::move(rows));
      Tensor<T> mapped = map_value_to_attribute(
          one_hot, std::vector<unsigned char>(tags.size(), 1), L);
      std::vector<int> attrs;
      for (std::size_t l = 0; l < L; ++l)
        if (static_cast<double>(mapped(0, l)) >= 0.5)
          attrs.push_back(static_cast<int>(l));
      pred_attrs.push_back(std::move(attrs));
    }
    pred_tags = gold_tags;
  } else {
    throw ConfigError("upper_bound_eval: unknown mode '" + mode +
                      "'; valid modes: value_given_gold_attrs, "
                      "attr_given_gold_values");
  }
  return build_report(pred_attrs, gold_attrs, pred_tags, gold_tags, scheme);
}

// ---------------------------------------------------------------------------
// Awareness evaluation
// ---------------------------------------------------------------------------

struct AwarenessReport {
  double congruent_value_f1 = 0;
  double congruent_attr_f1 = 0;
  std::vector<double> incongruent_value_f1;  // micro F1 per permutation
  std::vector<double> incongruent_attr_f1;
  double delta_value_mean = 0, delta_value_std = 0;
  double delta_attr_mean = 0, delta_attr_std = 0;
  std::vector<double> p_values_value, p_values_attr;  // per permutation
  double fisher_p_value = 1.0, fisher_p_attr = 1.0;
};

namespace detail {

// Single-cycle random permutation (Sattolo), hence no fixed points.
inline std::vector<std::size_t> derangement(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j =
        std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

// One-sided paired sign-flip permutation test for mean(diffs) > 0.
inline double sign_flip_p_value(const std::vector<double>& diffs, Rng& rng,
                                std::size_t resamples = 2000) {
  double observed = 0;
  for (double d : diffs) observed += d;
  std::size_t at_least = 0;
  std::uniform_int_distribution<int> coin(0, 1);
  for (std::size_t r = 0; r < resamples; ++r) {
    double flipped = 0;
    for (double d : diffs) flipped += coin(rng) ? d : -d;
    if (flipped >= observed) ++at_least;
  }
  return static_cast<double>(1 + at_least) /
         static_cast<double>(resamples + 1);
}

// Survival function of the chi-square distribution with even dof 2m:
// P(X > x) = exp(-x/2) * sum_{j<m} (x/2)^j / j!.
inline double chi_square_sf_even(double x, std::size_t dof) {
  const std::size_t m = dof / 2;
  const double half = x / 2.0;
  double log_term = -half;  // j = 0
  double total = std::exp(log_term);
  for (std::size_t j = 1; j < m; ++j) {
    log_term += std::log(half) - std::log(static_cast<double>(j));
    total += std::exp(log_term);
  }
  return std::min(1.0, total);
}

inline double fisher_combined_p(const std::vector<double>& p_values) {
  double statistic = 0;
  for (double p : p_values) statistic += -2.0 * std::log(p);
  return chi_square_sf_even(statistic, 2 * p_values.size());
}

inline void mean_std(const std::vector<double>& xs, double& mean,
                     double& sd) {
  mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) {
    sd = 0;
    return;
  }
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace detail

// Adversarial image-awareness protocol: each permutation replaces every
// instance's image with another instance's image (derangement, so no
// instance keeps its own), and the per-instance F1 drop is aggregated and
// tested. `force_identity` is a test hook making the "incongruent" images
// congruent, which must drive every delta to exactly zero.
template <typename T>
AwarenessReport awareness(const ModelParams<T>& params,
                          const AblationConfig& ablation,
                          const std::vector<PreparedInstance<T>>& data,
                          const TagScheme& scheme,
                          std::size_t permutations, std::uint64_t seed,
                          bool force_identity = false) {
  if (data.size() < 2)
    throw DataError("awareness: need at least 2 instances to derange images");
  if (permutations == 0)
    throw ConfigError("awareness: permutations must be >= 1");

  const std::size_t n = data.size();
  std::vector<double> congruent_value(n), congruent_attr(n);
  std::vector<std::vector<int>> pred_attrs(n), pred_tags(n), gold_attrs(n),
      gold_tags(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto pred = predict_one(params, ablation, data[i]);
    gold_attrs[i] = data[i].source->attributes;
    gold_tags[i] = gold_real_tags(data[i]);
    congruent_value[i] = span_f1_single(tags_to_spans(pred.tags, scheme),
                                        tags_to_spans(gold_tags[i], scheme));
    congruent_attr[i] = attr_f1_single(pred.attributes, gold_attrs[i]);
    pred_attrs[i] = std::move(pred.attributes);
    pred_tags[i] = std::move(pred.tags);
  }

  AwarenessReport report;
  report.congruent_value_f1 =
      f1_values(pred_tags, gold_tags, scheme).f1;
  report.congruent_attr_f1 = f1_attributes(pred_attrs, gold_attrs).f1;

  Rng perm_rng(seed);
  Rng test_rng(seed ^ 0xa24baed4963ee407ull);
  std::vector<double> delta_value_per_perm, delta_attr_per_perm;
  for (std::size_t p = 0; p < permutations; ++p) {
    std::vector<std::size_t> perm;
    if (force_identity) {
      perm.resize(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    } else {
      perm = detail::derangement(n, perm_rng);
    }

    std::vector<double> diff_value(n), diff_attr(n);
    std::vector<std::vector<int>> inc_attrs(n), inc_tags(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto out = forward(data[i].enc, data[perm[i]].image, params, ablation,
                         &data[i].gold_attr_row);
      auto pred =
          decode_prediction(out, data[i].enc, params.config.num_labels);
      const double value_f1 =
          span_f1_single(tags_to_spans(pred.tags, scheme),
                         tags_to_spans(gold_tags[i], scheme));
      const double attr_f1 = attr_f1_single(pred.attributes, gold_attrs[i]);
      diff_value[i] = congruent_value[i] - value_f1;
      diff_attr[i] = congruent_attr[i] - attr_f1;
      inc_attrs[i] = std::move(pred.attributes);
      inc_tags[i] = std::move(pred.tags);
    }
    report.incongruent_value_f1.push_back(
        f1_values(inc_tags, gold_tags, scheme).f1);
    report.incongruent_attr_f1.push_back(
        f1_attributes(inc_attrs, gold_attrs).f1);

    double mean_value = 0, mean_attr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mean_value += diff_value[i];
      mean_attr += diff_attr[i];
    }
    delta_value_per_perm.push_back(mean_value / static_cast<double>(n));
    delta_attr_per_perm.push_back(mean_attr / static_cast<double>(n));
    report.p_values_value.push_back(
        detail::sign_flip_p_value(diff_value, test_rng));
    report.p_values_attr.push_back(
        detail::sign_flip_p_value(diff_attr, test_rng));
  }

  detail::mean_std(delta_value_per_perm, report.delta_value_mean,
                   report.delta_value_std);
  detail::mean_std(delta_attr_per_perm, report.delta_attr_mean,
                   report.delta_attr_std);
  report.fisher_p_value = detail::fisher_combined_p(report.p_values_value);
  report.fisher_p_attr = detail::fisher_combined_p(report.p_values_attr);
  return report;
}

// ---------------------------------------------------------------------------
// Gate inspection
// ---------------------------------------------------------------------------

struct GateDump {
  std::vector<std::string> tokens;                // real tokens in order
  std::vector<double> global_gate;                // one per real token
  std::vector<double> regional_gate;              // one per region
  std::vector<std::vector<double>> attn_visual;   // real tokens x regions
};

template <typename T>
GateDump inspect_gates(const ModelParams<T>& params,
                       const AblationConfig& ablation,
                       const PreparedInstance<T>& inst) {
  auto out = forward(inst.enc, inst.image, params, ablation,
                     &inst.gold_attr_row);
  GateDump dump;
  const auto& tokens = inst.source->tokens;
  std::size_t token_index = 0;
  for (std::size_t i = 0; i < inst.enc.real.size(); ++i) {
    if (!inst.enc.real[i]) continue;
    dump.tokens.push_back(tokens[token_index++]);
    dump.global_gate.push_back(static_cast<double>(out.global_gate(i, 0)));
    std::vector<double> row;
    for (std::size_t k = 0; k < out.attn_visual.cols(); ++k)
      row.push_back(static_cast<double>(out.attn_visual(i, k)));
    dump.attn_visual.push_back(std::move(row));
  }
  for (std::size_t k = 0; k < out.regional_gate.rows(); ++k)
    dump.regional_gate.push_back(static_cast<double>(out.regional_gate(k, 0)));
  return dump;
}

}  // namespace mjave
