#pragma once

// Losses for both heads and the consistency penalty coupling them.

#include <string>
#include <utility>
#include <vector>

#include "mjave/errors.hpp"
#include "mjave/tensor.hpp"

namespace mjave {

// Mean binary cross entropy over the label set; probabilities clamped away
// from the log singularities.
template <typename T>
Tensor<T> loss_attribute(const Tensor<T>& attr_probs, const Tensor<T>& gold) {
  if (attr_probs.rows() != 1 || gold.rows() != 1 ||
      attr_probs.cols() != gold.cols())
    throw ShapeError("loss_attribute: got " + attr_probs.shape_str() + " vs " +
                     gold.shape_str());
  const T eps = T(1e-12);
  Tensor<T> p = clamp(attr_probs, eps, T(1) - eps);
  Tensor<T> pos = mul(gold, log_floored(p, eps));
  Tensor<T> neg = mul(affine(gold, T(-1), T(1)),
                      log_floored(affine(p, T(-1), T(1)), eps));
  return scale(sum(add(pos, neg)),
               T(-1) / static_cast<T>(attr_probs.cols()));
}

// Mean negative log likelihood of the gold tag over the selected positions.
template <typename T>
Tensor<T> loss_value(const Tensor<T>& tag_probs, const std::vector<int>& tags,
                     const std::vector<unsigned char>& positions) {
  if (tags.size() != tag_probs.rows() || positions.size() != tag_probs.rows())
    throw ShapeError("loss_value: tags/mask do not match " +
                     tag_probs.shape_str());
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (!positions[i]) continue;
    if (tags[i] < 0 || static_cast<std::size_t>(tags[i]) >= tag_probs.cols())
      throw DataError("loss_value: tag id " + std::to_string(tags[i]) +
                      " out of range");
    picks.emplace_back(i, static_cast<std::size_t>(tags[i]));
  }
  if (picks.empty()) throw DataError("loss_value: no unmasked positions");
  Tensor<T> gathered = gather_elems(tag_probs, picks);
  return scale(sum(log_floored(gathered, T(1e-12))),
               T(-1) / static_cast<T>(picks.size()));
}

// Collapse per-token tag probabilities into one score per label: the mean of
// the best B- and best I- probability over the selected positions.
template <typename T>
Tensor<T> map_value_to_attribute(const Tensor<T>& tag_probs,
                                 const std::vector<unsigned char>& positions,
                                 std::size_t num_labels) {
  if (tag_probs.cols() != 2 * num_labels + 1)
    throw ShapeError("map_value_to_attribute: " + tag_probs.shape_str() +
                     " does not hold " + std::to_string(2 * num_labels + 1) +
                     " tags");
  Tensor<T> best = masked_colmax(tag_probs, positions);  // [1 x (2L+1)]
  std::vector<T> mapping((2 * num_labels + 1) * num_labels, T(0));
  for (std::size_t l = 0; l < num_labels; ++l) {
    mapping[(1 + 2 * l) * num_labels + l] = T(0.5);
    mapping[(2 + 2 * l) * num_labels + l] = T(0.5);
  }
  Tensor<T> map_matrix(2 * num_labels + 1, num_labels, std::move(mapping));
  return matmul(best, map_matrix);
}

// Consistency penalty between the attribute scores and the mapped value
// scores, computed exactly as sum_l a_l * log(a_l / m_l) over the raw sigmoid
// scores. The inputs are not a normalized distribution, so the result is not
// a true divergence and may be negative; identical inputs give exactly zero.
template <typename T>
Tensor<T> kl_penalty(const Tensor<T>& attr_probs, const Tensor<T>& mapped) {
  if (attr_probs.rows() != 1 || mapped.rows() != 1 ||
      attr_probs.cols() != mapped.cols())
    throw ShapeError("kl_penalty: got " + attr_probs.shape_str() + " vs " +
                     mapped.shape_str());
  const T floor = T(1e-12);
  Tensor<T> log_ratio =
      sub(log_floored(attr_probs, floor), log_floored(mapped, floor));
  return sum(mul(attr_probs, log_ratio));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& attr_loss, const Tensor<T>& value_loss,
                     const Tensor<T>& kl, double lambda) {
  if (lambda < 0) throw ConfigError("total_loss: lambda must be >= 0");
  Tensor<T> joint = add(attr_loss, value_loss);
  if (lambda == 0) return joint;
  return add(joint, scale(kl, static_cast<T>(lambda)));
}

}  // namespace mjave
