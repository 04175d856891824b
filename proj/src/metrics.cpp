#include "mjave/metrics.hpp"

#include <algorithm>
#include <array>

namespace mjave {

PRF PRF::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRF r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = tp + fp == 0 ? 0.0
                             : static_cast<double>(tp) /
                                   static_cast<double>(tp + fp);
  r.recall = tp + fn == 0 ? 0.0
                          : static_cast<double>(tp) /
                                static_cast<double>(tp + fn);
  r.f1 = r.precision + r.recall == 0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

namespace {

// Multiset intersection size of two sorted ranges.
template <typename It>
std::size_t count_matches(It pb, It pe, It gb, It ge) {
  std::size_t matches = 0;
  while (pb != pe && gb != ge) {
    if (*pb < *gb) {
      ++pb;
    } else if (*gb < *pb) {
      ++gb;
    } else {
      ++matches;
      ++pb;
      ++gb;
    }
  }
  return matches;
}

}  // namespace

PRF f1_attributes(const std::vector<std::vector<int>>& predicted,
                  const std::vector<std::vector<int>>& gold) {
  if (predicted.size() != gold.size())
    throw DataError("f1_attributes: prediction/gold counts differ");
  if (predicted.empty()) throw DataError("f1_attributes: empty dataset");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const std::size_t match = count_matches(predicted[i].begin(),
                                            predicted[i].end(),
                                            gold[i].begin(), gold[i].end());
    tp += match;
    fp += predicted[i].size() - match;
    fn += gold[i].size() - match;
  }
  return PRF::from_counts(tp, fp, fn);
}

PRF f1_values(const std::vector<std::vector<int>>& predicted_tags,
              const std::vector<std::vector<int>>& gold_tags,
              const TagScheme& scheme) {
  if (predicted_tags.size() != gold_tags.size())
    throw DataError("f1_values: prediction/gold counts differ");
  if (predicted_tags.empty()) throw DataError("f1_values: empty dataset");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted_tags.size(); ++i) {
    if (predicted_tags[i].size() != gold_tags[i].size())
      throw DataError("f1_values: sequence length mismatch at instance " +
                      std::to_string(i));
    auto pred = tags_to_spans(predicted_tags[i], scheme);
    auto gold = tags_to_spans(gold_tags[i], scheme);
    std::sort(pred.begin(), pred.end());
    std::sort(gold.begin(), gold.end());
    const std::size_t match =
        count_matches(pred.begin(), pred.end(), gold.begin(), gold.end());
    tp += match;
    fp += pred.size() - match;
    fn += gold.size() - match;
  }
  return PRF::from_counts(tp, fp, fn);
}

MetricsReport build_report(const std::vector<std::vector<int>>& predicted_attrs,
                           const std::vector<std::vector<int>>& gold_attrs,
                           const std::vector<std::vector<int>>& predicted_tags,
                           const std::vector<std::vector<int>>& gold_tags,
                           const TagScheme& scheme) {
  MetricsReport report;
  report.attributes = f1_attributes(predicted_attrs, gold_attrs);
  report.values = f1_values(predicted_tags, gold_tags, scheme);

  const std::size_t L = scheme.num_labels();
  std::vector<std::array<std::size_t, 3>> attr_counts(L, {0, 0, 0});
  std::vector<std::array<std::size_t, 3>> value_counts(L, {0, 0, 0});

  for (std::size_t i = 0; i < predicted_attrs.size(); ++i) {
    for (int label : predicted_attrs[i]) {
      const bool hit = std::binary_search(gold_attrs[i].begin(),
                                          gold_attrs[i].end(), label);
      ++attr_counts[static_cast<std::size_t>(label)][hit ? 0 : 1];
    }
    for (int label : gold_attrs[i])
      if (!std::binary_search(predicted_attrs[i].begin(),
                              predicted_attrs[i].end(), label))
        ++attr_counts[static_cast<std::size_t>(label)][2];
  }

  for (std::size_t i = 0; i < predicted_tags.size(); ++i) {
    auto pred = tags_to_spans(predicted_tags[i], scheme);
    auto gold = tags_to_spans(gold_tags[i], scheme);
    std::sort(pred.begin(), pred.end());
    std::sort(gold.begin(), gold.end());
    std::vector<unsigned char> gold_used(gold.size(), 0);
    for (const auto& span : pred) {
      bool hit = false;
      for (std::size_t g = 0; g < gold.size(); ++g) {
        if (!gold_used[g] && gold[g] == span) {
          gold_used[g] = 1;
          hit = true;
          break;
        }
      }
      ++value_counts[static_cast<std::size_t>(span.label)][hit ? 0 : 1];
    }
    for (std::size_t g = 0; g < gold.size(); ++g)
      if (!gold_used[g])
        ++value_counts[static_cast<std::size_t>(gold[g].label)][2];
  }

  for (std::size_t l = 0; l < L; ++l) {
    report.per_label_attributes.emplace_back(
        scheme.label_name(static_cast<int>(l)),
        PRF::from_counts(attr_counts[l][0], attr_counts[l][1],
                         attr_counts[l][2]));
    report.per_label_values.emplace_back(
        scheme.label_name(static_cast<int>(l)),
        PRF::from_counts(value_counts[l][0], value_counts[l][1],
                         value_counts[l][2]));
  }
  return report;
}

double attr_f1_single(const std::vector<int>& predicted,
                      const std::vector<int>& gold) {
  if (predicted.empty() && gold.empty()) return 1.0;
  const std::size_t match = count_matches(predicted.begin(), predicted.end(),
                                          gold.begin(), gold.end());
  const std::size_t denom = predicted.size() + gold.size();
  return 2.0 * static_cast<double>(match) / static_cast<double>(denom);
}

double span_f1_single(const std::vector<Span>& predicted,
                      const std::vector<Span>& gold) {
  if (predicted.empty() && gold.empty()) return 1.0;
  std::vector<Span> p = predicted, g = gold;
  std::sort(p.begin(), p.end());
  std::sort(g.begin(), g.end());
  const std::size_t match =
      count_matches(p.begin(), p.end(), g.begin(), g.end());
  const std::size_t denom = p.size() + g.size();
  return 2.0 * static_cast<double>(match) / static_cast<double>(denom);
}

}  // namespace mjave
