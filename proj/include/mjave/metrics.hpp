#pragma once

// Micro-averaged precision/recall/F1 for the multilabel attribute task and
// the span-level exact-match value task, plus per-label breakdowns and the
// per-instance F1 helpers used by the awareness evaluation.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mjave/dataio.hpp"

namespace mjave {

struct PRF {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t tp = 0, fp = 0, fn = 0;

  static PRF from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
};

struct MetricsReport {
  PRF attributes;
  PRF values;
  std::vector<std::pair<std::string, PRF>> per_label_attributes;
  std::vector<std::pair<std::string, PRF>> per_label_values;
};

// Micro P/R/F1 over (instance, label) positives; label sets must be sorted.
PRF f1_attributes(const std::vector<std::vector<int>>& predicted,
                  const std::vector<std::vector<int>>& gold);

// Span-level exact-match micro P/R/F1; sequences are decoded per instance.
PRF f1_values(const std::vector<std::vector<int>>& predicted_tags,
              const std::vector<std::vector<int>>& gold_tags,
              const TagScheme& scheme);

MetricsReport build_report(const std::vector<std::vector<int>>& predicted_attrs,
                           const std::vector<std::vector<int>>& gold_attrs,
                           const std::vector<std::vector<int>>& predicted_tags,
                           const std::vector<std::vector<int>>& gold_tags,
                           const TagScheme& scheme);

// Per-instance F1 values for paired comparisons. Two empty sets count as a
// perfect match.
double attr_f1_single(const std::vector<int>& predicted,
                      const std::vector<int>& gold);
double span_f1_single(const std::vector<Span>& predicted,
                      const std::vector<Span>& gold);

}  // namespace mjave
