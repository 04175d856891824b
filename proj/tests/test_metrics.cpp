#include <algorithm>
#include <map>
#include <random>

#include "doctest.h"
#include "mjave/metrics.hpp"

using namespace mjave;

namespace {

const TagScheme kScheme({"Color", "Material", "Style"});

// Brute-force span F1: count multiset matches by pairing each predicted span
// with an unused identical gold span.
double brute_span_f1(std::vector<std::vector<Span>> pred,
                     std::vector<std::vector<Span>> gold, std::size_t* tp_out) {
  std::size_t tp = 0, p_total = 0, g_total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p_total += pred[i].size();
    g_total += gold[i].size();
    std::vector<bool> used(gold[i].size(), false);
    for (const auto& ps : pred[i])
      for (std::size_t j = 0; j < gold[i].size(); ++j)
        if (!used[j] && gold[i][j] == ps) {
          used[j] = true;
          ++tp;
          break;
        }
  }
  if (tp_out) *tp_out = tp;
  const double prec = p_total ? static_cast<double>(tp) / p_total : 0.0;
  const double rec = g_total ? static_cast<double>(tp) / g_total : 0.0;
  return (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
}

}  // namespace

TEST_CASE("attribute micro F1 on a hand example") {
  // Predicted {Color, Material}, gold {Color}: one hit, one false alarm.
  const auto prf = f1_attributes({{0, 1}}, {{0}});
  CHECK(prf.tp == 1);
  CHECK(prf.fp == 1);
  CHECK(prf.fn == 0);
  CHECK(prf.precision == doctest::Approx(0.5));
  CHECK(prf.recall == doctest::Approx(1.0));
  CHECK(prf.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  SUBCASE("degenerate counts give zero, not NaN") {
    const auto empty = f1_attributes({{}}, {{}});
    CHECK(empty.precision == 0.0);
    CHECK(empty.recall == 0.0);
    CHECK(empty.f1 == 0.0);
  }
  SUBCASE("instance order does not matter") {
    const auto a = f1_attributes({{0}, {1, 2}, {}}, {{0, 1}, {2}, {1}});
    const auto b = f1_attributes({{1, 2}, {}, {0}}, {{2}, {1}, {0, 1}});
    CHECK(a.f1 == b.f1);
    CHECK(a.tp == b.tp);
  }
  SUBCASE("mismatched lengths and empty input are rejected") {
    CHECK_THROWS_AS(f1_attributes({{0}}, {{0}, {1}}), DataError);
    CHECK_THROWS_AS(f1_attributes({}, {}), DataError);
  }
}

TEST_CASE("span F1 demands exact boundaries") {
  // Gold span [0, 2); prediction misses the second token.
  const auto g = spans_to_tags({Span{0, 2, 0}}, 3, kScheme);
  const auto p = spans_to_tags({Span{0, 1, 0}}, 3, kScheme);
  const auto prf = f1_values({p}, {g}, kScheme);
  CHECK(prf.tp == 0);
  CHECK(prf.fp == 1);
  CHECK(prf.fn == 1);
  CHECK(prf.f1 == 0.0);

  SUBCASE("the right label in the right place scores") {
    const auto prf2 = f1_values({g}, {g}, kScheme);
    CHECK(prf2.f1 == 1.0);
  }
  SUBCASE("right boundaries with the wrong label do not score") {
    const auto wrong = spans_to_tags({Span{0, 2, 1}}, 3, kScheme);
    CHECK(f1_values({wrong}, {g}, kScheme).tp == 0);
  }
  SUBCASE("length mismatch is rejected") {
    CHECK_THROWS_AS(f1_values({p}, {g, g}, kScheme), DataError);
  }
}

TEST_CASE("span F1 agrees with a brute-force matcher on random data") {
  std::mt19937_64 rng(501);
  for (int iter = 0; iter < 200; ++iter) {
    const std::size_t instances = 1 + rng() % 6;
    std::vector<std::vector<int>> pred_tags, gold_tags;
    std::vector<std::vector<Span>> pred_spans, gold_spans;
    for (std::size_t i = 0; i < instances; ++i) {
      const std::size_t length = 1 + rng() % 15;
      auto random_tags = [&] {
        std::vector<int> tags(length);
        for (auto& t : tags) t = static_cast<int>(rng() % kScheme.num_tags());
        return tags;
      };
      pred_tags.push_back(random_tags());
      gold_tags.push_back(random_tags());
      pred_spans.push_back(tags_to_spans(pred_tags.back(), kScheme));
      gold_spans.push_back(tags_to_spans(gold_tags.back(), kScheme));
    }
    const auto prf = f1_values(pred_tags, gold_tags, kScheme);
    std::size_t tp = 0;
    const double brute = brute_span_f1(pred_spans, gold_spans, &tp);
    CHECK(prf.tp == tp);
    CHECK(prf.f1 == doctest::Approx(brute).epsilon(1e-12));
  }
}

TEST_CASE("report carries per-label breakdowns") {
  // Color predicted correctly everywhere; Material missed once.
  const auto tags_c = spans_to_tags({Span{0, 1, 0}}, 2, kScheme);
  const auto tags_m = spans_to_tags({Span{1, 2, 1}}, 2, kScheme);
  const std::vector<int> tags_o(2, 0);
  const auto report = build_report({{0}, {0}}, {{0}, {0, 1}},
                                   {tags_c, tags_c}, {tags_c, tags_m}, kScheme);
  REQUIRE(report.per_label_attributes.size() == 3);
  CHECK(report.per_label_attributes[0].first == "Color");
  CHECK(report.per_label_attributes[0].second.f1 == doctest::Approx(1.0));
  CHECK(report.per_label_attributes[1].second.tp == 0);
  CHECK(report.per_label_attributes[1].second.fn == 1);
  CHECK(report.attributes.tp == 2);
  CHECK(report.attributes.fn == 1);
  REQUIRE(report.per_label_values.size() == 3);
  CHECK(report.per_label_values[0].second.tp == 1);
  CHECK(report.per_label_values[1].second.fp == 0);
  CHECK(report.per_label_values[1].second.fn == 1);
  CHECK(report.values.tp == 1);
}

TEST_CASE("per-instance F1 helpers") {
  CHECK(attr_f1_single({}, {}) == 1.0);
  CHECK(attr_f1_single({0}, {}) == 0.0);
  CHECK(attr_f1_single({}, {1}) == 0.0);
  CHECK(attr_f1_single({0, 1}, {0}) == doctest::Approx(2.0 / 3.0));
  CHECK(attr_f1_single({0, 1}, {0, 1}) == 1.0);

  CHECK(span_f1_single({}, {}) == 1.0);
  CHECK(span_f1_single({Span{0, 1, 0}}, {}) == 0.0);
  const std::vector<Span> g = {Span{0, 2, 1}, Span{3, 4, 0}};
  CHECK(span_f1_single(g, g) == 1.0);
  CHECK(span_f1_single({Span{0, 2, 1}}, g) == doctest::Approx(2.0 / 3.0));
  // Duplicate predictions only match as many gold copies as exist.
  CHECK(span_f1_single({Span{0, 1, 0}, Span{0, 1, 0}}, {Span{0, 1, 0}}) ==
        doctest::Approx(2.0 / 3.0));
}
