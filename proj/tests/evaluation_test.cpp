#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "pincer/evaluation.hpp"
#include "pincer/random.hpp"

using namespace pincer;

namespace {

// Exhaustive two-sided exact p over every sign pattern, from raw ranks.
double sign_pattern_p(const std::vector<double>& ranks, double w_plus) {
  const std::size_t n = ranks.size();
  std::size_t le = 0, ge = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += ranks[i];
    if (w <= w_plus + 1e-9) ++le;
    if (w >= w_plus - 1e-9) ++ge;
  }
  return std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(std::size_t{1} << n));
}

}  // namespace

TEST(Metrics, HandCases) {
  const std::vector<std::size_t> ranked{1, 3};
  auto pr = precision_recall_at_k(ranked, {1, 2}, 2);
  EXPECT_EQ(pr.precision, 0.5);
  EXPECT_EQ(pr.recall, 0.5);
  const std::vector<std::size_t> top10{7, 0, 8, 1, 9, 2, 10, 11, 12, 13};
  pr = precision_recall_at_k(top10, {0, 1, 2}, 10);
  EXPECT_EQ(pr.recall, 1.0);
  EXPECT_NEAR(pr.precision, 0.3, 1e-15);
}

TEST(Metrics, EmptyRelevantIsContractError) {
  const std::vector<std::size_t> ranked{1};
  EXPECT_THROW(precision_recall_at_k(ranked, {}, 1), ContractError);
}

TEST(Metrics, MatchesSetIntersectionRecount) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    shuffle(ids, rng);
    RelevantSet rel;
    const std::size_t r = 1 + uniform_index(rng, 5);
    for (std::size_t i = 0; i < r; ++i) rel.insert(uniform_index(rng, 220));
    const std::size_t k = 1 + uniform_index(rng, 120);
    const std::set<std::size_t> top(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(k, n)));
    std::vector<std::size_t> inter;
    const std::set<std::size_t> rel_sorted(rel.begin(), rel.end());
    std::set_intersection(top.begin(), top.end(), rel_sorted.begin(), rel_sorted.end(), std::back_inserter(inter));
    const auto pr = precision_recall_at_k(ids, rel, k);
    EXPECT_EQ(pr.precision, static_cast<double>(inter.size()) / static_cast<double>(k));
    EXPECT_EQ(pr.recall, static_cast<double>(inter.size()) / static_cast<double>(rel.size()));
  }
}

TEST(Metrics, MonotoneInK) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::size_t> ids(150);
    std::iota(ids.begin(), ids.end(), 0);
    shuffle(ids, rng);
    RelevantSet rel;
    while (rel.size() < 4) rel.insert(uniform_index(rng, 150));
    double prev_r = 0, prev_hits = 0;
    for (std::size_t k = 1; k <= 150; ++k) {
      const auto pr = precision_recall_at_k(ids, rel, k);
      EXPECT_LE(pr.precision * k, rel.size() + 1e-9);
      EXPECT_LE(pr.recall, 1.0);
      EXPECT_GE(pr.recall, prev_r);
      EXPECT_GE(pr.precision * k + 1e-9, prev_hits);
      prev_r = pr.recall;
      prev_hits = pr.precision * k;
    }
    EXPECT_EQ(prev_r, 1.0);
  }
}

TEST(Metrics, SumRArithmetic) {
  const auto report = report_from_recalls({}, {31.85, 46.36, 67.08, 79.01}, 1);
  EXPECT_NEAR(report.sum_r, 224.30, 1e-9);
  EXPECT_EQ(report.to_json()["SumR"], 224.3);
  EXPECT_NE(report.to_table("x").find("224.30"), std::string::npos);
}

TEST(Metrics, SingleQueryRankedFirst) {
  const auto report = evaluate_rankings({{5, 1, 2}}, {{5}});
  EXPECT_EQ(report.recall[0], 100.0);
  EXPECT_EQ(report.precision[0], 10.0);
  EXPECT_EQ(report.sum_r, 400.0);
}

TEST(Metrics, NoQueriesIsContractError) { EXPECT_THROW(evaluate_rankings({}, {}), ContractError); }

TEST(Wilcoxon, ConstantShiftSignificant) {
  const std::vector<double> a{3, 1, 4, 1, 5, 9, 2, 6, 5, 3};
  std::vector<double> b;
  Rng rng(1);
  for (double v : a) b.push_back(v + 1.0 + 0.01 * uniform01(rng));
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_TRUE(r.exact);
  EXPECT_LT(r.p_value, 0.01);
  // Every difference positive: p = 2 / 2^10.
  EXPECT_NEAR(r.p_value, 2.0 / 1024.0, 1e-15);
}

TEST(Wilcoxon, IdenticalIsDegenerate) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  EXPECT_THROW(wilcoxon_signed_rank(a, a), DegenerateInputError);
}

TEST(Wilcoxon, TooFewDifferences) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{1, 2, 3, 4, 6, 7};
  EXPECT_THROW(wilcoxon_signed_rank(a, b), ContractError);
}

TEST(Wilcoxon, SixPairHandCaseMatchesSignEnumeration) {
  const std::vector<double> a{0, 0, 0, 0, 0, 0}, b{1.5, -0.5, 2.5, 3.5, -4.5, 6.0};
  // |d| ranks: 0.5->1, 1.5->2, 2.5->3, 3.5->4, 4.5->5, 6->6; positives 2,3,4,6.
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_EQ(r.statistic, 15.0);
  EXPECT_NEAR(r.p_value, sign_pattern_p({1, 2, 3, 4, 5, 6}, 15.0), 1e-15);
}

TEST(Wilcoxon, TiedRanksMatchSignEnumeration) {
  const std::vector<double> a(8, 0.0), b{1, -1, 2, 2, -2, 3, 4, 4};
  const auto r = wilcoxon_signed_rank(a, b);
  // Ranks: |1| x2 -> 1.5, |2| x3 -> 4, 3 -> 6, |4| x2 -> 7.5.
  EXPECT_EQ(r.statistic, 1.5 + 4 + 4 + 6 + 7.5 + 7.5);
  EXPECT_NEAR(r.p_value, sign_pattern_p({1.5, 1.5, 4, 4, 4, 6, 7.5, 7.5}, r.statistic), 1e-15);
}

TEST(Wilcoxon, ExactAndNormalAgreeAtTwentyFive) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(25), b(25);
    const double shift = uniform(rng, -0.5, 0.5);
    for (int i = 0; i < 25; ++i) {
      a[i] = normal(rng);
      b[i] = a[i] + shift + normal(rng);
    }
    const auto exact = wilcoxon_signed_rank(a, b, WilcoxonMethod::kExact);
    const auto approx = wilcoxon_signed_rank(a, b, WilcoxonMethod::kNormal);
    EXPECT_EQ(exact.statistic, approx.statistic);
    EXPECT_NEAR(exact.p_value, approx.p_value, 0.02);
  }
}

TEST(Wilcoxon, LargeSampleUsesNormalBranch) {
  Rng rng(12);
  std::vector<double> a(40), b(40);
  for (int i = 0; i < 40; ++i) {
    a[i] = normal(rng);
    b[i] = a[i] + 0.1 + normal(rng);
  }
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_FALSE(r.exact);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_LE(r.p_value, 1.0);
}
