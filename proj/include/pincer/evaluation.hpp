#pragma once

// Ranking metrics (precision/recall at fixed cutoffs, SumR) and a paired
// Wilcoxon signed-rank test.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "pincer/errors.hpp"

namespace pincer {

inline constexpr std::array<std::size_t, 4> kReportCutoffs{10, 20, 50, 100};

struct PrecisionRecall {
  double precision = 0.0;  // fractions in [0,1]
  double recall = 0.0;
};

using RelevantSet = std::unordered_set<std::size_t>;

/// Rankings shorter than k count the missing slots as misses.
inline PrecisionRecall precision_recall_at_k(std::span<const std::size_t> ranked, const RelevantSet& relevant,
                                             std::size_t k) {
  if (relevant.empty()) throw ContractError("precision_recall_at_k: empty relevant set");
  if (k == 0) throw ContractError("precision_recall_at_k: k must be at least 1");
  const std::size_t n = std::min(k, ranked.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += relevant.count(ranked[i]);
  return {static_cast<double>(hits) / static_cast<double>(k),
          static_cast<double>(hits) / static_cast<double>(relevant.size())};
}

struct MetricReport {
  std::array<double, 4> precision{};  // percent, at kReportCutoffs
  std::array<double, 4> recall{};     // percent
  double sum_r = 0.0;
  std::size_t queries = 0;

  static double round2(double v) { return std::round(v * 100.0) / 100.0; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (std::size_t i = 0; i < kReportCutoffs.size(); ++i) {
      const auto k = std::to_string(kReportCutoffs[i]);
      j["P@" + k] = round2(precision[i]);
      j["R@" + k] = round2(recall[i]);
    }
    j["SumR"] = round2(sum_r);
    j["queries"] = queries;
    return j;
  }

  std::string to_table(const std::string& label = "") const {
    std::string out = "| System | P@10 | P@20 | P@50 | P@100 | R@10 | R@20 | R@50 | R@100 | SumR |\n"
                      "|---|---|---|---|---|---|---|---|---|---|\n| " +
                      (label.empty() ? std::string("-") : label);
    char buf[32];
    for (double v : precision) {
      std::snprintf(buf, sizeof buf, " | %.2f", v);
      out += buf;
    }
    for (double v : recall) {
      std::snprintf(buf, sizeof buf, " | %.2f", v);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, " | %.2f |\n", sum_r);
    return out + buf;
  }
};

inline double sum_r(const std::array<double, 4>& recall) {
  return std::accumulate(recall.begin(), recall.end(), 0.0);
}

inline MetricReport report_from_recalls(const std::array<double, 4>& precision, const std::array<double, 4>& recall,
                                        std::size_t queries) {
  MetricReport r;
  r.precision = precision;
  r.recall = recall;
  r.sum_r = sum_r(recall);
  r.queries = queries;
  return r;
}

struct QueryScores {
  std::array<double, 4> precision{};  // percent
  std::array<double, 4> recall{};
  double sum_r() const { return pincer::sum_r(recall); }
};

inline QueryScores score_query(std::span<const std::size_t> ranked, const RelevantSet& relevant) {
  QueryScores s;
  for (std::size_t i = 0; i < kReportCutoffs.size(); ++i) {
    const auto pr = precision_recall_at_k(ranked, relevant, kReportCutoffs[i]);
    s.precision[i] = 100.0 * pr.precision;
    s.recall[i] = 100.0 * pr.recall;
  }
  return s;
}

/// Macro average over queries.
inline MetricReport aggregate(std::span<const QueryScores> per_query) {
  if (per_query.empty()) throw ContractError("evaluate: no test queries");
  std::array<double, 4> p{}, r{};
  for (const auto& q : per_query) {
    for (std::size_t i = 0; i < 4; ++i) {
      p[i] += q.precision[i];
      r[i] += q.recall[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(per_query.size());
  for (std::size_t i = 0; i < 4; ++i) {
    p[i] *= inv;
    r[i] *= inv;
  }
  return report_from_recalls(p, r, per_query.size());
}

inline MetricReport evaluate_rankings(const std::vector<std::vector<std::size_t>>& rankings,
                                      const std::vector<RelevantSet>& relevant,
                                      std::vector<QueryScores>* per_query_out = nullptr) {
  if (rankings.size() != relevant.size()) throw ContractError("evaluate: rankings and judgments differ in count");
  std::vector<QueryScores> per_query;
  per_query.reserve(rankings.size());
  for (std::size_t q = 0; q < rankings.size(); ++q) per_query.push_back(score_query(rankings[q], relevant[q]));
  const auto report = aggregate(per_query);
  if (per_query_out) *per_query_out = std::move(per_query);
  return report;
}

// ------------------------------------------------------------ wilcoxon

enum class WilcoxonMethod { kAuto, kExact, kNormal };

struct WilcoxonResult {
  double statistic = 0.0;  // W+, sum of ranks of positive differences b - a
  double p_value = 1.0;    // two-sided
  std::size_t n = 0;       // non-zero differences
  bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactMax = 25;

/// Differences are b - a; zeros are dropped and tied magnitudes share their
/// average rank.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           WilcoxonMethod method = WilcoxonMethod::kAuto) {
  if (a.size() != b.size()) throw ContractError("wilcoxon: score vectors differ in length");
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw DataError("wilcoxon: non-finite score");
    if (b[i] != a[i]) diff.push_back(b[i] - a[i]);
  }
  if (diff.empty()) throw DegenerateInputError("wilcoxon: all paired differences are zero");
  const std::size_t n = diff.size();
  if (n < 5) throw ContractError("wilcoxon: need at least 5 non-zero differences, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(diff[i]) < std::abs(diff[j]); });
  // Ranks doubled so that averaged ties stay integral.
  std::vector<std::size_t> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diff[order[j + 1]]) == std::abs(diff[order[i]])) ++j;
    const std::size_t t = j - i + 1;
    for (std::size_t m = i; m <= j; ++m) rank2[order[m]] = i + j + 2;
    tie_term += static_cast<double>(t * t * t - t);
    i = j + 1;
  }
  std::size_t w2 = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (diff[i] > 0) w2 += rank2[i];

  WilcoxonResult out;
  out.n = n;
  out.statistic = static_cast<double>(w2) / 2.0;
  out.exact = method == WilcoxonMethod::kExact || (method == WilcoxonMethod::kAuto && n <= kWilcoxonExactMax);
  if (out.exact) {
    // Distribution of 2W+ over all 2^n sign patterns.
    const std::size_t total2 = n * (n + 1);
    std::vector<double> count(total2 + 1, 0.0);
    count[0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = total2; s + 1 > rank2[i]; --s) count[s] += count[s - rank2[i]];
    }
    const double patterns = std::ldexp(1.0, static_cast<int>(n));
    double lower = 0.0, upper = 0.0;
    for (std::size_t s = 0; s <= total2; ++s) {
      if (s <= w2) lower += count[s];
      if (s >= w2) upper += count[s];
    }
    out.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / patterns);
  } else {
    const double nd = static_cast<double>(n);
    const double mean = nd * (nd + 1.0) / 4.0;
    const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0.0)) throw DegenerateInputError("wilcoxon: zero variance");
    const double z = std::max(0.0, std::abs(out.statistic - mean) - 0.5) / std::sqrt(var);
    out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return out;
}

}  // namespace pincer
