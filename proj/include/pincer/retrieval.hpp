#pragma once

// Product index with exhaustive and intent-clustered top-k scans, and a
// latency benchmark over both.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pincer/errors.hpp"
#include "pincer/intent_codebook.hpp"

namespace pincer {

enum class ScanMode { kFull, kClustered };

inline const char* to_string(ScanMode m) { return m == ScanMode::kFull ? "full" : "clustered"; }

inline ScanMode parse_scan_mode(const std::string& s) {
  if (s == "full") return ScanMode::kFull;
  if (s == "clustered") return ScanMode::kClustered;
  throw ConfigError("unknown retrieval mode '" + s + "' (expected full or clustered)");
}

struct RetrievalResult {
  std::vector<std::size_t> ids;
  std::vector<double> scores;  // non-increasing
  std::size_t k = 0;
  double elapsed_us = 0.0;
  ScanMode mode = ScanMode::kFull;
  bool truncated = false;  // fewer than k candidates
  std::size_t candidates = 0;
};

class ProductIndex {
 public:
  ProductIndex() = default;

  /// `rows` is N x dim; product id = row number. Rows are normalized.
  ProductIndex(std::vector<float> rows, std::size_t dim) : dim_(dim), rows_(std::move(rows)) {
    if (dim_ == 0) throw ContractError("ProductIndex: dim must be positive");
    if (rows_.size() % dim_ != 0) throw DimensionError("ProductIndex: row data is not a multiple of dim");
    for (std::size_t i = 0; i < size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) s += static_cast<double>(rows_[i * dim_ + j]) * rows_[i * dim_ + j];
      if (!(s > 0.0) || !std::isfinite(s)) throw DataError("ProductIndex: row " + std::to_string(i) + " is zero or non-finite");
      const auto inv = static_cast<float>(1.0 / std::sqrt(s));
      for (std::size_t j = 0; j < dim_; ++j) rows_[i * dim_ + j] *= inv;
    }
  }

  std::size_t size() const { return dim_ ? rows_.size() / dim_ : 0; }
  std::size_t dim() const { return dim_; }
  std::span<const float> row(std::size_t id) const { return std::span<const float>(rows_).subspan(id * dim_, dim_); }
  const std::vector<float>& rows() const { return rows_; }

  /// Groups rows by nearest codebook vector. Rows are copied in cluster order
  /// so each probed cluster is one contiguous scan.
  void build_clusters(const IntentCodebook& book) {
    if (book.dim() != dim_) throw DimensionError("build_clusters: codebook width differs from index width");
    const auto assignment = assign_clusters(std::span<const float>(rows_), dim_, book);
    centroids_.assign(book.size() * dim_, 0.0f);
    for (std::size_t k = 0; k < book.size(); ++k)
      for (std::size_t j = 0; j < dim_; ++j) centroids_[k * dim_ + j] = static_cast<float>(book.vector(k)[j]);
    cluster_begin_.assign(1, 0);
    clustered_ids_.clear();
    clustered_rows_.clear();
    clustered_rows_.reserve(rows_.size());
    for (const auto& members : assignment.members) {
      for (auto id : members) {
        clustered_ids_.push_back(id);
        const auto r = row(id);
        clustered_rows_.insert(clustered_rows_.end(), r.begin(), r.end());
      }
      cluster_begin_.push_back(clustered_ids_.size());
    }
    assignment_ = assignment.assignment;
  }

  bool has_clusters() const { return !centroids_.empty(); }
  std::size_t cluster_count() const { return cluster_begin_.empty() ? 0 : cluster_begin_.size() - 1; }
  std::span<const std::size_t> cluster_members(std::size_t k) const {
    return std::span<const std::size_t>(clustered_ids_).subspan(cluster_begin_[k], cluster_begin_[k + 1] - cluster_begin_[k]);
  }
  const std::vector<std::size_t>& assignment() const { return assignment_; }
  std::span<const float> centroid(std::size_t k) const { return std::span<const float>(centroids_).subspan(k * dim_, dim_); }

  /// Clusters ordered by centroid distance to `q`, nearest first, ties by
  /// lower cluster index.
  std::vector<std::size_t> probe_order(std::span<const float> q) const {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t k = 0; k < cluster_count(); ++k) {
      double s = 0.0;
      const auto c = centroid(k);
      for (std::size_t j = 0; j < dim_; ++j) s += (static_cast<double>(q[j]) - c[j]) * (static_cast<double>(q[j]) - c[j]);
      d.emplace_back(s, k);
    }
    std::sort(d.begin(), d.end());
    std::vector<std::size_t> out;
    for (const auto& [dist, k] : d) out.push_back(k);
    return out;
  }

  const std::vector<float>& clustered_rows() const { return clustered_rows_; }
  const std::vector<std::size_t>& clustered_ids() const { return clustered_ids_; }
  std::size_t cluster_begin(std::size_t k) const { return cluster_begin_[k]; }

 private:
  std::size_t dim_ = 0;
  std::vector<float> rows_;
  std::vector<float> centroids_;
  std::vector<std::size_t> cluster_begin_;
  std::vector<std::size_t> clustered_ids_;
  std::vector<float> clustered_rows_;
  std::vector<std::size_t> assignment_;
};

namespace detail {

inline float dot_f32(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (int u = 0; u < 8; ++u) acc[u] += a[j + u] * b[j + u];
  float s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; j < n; ++j) s += a[j] * b[j];
  return s;
}

/// Bounded top-k: (score desc, id asc).
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  void push(float score, std::size_t id) {
    if (heap_.size() == k_) {
      const auto& worst = heap_.front();
      if (score < worst.first || (score == worst.first && id > worst.second)) return;
    }
    heap_.emplace_back(score, id);
    std::push_heap(heap_.begin(), heap_.end(), better);
    if (heap_.size() > k_) {
      std::pop_heap(heap_.begin(), heap_.end(), better);
      heap_.pop_back();
    }
  }

  void finish(RetrievalResult& out) {
    std::sort_heap(heap_.begin(), heap_.end(), better);
    for (const auto& [s, id] : heap_) {
      out.ids.push_back(id);
      out.scores.push_back(s);
    }
  }

 private:
  // Max-heap on "worse", so the front is the current worst kept entry.
  static bool better(const std::pair<float, std::size_t>& a, const std::pair<float, std::size_t>& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  }
  std::size_t k_;
  std::vector<std::pair<float, std::size_t>> heap_;
};

inline std::vector<float> to_f32(std::span<const double> q) { return {q.begin(), q.end()}; }

}  // namespace detail

inline RetrievalResult topk_full(std::span<const double> query, const ProductIndex& index, std::size_t k) {
  if (k == 0) throw ContractError("topk: k must be at least 1");
  if (query.size() != index.dim()) throw DimensionError("topk: query width differs from index width");
  const auto start = std::chrono::steady_clock::now();
  const auto q = detail::to_f32(query);
  const std::size_t n = index.size(), dim = index.dim();
  detail::TopK top(k);
  const float* rows = index.rows().data();
  for (std::size_t i = 0; i < n; ++i) top.push(detail::dot_f32(q.data(), rows + i * dim, dim), i);
  RetrievalResult out;
  out.k = k;
  out.mode = ScanMode::kFull;
  out.candidates = n;
  top.finish(out);
  out.truncated = n < k;
  out.elapsed_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline RetrievalResult topk_clustered(std::span<const double> query, const ProductIndex& index, std::size_t k,
                                      std::size_t n_probe) {
  if (k == 0) throw ContractError("topk: k must be at least 1");
  if (!index.has_clusters()) throw StateError("topk_clustered: index has no cluster map");
  if (n_probe == 0) throw ConfigError("n_probe must be at least 1");
  if (query.size() != index.dim()) throw DimensionError("topk: query width differs from index width");
  const auto start = std::chrono::steady_clock::now();
  const auto q = detail::to_f32(query);
  const auto order = index.probe_order(q);
  const std::size_t dim = index.dim();
  detail::TopK top(k);
  const float* rows = index.clustered_rows().data();
  const auto& ids = index.clustered_ids();
  std::size_t candidates = 0;
  for (std::size_t p = 0; p < std::min(n_probe, order.size()); ++p) {
    const auto c = order[p];
    for (std::size_t r = index.cluster_begin(c); r < index.cluster_begin(c + 1); ++r) {
      top.push(detail::dot_f32(q.data(), rows + r * dim, dim), ids[r]);
    }
    candidates += index.cluster_begin(c + 1) - index.cluster_begin(c);
  }
  RetrievalResult out;
  out.k = k;
  out.mode = ScanMode::kClustered;
  out.candidates = candidates;
  top.finish(out);
  out.truncated = candidates < k;
  out.elapsed_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline RetrievalResult topk(std::span<const double> query, const ProductIndex& index, std::size_t k, ScanMode mode,
                            std::size_t n_probe) {
  return mode == ScanMode::kFull ? topk_full(query, index, k) : topk_clustered(query, index, k, n_probe);
}

// ------------------------------------------------------------ benchmark

struct BenchReport {
  ScanMode mode = ScanMode::kFull;
  std::size_t n = 0;
  std::size_t clusters = 0;
  std::size_t n_probe = 0;
  std::size_t k = 0;
  double p50_us = 0.0;
  double p95_us = 0.0;
  double mean_recall_at_k = 0.0;
  std::vector<double> samples_us;

  nlohmann::json to_json() const {
    return {{"mode", to_string(mode)}, {"N", n},           {"K", clusters},       {"n_probe", n_probe},
            {"k", k},                  {"p50_us", p50_us}, {"p95_us", p95_us}, {"mean_recall_at_k", mean_recall_at_k}};
  }
};

/// Nearest-rank percentile.
inline double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size())));
  return xs[std::clamp<std::size_t>(rank, 1, xs.size()) - 1];
}

/// Times the scan alone, `repetitions` times per query and mode. Recall is
/// the fraction of the exact full-scan top-k recovered by each mode.
inline std::vector<BenchReport> bench(const std::vector<std::vector<double>>& queries, const ProductIndex& index,
                                      const std::vector<ScanMode>& modes, std::size_t repetitions, std::size_t k,
                                      std::size_t n_probe) {
  std::vector<BenchReport> out;
  if (queries.empty()) return out;
  if (repetitions == 0) throw ConfigError("bench: repetitions must be at least 1");
  std::vector<std::vector<std::size_t>> exact;
  for (const auto& q : queries) exact.push_back(topk_full(q, index, k).ids);
  for (auto mode : modes) {
    BenchReport rep;
    rep.mode = mode;
    rep.n = index.size();
    rep.clusters = index.cluster_count();
    rep.n_probe = mode == ScanMode::kClustered ? n_probe : rep.clusters;
    rep.k = k;
    double recall = 0.0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      RetrievalResult last;
      for (std::size_t r = 0; r < repetitions; ++r) {
        last = topk(queries[qi], index, k, mode, n_probe);
        rep.samples_us.push_back(last.elapsed_us);
      }
      std::vector<std::size_t> a = exact[qi], b = last.ids;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      std::vector<std::size_t> inter;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
      recall += a.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(a.size());
    }
    rep.p50_us = percentile(rep.samples_us, 0.50);
    rep.p95_us = percentile(rep.samples_us, 0.95);
    rep.mean_recall_at_k = recall / static_cast<double>(queries.size());
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace pincer
