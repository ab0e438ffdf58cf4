#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pincer/retrieval.hpp"

using namespace pincer;

namespace {

std::vector<double> unit(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  double s = 0;
  for (auto& x : v) {
    x = normal(rng);
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

ProductIndex random_index(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<float> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = unit(dim, rng);
    rows.insert(rows.end(), v.begin(), v.end());
  }
  return ProductIndex(std::move(rows), dim);
}

// Sort oracle over the same float dot products.
std::vector<std::size_t> sort_oracle(std::span<const double> q, const ProductIndex& index, std::size_t k) {
  std::vector<float> qf(q.begin(), q.end());
  std::vector<std::pair<float, std::size_t>> all;
  for (std::size_t i = 0; i < index.size(); ++i)
    all.emplace_back(detail::dot_f32(qf.data(), index.row(i).data(), index.dim()), i);
  std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
  return out;
}

}  // namespace

TEST(Retrieval, SelfIsRankOne) {
  Rng rng(1);
  const auto index = random_index(200, 8, rng);
  const auto r = index.row(37);
  const std::vector<double> q(r.begin(), r.end());
  const auto res = topk_full(q, index, 5);
  EXPECT_EQ(res.ids[0], 37u);
  EXPECT_NEAR(res.scores[0], 1.0, 1e-6);
}

TEST(Retrieval, KEqualsNIsPermutation) {
  Rng rng(2);
  const auto index = random_index(50, 4, rng);
  const auto res = topk_full(unit(4, rng), index, 50);
  auto ids = res.ids;
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(ids[i], i);
  EXPECT_FALSE(res.truncated);
  EXPECT_TRUE(std::is_sorted(res.scores.rbegin(), res.scores.rend()));
}

TEST(Retrieval, KAboveNTruncates) {
  Rng rng(3);
  const auto index = random_index(7, 4, rng);
  const auto res = topk_full(unit(4, rng), index, 10);
  EXPECT_EQ(res.ids.size(), 7u);
  EXPECT_TRUE(res.truncated);
}

TEST(Retrieval, TiesGoToLowestId) {
  ProductIndex index({1, 0, 0, 1, 1, 0, 1, 0}, 2);
  const auto res = topk_full(std::vector<double>{1, 0}, index, 2);
  EXPECT_EQ(res.ids, (std::vector<std::size_t>{0, 2}));
}

TEST(Retrieval, FullMatchesSortOracle) {
  Rng rng(4);
  for (std::size_t n : {1u, 10u, 333u, 2000u}) {
    const auto index = random_index(n, 16, rng);
    for (std::size_t k : {1u, 10u, 100u}) {
      for (int t = 0; t < 5; ++t) {
        const auto q = unit(16, rng);
        EXPECT_EQ(topk_full(q, index, k).ids, sort_oracle(q, index, k));
      }
    }
  }
}

TEST(Retrieval, ClusteredWithAllProbesEqualsFull) {
  Rng rng(5);
  auto index = random_index(1500, 12, rng);
  index.build_clusters(init_uniform(8, 12, 6));
  for (int t = 0; t < 20; ++t) {
    const auto q = unit(12, rng);
    const auto full = topk_full(q, index, 100);
    const auto clus = topk_clustered(q, index, 100, 8);
    EXPECT_EQ(full.ids, clus.ids);
    EXPECT_EQ(full.scores, clus.scores);
  }
}

TEST(Retrieval, ClusterMapPartitionsRows) {
  Rng rng(6);
  auto index = random_index(400, 6, rng);
  index.build_clusters(init_uniform(5, 6, 2));
  std::vector<int> seen(400, 0);
  for (std::size_t k = 0; k < index.cluster_count(); ++k)
    for (auto id : index.cluster_members(k)) ++seen[id];
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Retrieval, SingleProbeAtCentroidScansThatCluster) {
  Rng rng(7);
  auto index = random_index(600, 6, rng);
  const auto book = init_uniform(6, 6, 3);
  index.build_clusters(book);
  const std::vector<double> q(book.vector(2).begin(), book.vector(2).end());
  const auto res = topk_clustered(q, index, 600, 1);
  EXPECT_EQ(res.candidates, index.cluster_members(2).size());
  auto ids = res.ids;
  std::vector<std::size_t> members(index.cluster_members(2).begin(), index.cluster_members(2).end());
  std::sort(ids.begin(), ids.end());
  std::sort(members.begin(), members.end());
  EXPECT_EQ(ids, members);
  EXPECT_TRUE(res.truncated);
}

TEST(Retrieval, MoreProbesNeverLoseRecall) {
  Rng rng(8);
  auto index = random_index(1000, 8, rng);
  index.build_clusters(init_uniform(10, 8, 4));
  for (int t = 0; t < 30; ++t) {
    const auto q = unit(8, rng);
    const auto exact = topk_full(q, index, 50).ids;
    std::size_t prev = 0;
    for (std::size_t p = 1; p <= 10; ++p) {
      const auto ids = topk_clustered(q, index, 50, p).ids;
      std::size_t hits = 0;
      for (auto id : ids) hits += std::count(exact.begin(), exact.end(), id);
      EXPECT_GE(hits, prev);
      prev = hits;
    }
    EXPECT_EQ(prev, 50u);
  }
}

TEST(Retrieval, ClusteredWithoutMapIsStateError) {
  Rng rng(9);
  const auto index = random_index(10, 4, rng);
  EXPECT_THROW(topk_clustered(unit(4, rng), index, 3, 1), StateError);
}

TEST(Bench, ReportShapes) {
  Rng rng(10);
  auto index = random_index(300, 8, rng);
  index.build_clusters(init_uniform(4, 8, 1));
  EXPECT_TRUE(bench({}, index, {ScanMode::kFull}, 3, 10, 1).empty());
  const std::vector<std::vector<double>> qs{unit(8, rng), unit(8, rng)};
  const auto reports = bench(qs, index, {ScanMode::kFull, ScanMode::kClustered}, 1, 10, 4);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].samples_us.size(), 2u);
  EXPECT_EQ(reports[0].mean_recall_at_k, 1.0);
  EXPECT_EQ(reports[1].mean_recall_at_k, 1.0);
  const auto j = reports[1].to_json();
  for (const char* key : {"mode", "N", "K", "n_probe", "k", "p50_us", "p95_us", "mean_recall_at_k"}) EXPECT_TRUE(j.contains(key));
  EXPECT_EQ(j["mode"], "clustered");
}

TEST(Bench, PercentileNearestRank) {
  EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 0.5), 3.0);
  EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 0.95), 5.0);
}
