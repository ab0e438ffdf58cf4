#pragma once

// Synthetic catalog and click-stream generator. Products get template titles
// and textured grayscale images; queries rank their category by token
// overlap, keep a page-sized impression set, filter it by an image
// statistic (the latent purchase intention) and add 1-5 survivors to cart.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "pincer/corpus.hpp"
#include "pincer/image.hpp"
#include "pincer/random.hpp"

namespace pincer {

namespace vocab {
inline const std::vector<std::string> kCategories{"shirt", "dress", "jacket", "shoes", "bag"};
inline const std::vector<std::string> kColors{"red", "blue", "green", "black", "white", "grey", "yellow", "pink"};
inline const std::vector<std::string> kMaterials{"cotton", "linen", "leather", "denim", "wool", "silk"};
inline const std::vector<std::string> kStyles{"casual", "formal", "vintage", "sporty", "classic", "modern"};
}  // namespace vocab

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImpressionPages = 5;
inline constexpr std::size_t kPageSize = 20;

/// Pixels are stored as 8-bit levels; the synthesized image is quantized
/// before anything measures it.
inline double quantize_pixel(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

/// Horizontal or vertical sinusoid of period 4 or 8 around `brightness`.
inline GrayImage synth_image(double brightness, double amplitude, std::size_t period, bool vertical) {
  GrayImage img{kImageSide, kImageSide, std::vector<double>(kImageSide * kImageSide)};
  for (std::size_t y = 0; y < kImageSide; ++y) {
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const double phase = 2.0 * std::numbers::pi * static_cast<double>(vertical ? y : x) / static_cast<double>(period);
      img.pixels[y * kImageSide + x] = quantize_pixel(brightness + amplitude * std::sin(phase));
    }
  }
  return img;
}

/// Deterministic catalog; product i belongs to category i mod 5. Brightness
/// ~ U(0.2, 0.8) and texture amplitude ~ U(0, 0.2) are drawn independently.
inline std::vector<CatalogProduct> synth_catalog(std::size_t n_products, std::uint64_t seed) {
  if (n_products < 10) throw ConfigError("synth_catalog: need at least 10 products");
  Rng rng(derive_seed(seed, 50));
  std::vector<CatalogProduct> out;
  out.reserve(n_products);
  for (std::size_t i = 0; i < n_products; ++i) {
    CatalogProduct p;
    p.id = i;
    p.category = vocab::kCategories[i % vocab::kCategories.size()];
    const auto& style = vocab::kStyles[uniform_index(rng, vocab::kStyles.size())];
    const auto& color = vocab::kColors[uniform_index(rng, vocab::kColors.size())];
    const auto& material = vocab::kMaterials[uniform_index(rng, vocab::kMaterials.size())];
    p.title = style + " " + color + " " + material + " " + p.category;
    const double brightness = uniform(rng, 0.2, 0.8);
    const double amplitude = uniform(rng, 0.0, 0.2);
    const std::size_t period = uniform_index(rng, 2) == 0 ? 4 : 8;
    const bool vertical = uniform_index(rng, 2) == 1;
    p.image = synth_image(brightness, amplitude, period, vertical);
    out.push_back(std::move(p));
  }
  return out;
}

// ------------------------------------------------------------ PI function

enum class PiKind { kBrightness, kMeanGradient };
enum class PiDirection { kPreferHigh, kPreferLow };

inline const char* to_string(PiKind k) { return k == PiKind::kBrightness ? "brightness" : "mean_gradient"; }
inline const char* to_string(PiDirection d) { return d == PiDirection::kPreferHigh ? "prefer_high" : "prefer_low"; }

inline PiKind parse_pi_kind(const std::string& s) {
  if (s == "brightness") return PiKind::kBrightness;
  if (s == "mean_gradient") return PiKind::kMeanGradient;
  throw ConfigError("pi_kind must be 'brightness' or 'mean_gradient', got '" + s + "'");
}

inline PiDirection parse_pi_direction(const std::string& s) {
  if (s == "prefer_high") return PiDirection::kPreferHigh;
  if (s == "prefer_low") return PiDirection::kPreferLow;
  throw ConfigError("pi_direction must be 'prefer_high' or 'prefer_low', got '" + s + "'");
}

struct PiFunction {
  PiKind kind = PiKind::kBrightness;
  PiDirection direction = PiDirection::kPreferHigh;
  double selectivity_quantile = 0.25;  // fraction of the impression set kept

  void validate() const {
    if (!(selectivity_quantile > 0.0 && selectivity_quantile <= 1.0)) {
      throw ConfigError("selectivity_quantile must lie in (0, 1]");
    }
  }

  double statistic(const ImageStats& s) const { return kind == PiKind::kBrightness ? s.brightness : s.mean_gradient; }

  /// Cut value over a set of statistics: the ceil(q * n)-th most preferred
  /// value. A product satisfies the predicate when it is at least as
  /// preferred as the cut.
  double threshold(std::vector<double> values) const {
    if (values.empty()) throw EmptyInputError("PI threshold of an empty impression set");
    const bool high = direction == PiDirection::kPreferHigh;
    std::sort(values.begin(), values.end(), [high](double a, double b) { return high ? a > b : a < b; });
    const auto keep = static_cast<std::size_t>(std::ceil(selectivity_quantile * static_cast<double>(values.size()) - 1e-9));
    return values[std::clamp<std::size_t>(keep, 1, values.size()) - 1];
  }

  bool satisfies(double value, double cut) const {
    return direction == PiDirection::kPreferHigh ? value >= cut : value <= cut;
  }
};

// ------------------------------------------------------------ pairs

struct GeneratedQuery {
  std::string text;
  std::string category;
  std::vector<std::size_t> impressions;  // ranked, best first
  std::vector<std::size_t> atc;          // relevant products
  double threshold = 0.0;
};

enum class Split { kTrain, kVal, kTest };

struct PairDataset {
  std::vector<GeneratedQuery> queries;
  std::vector<Split> split;  // per query
  std::vector<std::string> warnings;

  std::vector<QueryProductPair> pairs(Split s) const {
    std::vector<QueryProductPair> out;
    for (std::size_t q = 0; q < queries.size(); ++q)
      if (split[q] == s)
        for (auto id : queries[q].atc) out.push_back({queries[q].text, id});
    return out;
  }
};

struct DatagenConfig {
  std::size_t n_products = 1000;
  std::size_t queries_per_group = 170;
  PiFunction pi;
  std::uint64_t seed = 0;
};

inline std::set<std::string> token_set(const std::string& text) {
  const auto words = split_words(text);
  return {words.begin(), words.end()};
}

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t inter = 0;
  for (const auto& w : a) inter += b.count(w);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

inline std::string template_query(const std::string& category, Rng& rng) {
  // Draws happen in a fixed order; operands of + are unsequenced.
  const auto kind = uniform_index(rng, 6);
  const auto& color = vocab::kColors[uniform_index(rng, vocab::kColors.size())];
  const auto& material = vocab::kMaterials[uniform_index(rng, vocab::kMaterials.size())];
  const auto& style = vocab::kStyles[uniform_index(rng, vocab::kStyles.size())];
  switch (kind) {
    case 0: return color + " " + material + " " + category;
    case 1: return "best " + category + " for " + style;
    case 2: return style + " " + color + " " + category;
    case 3: return color + " " + category;
    case 4: return color + " " + material + " " + category + " for " + style;
    default: return material + " " + category + " " + style + " look";
  }
}

/// Raises StateError unless every ATC product lies in its impression set and
/// passes the PI predicate against that set's cut.
inline void verify_pi_integrity(const PairDataset& data, const std::vector<CatalogProduct>& catalog, const PiFunction& pi) {
  for (const auto& q : data.queries) {
    std::vector<double> stats;
    for (auto id : q.impressions) stats.push_back(pi.statistic(image_stats(catalog.at(id).image)));
    const double cut = pi.threshold(stats);
    for (auto id : q.atc) {
      if (std::find(q.impressions.begin(), q.impressions.end(), id) == q.impressions.end()) {
        throw StateError("PI integrity: product " + std::to_string(id) + " for query '" + q.text +
                         "' is not in its impression set");
      }
      const double v = pi.statistic(image_stats(catalog.at(id).image));
      if (!pi.satisfies(v, cut)) {
        throw StateError("PI integrity: product " + std::to_string(id) + " for query '" + q.text + "' has " +
                         to_string(pi.kind) + "=" + std::to_string(v) + " beyond cut " + std::to_string(cut));
      }
    }
  }
}

/// Per category: unique template queries, Jaccard-ranked impression sets
/// (ties broken by a seeded random key), PI filter, 1-5 ATC products.
/// Queries are split 80/10/10.
inline PairDataset generate_pairs(const std::vector<CatalogProduct>& catalog, std::size_t queries_per_group,
                                  const PiFunction& pi, std::uint64_t seed) {
  pi.validate();
  if (catalog.empty()) throw ConfigError("generate_pairs: empty catalog");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (const auto& p : catalog) groups[p.category].push_back(p.id);
  std::vector<std::set<std::string>> titles;
  std::vector<double> stat;
  for (const auto& p : catalog) {
    titles.push_back(token_set(p.title));
    stat.push_back(pi.statistic(image_stats(p.image)));
  }
  PairDataset data;
  const std::size_t impression_size = kImpressionPages * kPageSize;
  // Categories in vocabulary order so the output does not depend on map order.
  std::vector<std::string> order;
  for (const auto& c : vocab::kCategories)
    if (groups.count(c)) order.push_back(c);
  for (const auto& [c, ids] : groups)
    if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);
  for (std::size_t g = 0; g < order.size(); ++g) {
    const auto& category = order[g];
    const auto& members = groups[category];
    Rng rng(derive_seed(seed, 100 + g));
    const std::size_t shown = std::min(impression_size, members.size());
    if (shown < impression_size) {
      data.warnings.push_back("category '" + category + "' has " + std::to_string(members.size()) +
                              " products; impression set shrunk to " + std::to_string(shown));
    }
    std::set<std::string> seen;
    std::size_t attempts = 0;
    while (seen.size() < queries_per_group && attempts < 50 * queries_per_group) {
      ++attempts;
      const auto text = template_query(category, rng);
      if (!seen.insert(text).second) continue;
      const auto qt = token_set(text);
      std::vector<std::tuple<double, double, std::size_t>> ranked;  // (-score, key, id)
      for (auto id : members) ranked.emplace_back(-jaccard(qt, titles[id]), uniform01(rng), id);
      std::sort(ranked.begin(), ranked.end());
      GeneratedQuery q;
      q.text = text;
      q.category = category;
      std::vector<double> shown_stats;
      for (std::size_t i = 0; i < shown; ++i) {
        q.impressions.push_back(std::get<2>(ranked[i]));
        shown_stats.push_back(stat[q.impressions.back()]);
      }
      q.threshold = pi.threshold(shown_stats);
      std::vector<std::size_t> survivors;
      for (auto id : q.impressions)
        if (pi.satisfies(stat[id], q.threshold)) survivors.push_back(id);
      shuffle(survivors, rng);
      const std::size_t n_atc = std::min<std::size_t>(1 + uniform_index(rng, 5), survivors.size());
      q.atc.assign(survivors.begin(), survivors.begin() + static_cast<std::ptrdiff_t>(n_atc));
      std::sort(q.atc.begin(), q.atc.end());
      data.queries.push_back(std::move(q));
    }
    if (seen.size() < queries_per_group) {
      data.warnings.push_back("category '" + category + "': only " + std::to_string(seen.size()) +
                              " distinct queries available");
    }
  }
  // 80/10/10 by query.
  std::vector<std::size_t> perm(data.queries.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng(derive_seed(seed, 99));
  shuffle(perm, split_rng);
  data.split.assign(data.queries.size(), Split::kTrain);
  const std::size_t n = perm.size();
  const std::size_t n_val = n / 10, n_test = n / 10;
  for (std::size_t i = 0; i < n_val; ++i) data.split[perm[i]] = Split::kVal;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) data.split[perm[i]] = Split::kTest;
  verify_pi_integrity(data, catalog, pi);
  return data;
}

// ------------------------------------------------------------ files
//
// catalog.jsonl      {"id","title","category","image":{"height","width","levels":[0..255]}}
// pairs-<split>.jsonl {"query","product_id"}
// qrels.jsonl        {"query","split","relevant":[ids]}
// impressions.jsonl  {"query","category","impressions":[ids],"threshold"}

inline const char* split_name(Split s) { return s == Split::kTrain ? "train" : s == Split::kVal ? "val" : "test"; }

inline nlohmann::json product_to_json(const CatalogProduct& p) {
  std::vector<int> levels;
  levels.reserve(p.image.pixels.size());
  for (double v : p.image.pixels) levels.push_back(static_cast<int>(std::lround(v * 255.0)));
  return {{"id", p.id},
          {"title", p.title},
          {"category", p.category},
          {"image", {{"height", p.image.height}, {"width", p.image.width}, {"levels", levels}}}};
}

inline CatalogProduct product_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    CatalogProduct p;
    p.id = j.at("id").get<std::size_t>();
    p.title = j.at("title").get<std::string>();
    p.category = j.at("category").get<std::string>();
    const auto& img = j.at("image");
    p.image.height = img.at("height").get<std::size_t>();
    p.image.width = img.at("width").get<std::size_t>();
    for (int v : img.at("levels").get<std::vector<int>>()) {
      if (v < 0 || v > 255) throw DataError(where + ": pixel level outside 0..255");
      p.image.pixels.push_back(static_cast<double>(v) / 255.0);
    }
    validate_image(p.image);
    if (p.title.empty()) throw DataError(where + ": empty title");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
}

namespace detail {

inline void write_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f << out;
  if (!f) throw DataError("write failed for '" + path.string() + "'");
}

inline std::vector<nlohmann::json> read_lines(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path.string() + "'");
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace detail

inline void write_dataset(const std::filesystem::path& dir, const std::vector<CatalogProduct>& catalog,
                          const PairDataset& data) {
  std::filesystem::create_directories(dir);
  std::vector<nlohmann::json> rows;
  for (const auto& p : catalog) rows.push_back(product_to_json(p));
  detail::write_lines(dir / "catalog.jsonl", rows);
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
    rows.clear();
    for (const auto& pair : data.pairs(s)) rows.push_back({{"query", pair.query}, {"product_id", pair.product_id}});
    detail::write_lines(dir / (std::string("pairs-") + split_name(s) + ".jsonl"), rows);
  }
  rows.clear();
  std::vector<nlohmann::json> impressions;
  for (std::size_t q = 0; q < data.queries.size(); ++q) {
    const auto& g = data.queries[q];
    rows.push_back({{"query", g.text}, {"split", split_name(data.split[q])}, {"relevant", g.atc}});
    impressions.push_back(
        {{"query", g.text}, {"category", g.category}, {"impressions", g.impressions}, {"threshold", g.threshold}});
  }
  detail::write_lines(dir / "qrels.jsonl", rows);
  detail::write_lines(dir / "impressions.jsonl", impressions);
}

inline std::vector<CatalogProduct> read_catalog(const std::filesystem::path& path) {
  std::vector<CatalogProduct> out;
  const auto rows = detail::read_lines(path);
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(product_from_json(rows[i], path.string() + ":" + std::to_string(i + 1)));
  return out;
}

inline std::vector<QueryProductPair> read_pairs(const std::filesystem::path& path) {
  std::vector<QueryProductPair> out;
  for (const auto& r : detail::read_lines(path)) {
    try {
      out.push_back({r.at("query").get<std::string>(), r.at("product_id").get<std::size_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

/// Judged query with its relevant products.
struct JudgedQuery {
  std::string query;
  std::vector<std::size_t> relevant;
};

inline std::vector<JudgedQuery> read_qrels(const std::filesystem::path& path, const std::string& split) {
  std::vector<JudgedQuery> out;
  for (const auto& r : detail::read_lines(path)) {
    try {
      if (r.at("split").get<std::string>() != split) continue;
      out.push_back({r.at("query").get<std::string>(), r.at("relevant").get<std::vector<std::size_t>>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<JudgedQuery> judged_queries(const PairDataset& data, Split s) {
  std::vector<JudgedQuery> out;
  for (std::size_t q = 0; q < data.queries.size(); ++q)
    if (data.split[q] == s) out.push_back({data.queries[q].text, data.queries[q].atc});
  return out;
}

}  // namespace pincer
