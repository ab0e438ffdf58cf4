#pragma once

// Granular product features: every title token and image patch of every
// catalog product, projected into its half-space, with product provenance.
// Lookup is an exact scan.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <sstream>
#include <vector>

#include "pincer/archive.hpp"
#include "pincer/corpus.hpp"
#include "pincer/encoders.hpp"

namespace pincer {

inline constexpr std::uint32_t kFeatureStoreVersion = 1;

struct FeatureStore {
  std::size_t d = 0;
  std::vector<float> text;   // text_count x d
  std::vector<float> image;  // image_count x d
  // Per product [begin, end) ranges into text/image rows; size products + 1.
  std::vector<std::uint64_t> text_offsets{0};
  std::vector<std::uint64_t> image_offsets{0};

  std::size_t product_count() const { return text_offsets.size() - 1; }
  std::size_t text_count() const { return d ? text.size() / d : 0; }
  std::size_t image_count() const { return d ? image.size() / d : 0; }
  std::span<const float> text_row(std::size_t r) const { return std::span<const float>(text).subspan(r * d, d); }
  std::span<const float> image_row(std::size_t r) const { return std::span<const float>(image).subspan(r * d, d); }

  void add_product(const std::vector<Embedding>& text_features, const std::vector<Embedding>& image_features) {
    if (text_features.empty() || image_features.empty()) {
      throw ContractError("feature store: every product needs at least one text and one image feature");
    }
    for (const auto* group : {&text_features, &image_features}) {
      auto& dest = group == &text_features ? text : image;
      for (const auto& e : *group) {
        if (e.values.size() != d) throw DimensionError("feature store: feature width differs from d");
        for (double v : e.values) dest.push_back(static_cast<float>(v));
      }
    }
    text_offsets.push_back(text_count());
    image_offsets.push_back(image_count());
  }
};

/// Encodes every catalog product with the (trained) encoder in eval mode.
inline FeatureStore build_feature_store(const EncodedCatalog& catalog, const EncoderParams& params) {
  if (catalog.size() == 0) throw ConfigError("feature store: empty catalog");
  FeatureStore store;
  store.d = params.config.d;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto enc = encode_product(catalog.titles[i], catalog.images[i], params);
    store.add_product(enc.text_features, enc.image_features);
  }
  return store;
}

struct FeatureHit {
  std::size_t product = 0;
  std::size_t feature = 0;  // index within the product's text or image list
  double score = 0.0;
  std::vector<double> values;
};

struct TokenFeatures {
  std::vector<FeatureHit> text;   // best first
  std::vector<FeatureHit> image;  // best first
};

struct FeatureQueryResult {
  std::vector<TokenFeatures> tokens;
};

namespace detail {

/// Top `m` rows by cosine similarity. Rows are stored in (product, feature)
/// order, so ties resolve to the lower row.
inline std::vector<FeatureHit> scan_top(std::span<const double> q, std::span<const float> rows, std::size_t d,
                                        const std::vector<std::uint64_t>& offsets, std::size_t m) {
  const std::size_t n = rows.size() / d;
  double qn = 0.0;
  for (double v : q) qn += v * v;
  qn = std::sqrt(qn);
  if (qn == 0.0) throw DegenerateInputError("retrieve_features: zero query token vector");
  std::vector<std::pair<double, std::size_t>> best;  // (score, row), best first
  best.reserve(m + 1);
  auto better = [](const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  };
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0, rn = 0.0;
    const float* row = &rows[r * d];
    for (std::size_t j = 0; j < d; ++j) {
      s += q[j] * static_cast<double>(row[j]);
      rn += static_cast<double>(row[j]) * static_cast<double>(row[j]);
    }
    s = rn > 0.0 ? std::clamp(s / (qn * std::sqrt(rn)), -1.0, 1.0) : 0.0;
    const std::pair<double, std::size_t> cand{s, r};
    if (best.size() == m && !better(cand, best.back())) continue;
    best.insert(std::upper_bound(best.begin(), best.end(), cand, better), cand);
    if (best.size() > m) best.pop_back();
  }
  std::vector<FeatureHit> out;
  for (const auto& [score, r] : best) {
    FeatureHit hit;
    const auto owner = std::upper_bound(offsets.begin(), offsets.end(), r) - offsets.begin() - 1;
    hit.product = static_cast<std::size_t>(owner);
    hit.feature = r - offsets[hit.product];
    hit.score = score;
    hit.values.assign(rows.begin() + static_cast<std::ptrdiff_t>(r * d),
                      rows.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    out.push_back(std::move(hit));
  }
  return out;
}

}  // namespace detail

/// For every query token: the best `top_m` product text features for its
/// text-space projection, and the best `top_m` image features for its
/// image-space projection.
inline FeatureQueryResult retrieve_features(const std::vector<Embedding>& text_tokens,
                                            const std::vector<Embedding>& image_tokens, const FeatureStore& store,
                                            std::size_t top_m = 1) {
  if (store.product_count() == 0) throw StateError("retrieve_features: feature store is empty");
  if (text_tokens.empty()) throw EmptyInputError("retrieve_features: no query tokens");
  if (text_tokens.size() != image_tokens.size()) {
    throw ContractError("retrieve_features: text and image token lists differ in length");
  }
  if (top_m == 0) throw ConfigError("top_m_features must be at least 1");
  FeatureQueryResult out;
  for (std::size_t t = 0; t < text_tokens.size(); ++t) {
    if (text_tokens[t].values.size() != store.d || image_tokens[t].values.size() != store.d) {
      throw DimensionError("retrieve_features: token width differs from store d");
    }
    TokenFeatures tf;
    tf.text = detail::scan_top(text_tokens[t].values, store.text, store.d, store.text_offsets, top_m);
    tf.image = detail::scan_top(image_tokens[t].values, store.image, store.d, store.image_offsets, top_m);
    out.tokens.push_back(std::move(tf));
  }
  return out;
}

inline FeatureQueryResult retrieve_features(const QueryEncoding& query, const FeatureStore& store, std::size_t top_m = 1) {
  return retrieve_features(query.token_features, query.token_image_features, store, top_m);
}

// ------------------------------------------------------------ persistence
//
// Manifest keys: version, kind, d, products, text_count, image_count,
// payload. Payload: text offsets and image offsets (u64, products + 1 each),
// then text rows and image rows (f32), all little-endian.

inline void save_feature_store(const std::filesystem::path& manifest_path, const FeatureStore& store) {
  std::ostringstream manifest;
  manifest << "version=" << kFeatureStoreVersion << "\n"
           << "kind=feature-store\n"
           << "d=" << store.d << "\n"
           << "products=" << store.product_count() << "\n"
           << "text_count=" << store.text_count() << "\n"
           << "image_count=" << store.image_count() << "\n"
           << "payload=" << io::payload_path(manifest_path).filename().string() << "\n";
  std::string payload;
  for (auto v : store.text_offsets) io::put_u64(payload, v);
  for (auto v : store.image_offsets) io::put_u64(payload, v);
  for (float v : store.text) io::put_f32(payload, v);
  for (float v : store.image) io::put_f32(payload, v);
  io::write_file(manifest_path, manifest.str());
  io::write_file(io::payload_path(manifest_path), payload);
}

inline FeatureStore load_feature_store(const std::filesystem::path& manifest_path, std::size_t expected_d) {
  const std::string name = manifest_path.string();
  const auto m = io::parse_manifest(io::read_file(manifest_path), name);
  if (m.get_u64("version", name) != kFeatureStoreVersion) throw FormatError(name + ": unsupported feature store version");
  if (m.get("kind", name) != "feature-store") throw FormatError(name + ": not a feature store manifest");
  FeatureStore store;
  store.d = m.get_u64("d", name);
  if (store.d != expected_d) {
    throw DimensionError(name + ": feature store has d=" + std::to_string(store.d) + ", runtime uses d=" +
                         std::to_string(expected_d));
  }
  const auto products = m.get_u64("products", name);
  const auto text_count = m.get_u64("text_count", name);
  const auto image_count = m.get_u64("image_count", name);
  const auto bytes = io::read_file(manifest_path.parent_path() / m.get("payload", name));
  const std::size_t expected = 2 * (products + 1) * 8 + (text_count + image_count) * store.d * 4;
  if (bytes.size() != expected) {
    throw FormatError(name + ": payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(expected) + (bytes.size() < expected ? " (truncated)" : ""));
  }
  io::Reader r(bytes, name);
  store.text_offsets.assign(products + 1, 0);
  store.image_offsets.assign(products + 1, 0);
  for (auto& v : store.text_offsets) v = r.u64();
  for (auto& v : store.image_offsets) v = r.u64();
  if (store.text_offsets.back() != text_count || store.image_offsets.back() != image_count ||
      !std::is_sorted(store.text_offsets.begin(), store.text_offsets.end()) ||
      !std::is_sorted(store.image_offsets.begin(), store.image_offsets.end())) {
    throw FormatError(name + ": inconsistent per-product offsets");
  }
  store.text.resize(text_count * store.d);
  store.image.resize(image_count * store.d);
  for (auto& v : store.text) v = r.f32();
  for (auto& v : store.image) v = r.f32();
  return store;
}

}  // namespace pincer
