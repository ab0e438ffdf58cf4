#pragma once

// In-memory catalog and click pairs, plus their tokenized/patched forms as
// consumed by the trainers.

#include <string>
#include <vector>

#include "pincer/encoders.hpp"
#include "pincer/image.hpp"

namespace pincer {

struct CatalogProduct {
  std::size_t id = 0;
  std::string title;
  std::string category;
  GrayImage image;
};

struct QueryProductPair {
  std::string query;
  std::size_t product_id = 0;
};

/// Catalog rows indexed by product id.
struct EncodedCatalog {
  std::vector<TextTokenSequence> titles;
  std::vector<ImagePatchGrid> images;

  std::size_t size() const { return titles.size(); }
};

struct EncodedPair {
  TextTokenSequence query;
  std::size_t product = 0;
};

/// Product ids must be 0..n-1 in catalog order.
inline EncodedCatalog encode_catalog(const std::vector<CatalogProduct>& catalog, const EncoderConfig& config) {
  if (catalog.empty()) throw ConfigError("catalog is empty");
  EncodedCatalog out;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    if (catalog[i].id != i) throw DataError("catalog ids must be dense and ordered; row " + std::to_string(i) +
                                            " has id " + std::to_string(catalog[i].id));
    out.titles.push_back(tokenize(catalog[i].title, config.vocab_size));
    out.images.push_back(patch_features(catalog[i].image, config.patch_grid, config.hist_bins));
  }
  return out;
}

inline std::vector<EncodedPair> encode_pairs(const std::vector<QueryProductPair>& pairs, std::size_t catalog_size,
                                             const EncoderConfig& config) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.product_id >= catalog_size) {
      throw DataError("pair references unknown product id " + std::to_string(p.product_id));
    }
    out.push_back({tokenize(p.query, config.vocab_size), p.product_id});
  }
  return out;
}

}  // namespace pincer
