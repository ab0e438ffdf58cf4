#pragma once

// Glue between the trained stages and the catalog: frozen catalog
// embeddings, index and feature store; query -> pseudo product; evaluation.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pincer/datagen.hpp"
#include "pincer/evaluation.hpp"
#include "pincer/feature_store.hpp"
#include "pincer/retrieval.hpp"
#include "pincer/stage1.hpp"
#include "pincer/stage2.hpp"

namespace pincer {

/// Stage-1 model plus, after Stage 2, the decoder.
struct PincerModel {
  Stage1Model stage1;
  std::optional<DecoderParams> decoder;

  int stage() const { return decoder ? 2 : 1; }
  std::size_t width() const { return 2 * stage1.encoder.config.d; }
};

/// Everything derived from the catalog with frozen Stage-1 parameters.
struct CatalogArtifacts {
  Tensor products;  // N x 2d concat embeddings
  ProductIndex index;
  ClusterAssignment clusters;
  FeatureStore store;
};

/// Catalog rows in one of the product-side spaces (concatenated by default).
inline Tensor catalog_embeddings(const Stage1Model& model, const EncodedCatalog& catalog,
                                 Space space = Space::kConcatenated) {
  if (catalog.size() == 0) throw ConfigError("catalog is empty");
  if (space == Space::kQueryText || space == Space::kQueryImage) {
    throw ContractError("catalog_embeddings: '" + std::string(to_string(space)) + "' is a query-side space");
  }
  NoGradGuard no_grad;
  const std::size_t w = space_dim(space, model.encoder.config.d);
  std::vector<double> values;
  values.reserve(catalog.size() * w);
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < catalog.size(); start += chunk) {
    const auto end = std::min(catalog.size(), start + chunk);
    std::vector<TextTokenSequence> titles(catalog.titles.begin() + static_cast<std::ptrdiff_t>(start),
                                          catalog.titles.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<const ImagePatchGrid*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&catalog.images[i]);
    const auto out = encode_product_batch(titles, images, model.encoder);
    const auto& part = space == Space::kProductText    ? out.text_half
                       : space == Space::kProductImage ? out.image_half
                                                       : out.concat;
    values.insert(values.end(), part.values().begin(), part.values().end());
  }
  return Tensor({catalog.size(), w}, std::move(values));
}

inline CatalogArtifacts build_artifacts(const Stage1Model& model, const EncodedCatalog& catalog) {
  CatalogArtifacts a;
  a.products = catalog_embeddings(model, catalog);
  a.index = ProductIndex(std::vector<float>(a.products.values().begin(), a.products.values().end()), a.products.cols());
  a.index.build_clusters(model.codebook);
  a.clusters = assign_clusters(a.products.values(), a.products.cols(), model.codebook);
  a.store = build_feature_store(catalog, model.encoder);
  return a;
}

/// tokenize -> encode_query -> nearest intent -> retrieve_features.
inline DecoderInput prepare_decoder_input(const TextTokenSequence& query, const Stage1Model& model,
                                          const FeatureStore& store, std::size_t top_m) {
  const auto enc = encode_query(query, model.encoder);
  const auto intent = nearest(enc.concat.values, model.codebook);
  const auto features = retrieve_features(enc, store, top_m);
  return build_decoder_input(enc.concat.values, intent.index, model.codebook.vector(intent.index), features);
}

/// Pseudo product for a query; without a decoder, the query concat itself
/// (Stage-1 retrieval).
inline PseudoProduct query_to_pseudo(const std::string& text, const PincerModel& model, const FeatureStore& store,
                                     std::size_t top_m) {
  const auto seq = tokenize(text, model.stage1.encoder.config.vocab_size);
  if (!model.decoder) {
    const auto enc = encode_query(seq, model.stage1.encoder);
    return {enc.concat.values, nearest(enc.concat.values, model.stage1.codebook).index, {}};
  }
  return generate_pseudo(prepare_decoder_input(seq, model.stage1, store, top_m), *model.decoder);
}

struct RetrievalSettings {
  ScanMode mode = ScanMode::kFull;
  std::size_t n_probe = 1;
  std::size_t top_m = 1;
  std::size_t k = kReportCutoffs.back();
};

inline MetricReport evaluate(const PincerModel& model, const std::vector<JudgedQuery>& queries,
                             const CatalogArtifacts& artifacts, const RetrievalSettings& settings,
                             std::vector<QueryScores>* per_query = nullptr) {
  if (queries.empty()) throw ContractError("evaluate: no test queries");
  if (artifacts.index.dim() != model.width()) {
    throw DimensionError("evaluate: index width " + std::to_string(artifacts.index.dim()) + " differs from model width " +
                         std::to_string(model.width()));
  }
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<RelevantSet> relevant;
  for (const auto& q : queries) {
    const auto pseudo = query_to_pseudo(q.query, model, artifacts.store, settings.top_m);
    rankings.push_back(topk(pseudo.embedding, artifacts.index, settings.k, settings.mode, settings.n_probe).ids);
    relevant.emplace_back(q.relevant.begin(), q.relevant.end());
  }
  return evaluate_rankings(rankings, relevant, per_query);
}

/// Decoder inputs for every training pair, shared across pairs of the same
/// query.
inline std::vector<Stage2Example> build_stage2_examples(const Stage1Model& model, std::span<const EncodedPair> pairs,
                                                        const FeatureStore& store, std::size_t top_m) {
  std::map<std::string, DecoderInput> cache;
  std::vector<Stage2Example> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    auto it = cache.find(p.query.source);
    if (it == cache.end()) it = cache.emplace(p.query.source, prepare_decoder_input(p.query, model, store, top_m)).first;
    out.push_back({it->second, p.product});
  }
  return out;
}

inline Stage2Validation build_stage2_validation(const Stage1Model& model, const std::vector<JudgedQuery>& queries,
                                                const CatalogArtifacts& artifacts, std::size_t top_m) {
  Stage2Validation v;
  v.index = &artifacts.index;
  for (const auto& q : queries) {
    v.inputs.push_back(prepare_decoder_input(tokenize(q.query, model.encoder.config.vocab_size), model, artifacts.store, top_m));
    v.relevant.emplace_back(q.relevant.begin(), q.relevant.end());
  }
  return v;
}

}  // namespace pincer
