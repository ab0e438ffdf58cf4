#pragma once

// Toy two-tower encoders. Text goes through a hashed token-embedding table,
// images through per-patch statistics and a linear patch embedding. Each
// modality is then placed in a d-dimensional half by a projector
// (feedforward -> GELU -> layer norm -> dropout); the concatenated 2d vector
// is the representation used for retrieval.

#include <cctype>
#include <cstdint>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pincer/archive.hpp"
#include "pincer/image.hpp"
#include "pincer/ops.hpp"
#include "pincer/random.hpp"

namespace pincer {

inline constexpr std::size_t kDefaultVocabSize = 32768;

struct EncoderConfig {
  std::size_t d = 128;
  std::size_t vocab_size = kDefaultVocabSize;
  std::size_t patch_grid = 4;  // patches per image side
  std::size_t hist_bins = 8;
  double dropout = 0.10;

  std::size_t raw_patch_dim() const { return pincer::raw_patch_dim(hist_bins); }
};

/// A unit-L2 vector tagged with the space it lives in.
struct Embedding {
  std::vector<double> values;
  Space space = Space::kConcatenated;
};

// ------------------------------------------------------------ tokenization

/// 64-bit FNV-1a. Byte-oriented, so identical on every platform.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Lowercases and splits on anything that is not an ASCII letter or digit.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

struct TextTokenSequence {
  std::vector<std::uint32_t> tokens;
  std::string source;
};

inline TextTokenSequence tokenize(std::string_view text, std::size_t vocab_size = kDefaultVocabSize) {
  const auto words = split_words(text);
  if (words.empty()) throw EmptyInputError("tokenize: input has no tokens: '" + std::string(text) + "'");
  TextTokenSequence seq;
  seq.source = std::string(text);
  for (const auto& w : words) seq.tokens.push_back(static_cast<std::uint32_t>(stable_hash(w) % vocab_size));
  return seq;
}

// ------------------------------------------------------------ projector

struct EncodeMode {
  bool train = false;
  Rng* rng = nullptr;  // dropout source, required when train is set
};

inline Tensor init_uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = uniform(rng, -bound, bound);
  return Tensor({rows, cols}, std::move(v), true);
}

class Projector {
 public:
  Projector() = default;
  Projector(std::size_t in, std::size_t out, double dropout, Rng& rng) : dropout_rate(dropout) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = init_uniform_matrix(in, out, bound, rng);
    bias = init_uniform_matrix(1, out, bound, rng);
    ln_gain = Tensor({1, out}, std::vector<double>(out, 1.0), true);
    ln_bias = Tensor::zeros({1, out}, true);
  }

  Tensor forward(const Tensor& x, const EncodeMode& mode) const {
    auto h = ops::gelu(ops::add_row(ops::matmul(x, weight), bias));
    h = ops::layer_norm(h, ln_gain, ln_bias);
    if (mode.train && dropout_rate > 0.0) {
      if (!mode.rng) throw ContractError("Projector: training mode needs a dropout rng");
      h = ops::dropout(h, dropout_rate, *mode.rng, true);
    }
    return h;
  }

  std::size_t out_dim() const { return weight.cols(); }

  void append_named(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
    out.emplace_back(prefix + ".ln_gain", ln_gain);
    out.emplace_back(prefix + ".ln_bias", ln_bias);
  }

  Tensor weight, bias, ln_gain, ln_bias;
  double dropout_rate = 0.10;
};

// ------------------------------------------------------------ parameters

struct EncoderParams {
  EncoderConfig config;
  Tensor query_table;   // vocab x d
  Tensor title_table;   // vocab x d
  Tensor patch_weight;  // raw_patch_dim x d
  Tensor patch_bias;    // 1 x d
  Projector query_text, query_image, product_text, product_image;

  /// Query and title tables start from the same draw so that a shared word
  /// begins with the same vector in both towers; they are trained separately.
  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed) {
    if (config.d == 0 || config.vocab_size == 0) throw ConfigError("encoder: d and vocab_size must be positive");
    EncoderParams p;
    p.config = config;
    const std::size_t d = config.d;
    Rng table_rng(derive_seed(seed, 1));
    std::vector<double> table(config.vocab_size * d);
    for (auto& v : table) v = normal(table_rng);
    p.query_table = Tensor({config.vocab_size, d}, table, true);
    p.title_table = Tensor({config.vocab_size, d}, std::move(table), true);
    Rng rng(derive_seed(seed, 2));
    const double patch_bound = 1.0 / std::sqrt(static_cast<double>(config.raw_patch_dim()));
    p.patch_weight = init_uniform_matrix(config.raw_patch_dim(), d, patch_bound, rng);
    p.patch_bias = init_uniform_matrix(1, d, patch_bound, rng);
    p.query_text = Projector(d, d, config.dropout, rng);
    p.query_image = Projector(d, d, config.dropout, rng);
    p.product_text = Projector(d, d, config.dropout, rng);
    p.product_image = Projector(d, d, config.dropout, rng);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out = {
        {"encoder.query_table", query_table},
        {"encoder.title_table", title_table},
        {"encoder.patch_weight", patch_weight},
        {"encoder.patch_bias", patch_bias},
    };
    query_text.append_named("projector.query_text", out);
    query_image.append_named("projector.query_image", out);
    product_text.append_named("projector.product_text", out);
    product_image.append_named("projector.product_image", out);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }
};

// ------------------------------------------------------------ batched towers

/// Unit-L2 rows: text half [B x d], image half [B x d], concatenation [B x 2d].
struct TowerOutput {
  Tensor text_half;
  Tensor image_half;
  Tensor concat;
};

namespace detail {

inline std::vector<std::size_t> checked_rows(const TextTokenSequence& seq, std::size_t vocab) {
  if (seq.tokens.empty()) throw EmptyInputError("encoder: empty token sequence");
  std::vector<std::size_t> rows;
  rows.reserve(seq.tokens.size());
  for (auto t : seq.tokens) {
    if (t >= vocab) {
      throw ContractError("encoder: token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
    }
    rows.push_back(t);
  }
  return rows;
}

inline Tensor join_halves(const Tensor& text, const Tensor& image) {
  return ops::l2_normalize_rows(ops::concat_cols(text, image));
}

inline Tensor patch_rows(const std::vector<const ImagePatchGrid*>& images, const EncoderConfig& config,
                         std::vector<std::vector<std::size_t>>& segments) {
  std::vector<double> raw;
  std::size_t row = 0;
  segments.clear();
  for (const auto* img : images) {
    if (!img || img->patch_count() == 0) throw EmptyInputError("encoder: image without patches");
    if (img->raw_dim != config.raw_patch_dim()) throw DimensionError("encoder: patch feature width mismatch");
    raw.insert(raw.end(), img->features.begin(), img->features.end());
    std::vector<std::size_t> seg(img->patch_count());
    std::iota(seg.begin(), seg.end(), row);
    row += img->patch_count();
    segments.push_back(std::move(seg));
  }
  return Tensor({row, config.raw_patch_dim()}, std::move(raw));
}

}  // namespace detail

inline TowerOutput encode_query_batch(std::span<const TextTokenSequence> queries, const EncoderParams& p,
                                      const EncodeMode& mode = {}) {
  if (queries.empty()) throw EmptyInputError("encode_query_batch: no queries");
  std::vector<std::vector<std::size_t>> segments;
  for (const auto& q : queries) segments.push_back(detail::checked_rows(q, p.config.vocab_size));
  const auto pooled = ops::segment_mean(p.query_table, std::move(segments));
  TowerOutput out;
  out.text_half = ops::l2_normalize_rows(p.query_text.forward(pooled, mode));
  out.image_half = ops::l2_normalize_rows(p.query_image.forward(pooled, mode));
  out.concat = detail::join_halves(out.text_half, out.image_half);
  return out;
}

inline TowerOutput encode_product_batch(std::span<const TextTokenSequence> titles,
                                        const std::vector<const ImagePatchGrid*>& images, const EncoderParams& p,
                                        const EncodeMode& mode = {}) {
  if (titles.empty() || titles.size() != images.size()) {
    throw ContractError("encode_product_batch: need one image per title");
  }
  std::vector<std::vector<std::size_t>> title_segments;
  for (const auto& t : titles) title_segments.push_back(detail::checked_rows(t, p.config.vocab_size));
  const auto pooled = ops::segment_mean(p.title_table, std::move(title_segments));

  std::vector<std::vector<std::size_t>> patch_segments;
  const auto raw = detail::patch_rows(images, p.config, patch_segments);
  const auto patch_embed = ops::add_row(ops::matmul(raw, p.patch_weight), p.patch_bias);
  const auto patch_proj = p.product_image.forward(patch_embed, mode);

  TowerOutput out;
  out.text_half = ops::l2_normalize_rows(p.product_text.forward(pooled, mode));
  out.image_half = ops::l2_normalize_rows(ops::segment_mean(patch_proj, std::move(patch_segments)));
  out.concat = detail::join_halves(out.text_half, out.image_half);
  return out;
}

// ------------------------------------------------------------ single items

inline std::vector<Embedding> to_embeddings(const Tensor& rows, Space space) {
  std::vector<Embedding> out;
  out.reserve(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto v = rows.row_values(r);
    out.push_back({std::vector<double>(v.begin(), v.end()), space});
  }
  return out;
}

inline Embedding to_embedding(const Tensor& row, Space space) { return to_embeddings(row, space).front(); }

struct QueryEncoding {
  Embedding text_half;
  Embedding image_half;
  Embedding concat;
  std::vector<Embedding> token_features;        // per token, query-text space
  std::vector<Embedding> token_image_features;  // per token, query-image space
};

inline QueryEncoding encode_query(const TextTokenSequence& query, const EncoderParams& p, const EncodeMode& mode = {}) {
  NoGradGuard no_grad;
  const auto rows = detail::checked_rows(query, p.config.vocab_size);
  const auto tower = encode_query_batch(std::span(&query, 1), p, mode);
  const auto tokens = ops::select_rows(p.query_table, rows);
  QueryEncoding out;
  out.text_half = to_embedding(tower.text_half, Space::kQueryText);
  out.image_half = to_embedding(tower.image_half, Space::kQueryImage);
  out.concat = to_embedding(tower.concat, Space::kConcatenated);
  out.token_features = to_embeddings(ops::l2_normalize_rows(p.query_text.forward(tokens, mode)), Space::kQueryText);
  out.token_image_features =
      to_embeddings(ops::l2_normalize_rows(p.query_image.forward(tokens, mode)), Space::kQueryImage);
  return out;
}

struct ProductEncoding {
  Embedding text_half;
  Embedding image_half;
  Embedding concat;
  std::vector<Embedding> text_features;   // per title token
  std::vector<Embedding> image_features;  // per patch
};

inline ProductEncoding encode_product(const TextTokenSequence& title, const ImagePatchGrid& image,
                                      const EncoderParams& p, const EncodeMode& mode = {}) {
  NoGradGuard no_grad;
  const auto rows = detail::checked_rows(title, p.config.vocab_size);
  const auto tower = encode_product_batch(std::span(&title, 1), {&image}, p, mode);
  ProductEncoding out;
  out.text_half = to_embedding(tower.text_half, Space::kProductText);
  out.image_half = to_embedding(tower.image_half, Space::kProductImage);
  out.concat = to_embedding(tower.concat, Space::kConcatenated);
  const auto tokens = ops::select_rows(p.title_table, rows);
  out.text_features =
      to_embeddings(ops::l2_normalize_rows(p.product_text.forward(tokens, mode)), Space::kProductText);
  std::vector<std::vector<std::size_t>> segments;
  const auto raw = detail::patch_rows({&image}, p.config, segments);
  const auto patch_embed = ops::add_row(ops::matmul(raw, p.patch_weight), p.patch_bias);
  out.image_features =
      to_embeddings(ops::l2_normalize_rows(p.product_image.forward(patch_embed, mode)), Space::kProductImage);
  return out;
}

// ------------------------------------------------------------ precomputed embeddings

inline void export_embeddings(const std::filesystem::path& manifest, const std::vector<Embedding>& rows,
                              std::size_t d, Space space) {
  EmbeddingArchive archive;
  archive.d = d;
  archive.space = space;
  archive.count = rows.size();
  for (const auto& e : rows) {
    if (e.values.size() != archive.dim()) throw DimensionError("export_embeddings: vector width mismatch");
    for (double v : e.values) archive.data.push_back(static_cast<float>(v));
  }
  write_archive(manifest, archive);
}

/// Loads an archive produced outside this library, checks it against the
/// configured d, and re-normalizes every row to unit L2.
inline EmbeddingArchive ingest_precomputed(const std::filesystem::path& manifest, std::size_t expected_d) {
  auto archive = read_archive(manifest);
  if (archive.d != expected_d) {
    throw FormatError(manifest.string() + ": archive has d=" + std::to_string(archive.d) + " but the model uses d=" +
                      std::to_string(expected_d));
  }
  const std::size_t dim = archive.dim();
  for (std::size_t i = 0; i < archive.count; ++i) {
    float* row = &archive.data[i * dim];
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      if (!std::isfinite(row[j])) throw DataError(manifest.string() + ": non-finite value in row " + std::to_string(i));
      norm += static_cast<double>(row[j]) * row[j];
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) throw DataError(manifest.string() + ": zero vector in row " + std::to_string(i));
    for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<float>(row[j] / norm);
  }
  return archive;
}

}  // namespace pincer
