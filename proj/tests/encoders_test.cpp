#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pincer/encoders.hpp"

using namespace pincer;

namespace {

// Independent FNV-1a for the tokenizer oracle.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.d = 8;
  c.vocab_size = 97;
  c.patch_grid = 2;
  c.hist_bins = 4;
  return c;
}

GrayImage make_image(std::size_t h, std::size_t w, double fill) {
  return {h, w, std::vector<double>(h * w, fill)};
}

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pincer_enc_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Tokenize, SplitsLowercasesAndHashes) {
  const auto seq = tokenize("Red T-Shirt", 1000);
  ASSERT_EQ(seq.tokens.size(), 3u);
  EXPECT_EQ(seq.tokens[0], fnv1a("red") % 1000);
  EXPECT_EQ(seq.tokens[1], fnv1a("t") % 1000);
  EXPECT_EQ(seq.tokens[2], fnv1a("shirt") % 1000);
  EXPECT_EQ(seq.source, "Red T-Shirt");
}

TEST(Tokenize, Deterministic) {
  EXPECT_EQ(tokenize("blue linen dress!").tokens, tokenize("blue linen dress!").tokens);
}

TEST(Tokenize, EmptyInputRejected) {
  EXPECT_THROW(tokenize(""), EmptyInputError);
  EXPECT_THROW(tokenize("  \t-- "), EmptyInputError);
}

TEST(ImageStats, ZeroImage) {
  const auto s = image_stats(make_image(5, 5, 0.0));
  EXPECT_EQ(s.brightness, 0.0);
  EXPECT_EQ(s.mean_gradient, 0.0);
}

TEST(ImageStats, ConstantImage) {
  const auto s = image_stats(make_image(6, 4, 0.3));
  EXPECT_NEAR(s.brightness, 0.3, 1e-15);
  EXPECT_EQ(s.mean_gradient, 0.0);
}

TEST(ImageStats, VerticalStepMatchesHandComputation) {
  GrayImage img = make_image(4, 6, 0.0);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 3; x < 6; ++x) img.pixels[y * 6 + x] = 1.0;
  // Interior columns 1..4: only x=2 and x=3 straddle the step, each with
  // |gx| = 0.5; gy = 0 everywhere. Two rows of four interior pixels.
  const double expected = (0.5 + 0.5) * 2 / 8.0;
  const auto s = image_stats(img);
  EXPECT_NEAR(s.mean_gradient, expected, 1e-15);
  EXPECT_NEAR(s.brightness, 0.5, 1e-15);
}

TEST(ImageStats, RejectsOutOfRangePixels) {
  auto img = make_image(3, 3, 0.5);
  img.pixels[4] = 1.5;
  EXPECT_THROW(image_stats(img), DataError);
}

TEST(PatchFeatures, LayoutAndRanges) {
  Rng rng(3);
  GrayImage img = make_image(8, 8, 0.0);
  for (auto& p : img.pixels) p = uniform01(rng);
  const auto grid = patch_features(img, 2, 4);
  EXPECT_EQ(grid.patch_count(), 4u);
  EXPECT_EQ(grid.raw_dim, 6u);
  for (std::size_t p = 0; p < 4; ++p) {
    const double* f = &grid.features[p * 6];
    EXPECT_GE(f[0], 0.0);
    EXPECT_LE(f[0], 1.0);
    EXPECT_NEAR(f[2] + f[3] + f[4] + f[5], 1.0, 1e-12);
  }
}

TEST(Encoders, QueryNormsAndCounts) {
  const auto params = EncoderParams::init(small_config(), 1);
  const auto q = encode_query(tokenize("red cotton shirt", 97), params);
  EXPECT_NEAR(norm(q.concat.values), 1.0, 1e-6);
  EXPECT_NEAR(norm(q.text_half.values), 1.0, 1e-6);
  EXPECT_NEAR(norm(q.image_half.values), 1.0, 1e-6);
  EXPECT_EQ(q.concat.values.size(), 16u);
  EXPECT_EQ(q.concat.space, Space::kConcatenated);
  EXPECT_EQ(q.token_features.size(), 3u);
  EXPECT_EQ(q.token_image_features.size(), 3u);
  for (const auto& f : q.token_features) EXPECT_NEAR(norm(f.values), 1.0, 1e-6);
  for (double v : q.concat.values) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Encoders, IdenticalQueriesGiveIdenticalEmbeddings) {
  const auto params = EncoderParams::init(small_config(), 1);
  const auto a = encode_query(tokenize("wool coat", 97), params);
  const auto b = encode_query(tokenize("wool coat", 97), params);
  EXPECT_EQ(a.concat.values, b.concat.values);
}

TEST(Encoders, OneTokenQueryEqualsItsTokenFeature) {
  const auto params = EncoderParams::init(small_config(), 2);
  const auto q = encode_query(tokenize("denim", 97), params);
  ASSERT_EQ(q.token_features.size(), 1u);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(q.text_half.values[j], q.token_features[0].values[j], 1e-12);
}

TEST(Encoders, TokenOutOfRangeIsContractError) {
  const auto params = EncoderParams::init(small_config(), 1);
  TextTokenSequence bad{{5, 97}, "bad"};
  EXPECT_THROW(encode_query(bad, params), ContractError);
}

TEST(Encoders, ProductIdenticalPatchesShareDirection) {
  const auto config = small_config();
  const auto params = EncoderParams::init(config, 4);
  const auto grid = patch_features(make_image(8, 8, 0.4), 2, 4);
  const auto p = encode_product(tokenize("linen skirt", 97), grid, params);
  EXPECT_NEAR(norm(p.concat.values), 1.0, 1e-6);
  ASSERT_EQ(p.image_features.size(), 4u);
  ASSERT_EQ(p.text_features.size(), 2u);
  for (const auto& f : p.image_features)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(f.values[j], p.image_half.values[j], 1e-12);
}

TEST(Encoders, PerturbingOnePatchChangesOnlyThatFeature) {
  const auto config = small_config();
  const auto params = EncoderParams::init(config, 5);
  Rng rng(7);
  GrayImage img = make_image(8, 8, 0.0);
  for (auto& p : img.pixels) p = uniform01(rng);
  const auto title = tokenize("silk scarf", 97);
  const auto base = encode_product(title, patch_features(img, 2, 4), params);
  // Top-left patch covers rows 0..3, cols 0..3. Row/column 3 also feeds the
  // neighbouring patches' central differences, so stay inside 0..2.
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) img.pixels[y * 8 + x] = 1.0 - img.pixels[y * 8 + x];
  const auto changed = encode_product(title, patch_features(img, 2, 4), params);
  EXPECT_NE(base.image_features[0].values, changed.image_features[0].values);
  for (std::size_t p = 1; p < 4; ++p) EXPECT_EQ(base.image_features[p].values, changed.image_features[p].values);
}

TEST(Encoders, EvalModeIgnoresDropoutAndTrainModeNeedsRng) {
  const auto params = EncoderParams::init(small_config(), 6);
  const auto seq = tokenize("red cotton shirt", 97);
  EXPECT_THROW(encode_query(seq, params, EncodeMode{.train = true}), ContractError);
  Rng r1(9), r2(9);
  const auto a = encode_query(seq, params, {.train = true, .rng = &r1});
  const auto b = encode_query(seq, params, {.train = true, .rng = &r2});
  EXPECT_EQ(a.concat.values, b.concat.values);
}

TEST(Archive, ExportIngestRoundTrip) {
  const auto dir = temp_dir("roundtrip");
  const auto params = EncoderParams::init(small_config(), 1);
  std::vector<Embedding> rows;
  for (const char* q : {"red shirt", "blue coat", "green wool hat"}) rows.push_back(encode_query(tokenize(q, 97), params).concat);
  export_embeddings(dir / "q.manifest", rows, 8, Space::kConcatenated);
  const auto back = ingest_precomputed(dir / "q.manifest", 8);
  ASSERT_EQ(back.count, 3u);
  ASSERT_EQ(back.dim(), 16u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto row = back.row(i);
    for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(row[j], rows[i].values[j], 1e-6);
  }
}

TEST(Archive, DimensionMismatchIsFormatError) {
  const auto dir = temp_dir("dim");
  std::vector<Embedding> rows{{std::vector<double>(64, 0.125), Space::kProductText}};
  export_embeddings(dir / "a.manifest", rows, 64, Space::kProductText);
  EXPECT_THROW(ingest_precomputed(dir / "a.manifest", 128), FormatError);
}

TEST(Archive, NonFiniteValueIsDataError) {
  const auto dir = temp_dir("nan");
  EmbeddingArchive a{.d = 2, .space = Space::kQueryText, .count = 1, .data = {1.0f, NAN}};
  write_archive(dir / "a.manifest", a);
  EXPECT_THROW(ingest_precomputed(dir / "a.manifest", 2), DataError);
}

TEST(Archive, ThousandVectorsKeepCountAndAreRenormalized) {
  const auto dir = temp_dir("count");
  Rng rng(11);
  EmbeddingArchive a{.d = 4, .space = Space::kConcatenated, .count = 1000, .data = {}};
  for (std::size_t i = 0; i < 1000 * 8; ++i) a.data.push_back(static_cast<float>(normal(rng)));
  write_archive(dir / "a.manifest", a);
  const auto back = ingest_precomputed(dir / "a.manifest", 4);
  EXPECT_EQ(back.count, 1000u);
  for (std::size_t i = 0; i < back.count; ++i) {
    double s = 0;
    for (float v : back.row(i)) s += static_cast<double>(v) * v;
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-6);
  }
}

TEST(Archive, TruncatedPayloadIsFormatError) {
  const auto dir = temp_dir("trunc");
  EmbeddingArchive a{.d = 2, .space = Space::kQueryText, .count = 2, .data = {1, 0, 0, 1}};
  write_archive(dir / "a.manifest", a);
  std::filesystem::resize_file(io::payload_path(dir / "a.manifest"), 10);
  EXPECT_THROW(read_archive(dir / "a.manifest"), FormatError);
}

TEST(Archive, VersionMismatchIsFormatError) {
  const auto dir = temp_dir("version");
  EmbeddingArchive a{.d = 2, .space = Space::kQueryText, .count = 1, .data = {1, 0}};
  write_archive(dir / "a.manifest", a);
  auto text = io::read_file(dir / "a.manifest");
  text.replace(text.find("version=1"), 9, "version=9");
  io::write_file(dir / "a.manifest", text);
  EXPECT_THROW(read_archive(dir / "a.manifest"), FormatError);
}
