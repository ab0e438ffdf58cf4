#pragma once

// File-backed pipeline steps shared by the CLI and the acceptance suite:
// datagen -> stage 1 -> index -> stage 2 -> eval.
//
// Layout under output_dir:
//   stage1.ckpt, stage2.ckpt       checkpoints
//   index/products.manifest(.bin)  concatenated catalog embeddings
//   index/features.manifest(.bin)  granular feature store
//   index/index.json               fingerprint of the stage-1 parameters used
//   train-stage{1,2}.jsonl         per-epoch metrics
//   metrics-<mode>.json            last eval report

#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include "pincer/checkpoint.hpp"

namespace pincer {

namespace fs = std::filesystem;

struct Corpus {
  std::vector<CatalogProduct> products;
  std::vector<QueryProductPair> train;
  std::vector<QueryProductPair> val_pairs;
  std::vector<JudgedQuery> val;
  std::vector<JudgedQuery> test;
};

inline Corpus load_corpus(const fs::path& dir) {
  if (!fs::exists(dir / "catalog.jsonl")) {
    throw StateError("no dataset in '" + dir.string() + "'; run datagen first");
  }
  Corpus c;
  c.products = read_catalog(dir / "catalog.jsonl");
  c.train = read_pairs(dir / "pairs-train.jsonl");
  c.val_pairs = read_pairs(dir / "pairs-val.jsonl");
  c.val = read_qrels(dir / "qrels.jsonl", "val");
  c.test = read_qrels(dir / "qrels.jsonl", "test");
  return c;
}

inline fs::path stage1_path(const RunConfig& c) { return fs::path(c.output_dir) / "stage1.ckpt"; }
inline fs::path stage2_path(const RunConfig& c) { return fs::path(c.output_dir) / "stage2.ckpt"; }
inline fs::path index_dir(const RunConfig& c) { return fs::path(c.output_dir) / "index"; }

/// Most advanced checkpoint present, unless one is named explicitly.
inline fs::path latest_checkpoint(const RunConfig& c, const std::optional<fs::path>& explicit_path = {}) {
  if (explicit_path) return *explicit_path;
  if (fs::exists(stage2_path(c))) return stage2_path(c);
  if (fs::exists(stage1_path(c))) return stage1_path(c);
  throw StateError("no checkpoint in '" + c.output_dir + "'; run train --stage 1 first");
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Identifies the stage-1 parameters an index was built from.
inline std::string stage1_fingerprint(const Stage1Model& stage1) {
  std::string bytes;
  for (const auto& [name, t] : checkpoint_arrays(PincerModel{stage1, std::nullopt})) {
    bytes += name;
    for (double v : t.values()) io::put_f64(bytes, v);
  }
  return hex64(fnv1a64(bytes));
}

inline void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << line << "\n";
}

/// Keys that shaped the data or the stage-1 model. Stage 2 may change
/// anything else.
inline const std::vector<std::string> kStage1Keys{
    "seed",       "d",           "k_intents",  "lambda",    "temperature",       "batch_size",
    "lr",         "weight_decay", "epochs_stage1", "rcl_literal", "rcl_weight",     "symmetric",
    "vocab_size", "patch_grid",  "hist_bins",  "dropout",   "n_products",        "queries_per_group",
    "selectivity_quantile", "pi_kind", "pi_direction"};

inline void require_same_stage1_settings(const RunConfig& config, const RunConfig& checkpoint) {
  const auto a = to_json(config), b = to_json(checkpoint);
  for (const auto& key : kStage1Keys) {
    if (a[key] != b[key]) {
      throw ConfigError("config key '" + key + "' is " + a[key].dump() + " but the stage-1 checkpoint used " +
                        b[key].dump());
    }
  }
}

// ------------------------------------------------------------ steps

inline PairDataset run_datagen(const RunConfig& config) {
  const auto g = config.datagen();
  const auto catalog = synth_catalog(g.n_products, g.seed);
  auto data = generate_pairs(catalog, g.queries_per_group, g.pi, g.seed);
  write_dataset(config.data_dir, catalog, data);
  return data;
}

inline PincerModel run_stage1(const RunConfig& config, const std::function<void(const Stage1EpochMetrics&)>& on_epoch = {}) {
  const auto corpus = load_corpus(config.data_dir);
  const auto c1 = config.stage1();
  const auto catalog = encode_catalog(corpus.products, c1.encoder);
  const auto train = encode_pairs(corpus.train, corpus.products.size(), c1.encoder);
  const auto val = encode_pairs(corpus.val_pairs, corpus.products.size(), c1.encoder);
  PincerModel model{init_stage1(c1), std::nullopt};
  const auto log = fs::path(config.output_dir) / "train-stage1.jsonl";
  fs::create_directories(config.output_dir);
  fs::remove(log);
  train_stage1(model.stage1, catalog, train, val, c1, [&](const Stage1EpochMetrics& m) {
    append_line(log, m.to_json().dump());
    if (on_epoch) on_epoch(m);
  });
  save_checkpoint(stage1_path(config), config, model);
  return model;
}

inline void save_index(const fs::path& dir, const PincerModel& model, const CatalogArtifacts& artifacts) {
  fs::create_directories(dir);
  EmbeddingArchive archive;
  archive.d = model.stage1.encoder.config.d;
  archive.space = Space::kConcatenated;
  archive.count = artifacts.products.rows();
  archive.data.assign(artifacts.products.values().begin(), artifacts.products.values().end());
  write_archive(dir / "products.manifest", archive);
  save_feature_store(dir / "features.manifest", artifacts.store);
  nlohmann::ordered_json meta{{"stage1_fingerprint", stage1_fingerprint(model.stage1)},
                              {"products", archive.count},
                              {"k_intents", model.stage1.codebook.size()}};
  io::write_file(dir / "index.json", meta.dump(2) + "\n");
}

/// Embeds the catalog with the latest checkpoint's stage-1 parameters.
inline CatalogArtifacts run_index_build(const RunConfig& config, const std::optional<fs::path>& checkpoint = {}) {
  const auto ck = load_checkpoint(latest_checkpoint(config, checkpoint));
  const auto corpus = load_corpus(config.data_dir);
  auto artifacts = build_artifacts(ck.model.stage1, encode_catalog(corpus.products, ck.config.encoder()));
  save_index(index_dir(config), ck.model, artifacts);
  return artifacts;
}

inline CatalogArtifacts load_index(const fs::path& dir, const PincerModel& model) {
  const std::size_t d = model.stage1.encoder.config.d;
  if (!fs::exists(dir / "index.json")) {
    throw StateError("no index in '" + dir.string() + "'; run index build first");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_file(dir / "index.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "index.json").string() + ": " + e.what());
  }
  if (meta.value("stage1_fingerprint", "") != stage1_fingerprint(model.stage1)) {
    throw StateError("index in '" + dir.string() + "' was built from different stage-1 parameters; rerun index build");
  }
  const auto archive = read_archive(dir / "products.manifest");
  if (archive.d != d || archive.space != Space::kConcatenated) {
    throw FormatError((dir / "products.manifest").string() + ": expected concatenated embeddings with d=" +
                      std::to_string(d));
  }
  CatalogArtifacts a;
  a.products = Tensor({archive.count, archive.dim()}, std::vector<double>(archive.data.begin(), archive.data.end()));
  a.index = ProductIndex(archive.data, archive.dim());
  a.index.build_clusters(model.stage1.codebook);
  a.clusters = assign_clusters(a.products.values(), a.products.cols(), model.stage1.codebook);
  a.store = load_feature_store(dir / "features.manifest", d);
  return a;
}

inline PincerModel run_stage2(const RunConfig& config, const std::function<void(const Stage2EpochMetrics&)>& on_epoch = {},
                              const std::optional<fs::path>& checkpoint = {}) {
  const auto path = checkpoint.value_or(stage1_path(config));
  if (!fs::exists(path)) throw StateError("stage-2 training needs a stage-1 checkpoint; '" + path.string() + "' is missing");
  auto ck = load_checkpoint(path);
  require_stage1(ck);
  require_same_stage1_settings(config, ck.config);
  const auto artifacts = load_index(index_dir(config), ck.model);
  const auto corpus = load_corpus(config.data_dir);
  const auto c2 = config.stage2();
  const auto enc = config.encoder();
  const auto train = encode_pairs(corpus.train, corpus.products.size(), enc);
  const auto examples = build_stage2_examples(ck.model.stage1, train, artifacts.store, c2.top_m);
  const auto val = build_stage2_validation(ck.model.stage1, corpus.val, artifacts, c2.top_m);
  auto decoder = DecoderParams::init(c2.decoder, ck.model.width(), derive_seed(config.seed, 12));
  const auto log = fs::path(config.output_dir) / "train-stage2.jsonl";
  fs::remove(log);
  train_stage2(decoder, examples, artifacts.products, artifacts.clusters, val, c2, [&](const Stage2EpochMetrics& m) {
    append_line(log, m.to_json().dump());
    if (on_epoch) on_epoch(m);
  });
  ck.model.decoder = std::move(decoder);
  save_checkpoint(stage2_path(config), config, ck.model);
  return ck.model;
}

inline MetricReport run_eval(const RunConfig& config, const RetrievalSettings& settings,
                             const std::optional<fs::path>& checkpoint = {}, const std::string& split = "test") {
  const auto ck = load_checkpoint(latest_checkpoint(config, checkpoint));
  const auto artifacts = load_index(index_dir(config), ck.model);
  const auto queries = read_qrels(fs::path(config.data_dir) / "qrels.jsonl", split);
  const auto report = evaluate(ck.model, queries, artifacts, settings);
  io::write_file(fs::path(config.output_dir) / ("metrics-" + std::string(to_string(settings.mode)) + ".json"),
                 report.to_json().dump(2) + "\n");
  return report;
}

}  // namespace pincer
