// pincer: command-line front end.
//
// Exit codes: 0 ok, 1 contract, 2 config (including bad flags), 3 data or
// file format, 4 state (missing or stale artifacts, locked directory),
// 5 numeric.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pincer/pincer.hpp"

using namespace pincer;

namespace {

/// Exclusive advisory lock on <dir>/.lock for the life of the process.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto path = dir / ".lock";
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw DataError("cannot open lock file '" + path.string() + "'");
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw StateError("'" + dir.string() + "' is locked by another pincer process");
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

struct Options {
  std::string config_path;
  nlohmann::json overrides = nlohmann::json::object();
  std::string checkpoint;

  std::optional<fs::path> checkpoint_path() const {
    return checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint);
  }
};

/// Config file (if any) with flag overrides applied; validated as a whole so
/// errors name the offending key.
RunConfig resolve(const Options& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config_path.empty()) doc = to_json(load_config(o.config_path));
  for (const auto& [key, value] : o.overrides.items()) doc[key] = value;
  return config_from_json(doc);
}

template <typename T>
void override_flag(CLI::App* app, Options& o, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<T>(flag, [&o, key](const T& v) { o.overrides[key] = v; }, help + " (config key " + key + ")");
}

void print_json(const nlohmann::ordered_json& j) { std::cout << j.dump() << std::endl; }

std::vector<std::vector<double>> test_query_embeddings(const RunConfig& config, const PincerModel& model,
                                                       const CatalogArtifacts& artifacts, const std::string& split) {
  std::vector<std::vector<double>> out;
  for (const auto& q : read_qrels(fs::path(config.data_dir) / "qrels.jsonl", split)) {
    out.push_back(query_to_pseudo(q.query, model, artifacts.store, config.top_m_features).embedding);
  }
  if (out.empty()) throw DataError("no '" + split + "' queries in " + config.data_dir);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pincer: intent-aware product retrieval pipeline"};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  override_flag<std::string>(&app, o, "--data-dir", "data_dir", "dataset directory");
  override_flag<std::string>(&app, o, "--out", "output_dir", "output directory");
  override_flag<std::uint64_t>(&app, o, "--seed", "seed", "random seed");
  override_flag<std::size_t>(&app, o, "--d", "d", "embedding half width");
  override_flag<std::size_t>(&app, o, "--k-intents", "k_intents", "intent codebook size");

  auto* datagen = app.add_subcommand("datagen", "synthesize catalog, queries and relevance judgments");
  override_flag<std::size_t>(datagen, o, "--n-products", "n_products", "catalog size");
  override_flag<std::size_t>(datagen, o, "--queries-per-group", "queries_per_group", "queries per category");
  override_flag<std::string>(datagen, o, "--pi-kind", "pi_kind", "brightness | mean_gradient");
  override_flag<std::string>(datagen, o, "--pi-direction", "pi_direction", "prefer_high | prefer_low");
  override_flag<double>(datagen, o, "--quantile", "selectivity_quantile", "fraction of impressions kept");

  auto* train = app.add_subcommand("train", "train stage 1 (encoders and codebook) or stage 2 (decoder)");
  int stage = 1;
  std::size_t epochs = 0;
  train->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--epochs", epochs, "epochs for the chosen stage");
  train->add_option("--checkpoint", o.checkpoint, "stage-1 checkpoint to start stage 2 from");
  override_flag<std::string>(train, o, "--pml-form", "pml_form", "sigmoid | literal");
  override_flag<double>(train, o, "--kl-weight", "kl_weight", "KL alignment weight");

  auto* index = app.add_subcommand("index", "catalog index");
  auto* index_build = index->add_subcommand("build", "embed the catalog and the feature store");
  index->require_subcommand(1);
  index_build->add_option("--checkpoint", o.checkpoint, "checkpoint to embed with");

  auto* retrieve = app.add_subcommand("retrieve", "top-k products for one query");
  std::string query;
  bool clustered = false;
  std::size_t k = 10;
  retrieve->add_option("-q,--query", query, "query text")->required();
  retrieve->add_flag("--clustered", clustered, "probe intent clusters instead of a full scan");
  retrieve->add_option("-k", k, "results to return")->check(CLI::PositiveNumber);
  retrieve->add_option("--checkpoint", o.checkpoint, "checkpoint (default: latest)");
  override_flag<std::size_t>(retrieve, o, "--n-probe", "n_probe", "clusters probed");
  override_flag<std::size_t>(retrieve, o, "--top-m", "top_m_features", "features per query token");

  auto* eval = app.add_subcommand("eval", "P@k / R@k / SumR on judged queries");
  std::string mode = "full";
  std::string split = "test";
  eval->add_option("--mode", mode, "full | clustered")->check(CLI::IsMember({"full", "clustered"}));
  eval->add_option("--split", split, "val | test")->check(CLI::IsMember({"val", "test"}));
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint (default: latest)");
  override_flag<std::size_t>(eval, o, "--n-probe", "n_probe", "clusters probed");
  override_flag<std::size_t>(eval, o, "--top-m", "top_m_features", "features per query token");

  auto* bench_cmd = app.add_subcommand("bench", "latency of full vs clustered scans over the judged queries");
  std::size_t repetitions = 5;
  bench_cmd->add_option("--repetitions", repetitions, "passes over the query set")->check(CLI::PositiveNumber);
  bench_cmd->add_option("-k", k, "results per query")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--split", split, "val | test")->check(CLI::IsMember({"val", "test"}));
  bench_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint (default: latest)");
  override_flag<std::size_t>(bench_cmd, o, "--n-probe", "n_probe", "clusters probed");

  auto* export_cmd = app.add_subcommand("export-embeddings", "write an embedding archive");
  std::string space_name = "concatenated";
  std::string export_path;
  export_cmd->add_option("--space", space_name,
                         "concatenated | product-text-half | product-image-half | query-text-half | query-image-half");
  export_cmd->add_option("-o,--output", export_path, "manifest path (payload goes to <path>.bin)")->required();
  export_cmd->add_option("--split", split, "query split for query-side spaces")->check(CLI::IsMember({"train", "val", "test"}));
  export_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint (default: latest)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::kConfig);
  }

  try {
    if (train->parsed() && epochs > 0) o.overrides[stage == 1 ? "epochs_stage1" : "epochs_stage2"] = epochs;
    const auto config = resolve(o);

    if (datagen->parsed()) {
      DirLock lock(config.data_dir);
      const auto data = run_datagen(config);
      for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
      print_json({{"queries", data.queries.size()},
                  {"train_pairs", data.pairs(Split::kTrain).size()},
                  {"val_pairs", data.pairs(Split::kVal).size()},
                  {"test_pairs", data.pairs(Split::kTest).size()},
                  {"data_dir", config.data_dir}});
      return 0;
    }

    DirLock lock(config.output_dir);
    if (train->parsed()) {
      if (stage == 1) {
        run_stage1(config, [](const Stage1EpochMetrics& m) { print_json(m.to_json()); });
        std::cerr << "wrote " << stage1_path(config).string() << "\n";
      } else {
        run_stage2(config, [](const Stage2EpochMetrics& m) { print_json(m.to_json()); }, o.checkpoint_path());
        std::cerr << "wrote " << stage2_path(config).string() << "\n";
      }
    } else if (index_build->parsed()) {
      const auto a = run_index_build(config, o.checkpoint_path());
      print_json({{"products", a.index.size()}, {"clusters", a.index.cluster_count()}, {"index", index_dir(config).string()}});
    } else if (retrieve->parsed()) {
      const auto ck = load_checkpoint(latest_checkpoint(config, o.checkpoint_path()));
      const auto artifacts = load_index(index_dir(config), ck.model);
      const auto pseudo = query_to_pseudo(query, ck.model, artifacts.store, config.top_m_features);
      const auto r = topk(pseudo.embedding, artifacts.index, k, clustered ? ScanMode::kClustered : ScanMode::kFull,
                          config.n_probe);
      nlohmann::ordered_json hits = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < r.ids.size(); ++i) hits.push_back({{"id", r.ids[i]}, {"score", r.scores[i]}});
      print_json({{"query", query}, {"stage", ck.stage()}, {"mode", to_string(r.mode)}, {"intent", pseudo.intent_index},
                  {"results", hits}});
    } else if (eval->parsed()) {
      RetrievalSettings s{parse_scan_mode(mode), config.n_probe, config.top_m_features, kReportCutoffs.back()};
      print_json(run_eval(config, s, o.checkpoint_path(), split).to_json());
    } else if (bench_cmd->parsed()) {
      const auto ck = load_checkpoint(latest_checkpoint(config, o.checkpoint_path()));
      const auto artifacts = load_index(index_dir(config), ck.model);
      const auto queries = test_query_embeddings(config, ck.model, artifacts, split);
      for (const auto& r : bench(queries, artifacts.index, {ScanMode::kFull, ScanMode::kClustered}, repetitions, k,
                                 config.n_probe)) {
        print_json(r.to_json());
      }
    } else if (export_cmd->parsed()) {
      const auto ck = load_checkpoint(latest_checkpoint(config, o.checkpoint_path()));
      const auto space = parse_space(space_name);
      EmbeddingArchive archive;
      archive.d = ck.config.d;
      archive.space = space;
      if (space == Space::kQueryText || space == Space::kQueryImage) {
        for (const auto& q : read_qrels(fs::path(config.data_dir) / "qrels.jsonl", split)) {
          const auto enc = encode_query(tokenize(q.query, ck.config.vocab_size), ck.model.stage1.encoder);
          const auto& v = space == Space::kQueryText ? enc.text_half.values : enc.image_half.values;
          archive.data.insert(archive.data.end(), v.begin(), v.end());
          ++archive.count;
        }
      } else {
        const auto corpus = load_corpus(config.data_dir);
        const auto t = catalog_embeddings(ck.model.stage1, encode_catalog(corpus.products, ck.config.encoder()), space);
        archive.count = t.rows();
        archive.data.assign(t.values().begin(), t.values().end());
      }
      write_archive(export_path, archive);
      print_json({{"space", to_string(space)}, {"count", archive.count}, {"manifest", export_path}});
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error (data): " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  }
}
