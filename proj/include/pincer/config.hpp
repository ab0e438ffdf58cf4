#pragma once

// Run configuration: one JSON document holding every hyperparameter. Unknown
// keys are rejected by name.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "pincer/datagen.hpp"
#include "pincer/retrieval.hpp"
#include "pincer/stage1.hpp"
#include "pincer/stage2.hpp"

namespace pincer {

struct RunConfig {
  // Core keys.
  std::uint64_t seed = 0;
  std::size_t d = 128;
  std::size_t k_intents = 64;
  double lambda = 0.5;
  double temperature = 0.07;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t epochs_stage1 = 15;
  std::size_t epochs_stage2 = 10;
  std::string pml_form = "sigmoid";
  double kl_weight = 1.0;
  std::size_t n_probe = 1;
  std::size_t top_m_features = 1;
  bool rcl_literal = false;
  double selectivity_quantile = 0.25;
  std::string pi_kind = "brightness";
  std::string pi_direction = "prefer_high";
  // Extensions.
  std::string data_dir = "data";
  std::string output_dir = "run";
  std::size_t n_products = 1000;
  std::size_t queries_per_group = 170;
  std::size_t vocab_size = kDefaultVocabSize;
  std::size_t patch_grid = 4;
  std::size_t hist_bins = 8;
  double dropout = 0.10;
  double rcl_weight = 1.0;
  bool symmetric = false;
  double lr_stage2 = 0.0;          // 0: same as lr
  std::size_t batch_size_stage2 = 0;  // 0: same as batch_size
  std::size_t negatives = 1;
  std::size_t decoder_layers = 1;
  std::size_t decoder_heads = 1;
  std::size_t decoder_ffn_mult = 2;

  EncoderConfig encoder() const {
    EncoderConfig e;
    e.d = d;
    e.vocab_size = vocab_size;
    e.patch_grid = patch_grid;
    e.hist_bins = hist_bins;
    e.dropout = dropout;
    return e;
  }

  Stage1Config stage1() const {
    Stage1Config c;
    c.lambda = lambda;
    c.temperature = temperature;
    c.batch_size = batch_size;
    c.epochs = epochs_stage1;
    c.lr = lr;
    c.weight_decay = weight_decay;
    c.k_intents = k_intents;
    c.rcl_weight = rcl_weight;
    c.rcl_literal = rcl_literal;
    c.symmetric = symmetric;
    c.seed = seed;
    c.encoder = encoder();
    return c;
  }

  Stage2Config stage2() const {
    Stage2Config c;
    c.epochs = epochs_stage2;
    c.lr = lr_stage2 > 0.0 ? lr_stage2 : lr;
    c.weight_decay = weight_decay;
    c.batch_size = batch_size_stage2 ? batch_size_stage2 : batch_size;
    c.negatives = negatives;
    c.kl_weight = kl_weight;
    c.pml_form = parse_pml_form(pml_form);
    c.top_m = top_m_features;
    c.seed = seed;
    c.decoder.layers = decoder_layers;
    c.decoder.heads = decoder_heads;
    c.decoder.ffn_mult = decoder_ffn_mult;
    return c;
  }

  PiFunction pi() const {
    PiFunction p;
    p.kind = parse_pi_kind(pi_kind);
    p.direction = parse_pi_direction(pi_direction);
    p.selectivity_quantile = selectivity_quantile;
    return p;
  }

  DatagenConfig datagen() const { return {n_products, queries_per_group, pi(), seed}; }

  void validate() const {
    stage1().validate();
    stage2().validate();
    stage2().decoder.validate(2 * d);
    pi().validate();
    if (n_probe == 0 || n_probe > k_intents) throw ConfigError("n_probe must lie in [1, k_intents]");
    if (n_products < 10) throw ConfigError("n_products must be at least 10");
    if (queries_per_group == 0) throw ConfigError("queries_per_group must be positive");
    if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
    if (patch_grid == 0 || patch_grid > kImageSide) throw ConfigError("patch_grid must lie in [1, 32]");
    if (hist_bins == 0) throw ConfigError("hist_bins must be positive");
  }
};

#define PINCER_CONFIG_FIELDS(X)                                                                                    \
  X(seed) X(d) X(k_intents) X(lambda) X(temperature) X(batch_size) X(lr) X(weight_decay) X(epochs_stage1)          \
  X(epochs_stage2) X(pml_form) X(kl_weight) X(n_probe) X(top_m_features) X(rcl_literal) X(selectivity_quantile)    \
  X(pi_kind) X(pi_direction) X(data_dir) X(output_dir) X(n_products) X(queries_per_group) X(vocab_size)           \
  X(patch_grid) X(hist_bins) X(dropout) X(rcl_weight) X(symmetric) X(lr_stage2) X(batch_size_stage2) X(negatives) \
  X(decoder_layers) X(decoder_heads) X(decoder_ffn_mult)

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
#define PINCER_PUT(name) j[#name] = c.name;
  PINCER_CONFIG_FIELDS(PINCER_PUT)
#undef PINCER_PUT
  return j;
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  const auto& v = j.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(std::string("config key '") + key + "' must be a boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
    }
  } else {
    if (!v.is_number()) throw ConfigError(std::string("config key '") + key + "' must be a number");
  }
  out = v.get<T>();
}

}  // namespace detail

/// Missing keys keep their defaults; the result is validated.
inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  const auto known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
#define PINCER_GET(name) \
  if (j.contains(#name)) detail::read_field(j, #name, c.name);
  PINCER_CONFIG_FIELDS(PINCER_GET)
#undef PINCER_GET
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace pincer
