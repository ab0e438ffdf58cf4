#pragma once

// Stage 1: contrastive alignment of the two towers (concatenated space and
// both halves) joined with the intent codebook's competitive-learning loss.

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pincer/corpus.hpp"
#include "pincer/encoders.hpp"
#include "pincer/intent_codebook.hpp"
#include "pincer/optim.hpp"

namespace pincer {

struct Stage1Config {
  double lambda = 0.5;
  double temperature = 0.07;
  std::size_t batch_size = 32;
  std::size_t epochs = 15;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t k_intents = 64;
  double rcl_weight = 1.0;
  bool rcl_literal = false;
  bool symmetric = false;
  std::uint64_t seed = 0;
  EncoderConfig encoder;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (k_intents < 2) throw ConfigError("k_intents must be at least 2");
    if (rcl_weight < 0.0) throw ConfigError("rcl_weight must be non-negative");
    if (encoder.d == 0) throw ConfigError("d must be positive");
    if (encoder.dropout < 0.0 || encoder.dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
  }
};

/// -sum_n log softmax_b(x_n . y_b / T)[n]. The symmetric variant averages the
/// query->product and product->query directions.
inline Tensor contrastive_loss(const Tensor& x, const Tensor& y, double temperature, bool symmetric = false) {
  if (x.shape() != y.shape()) throw DimensionError("contrastive_loss: x and y shapes differ");
  const std::size_t b = x.rows();
  if (b < 2) throw ContractError("contrastive_loss: batch needs at least 2 rows");
  if (!(temperature > 0.0)) throw ContractError("contrastive_loss: temperature must be positive");
  std::vector<std::size_t> diag(b);
  std::iota(diag.begin(), diag.end(), 0);
  const auto logits = ops::scale(ops::matmul(x, ops::transpose(y)), 1.0 / temperature);
  const auto forward = ops::scale(ops::sum(ops::pick_columns(ops::log_softmax(logits), diag)), -1.0);
  if (!symmetric) return forward;
  const auto backward = ops::scale(ops::sum(ops::pick_columns(ops::log_softmax(ops::transpose(logits)), diag)), -1.0);
  return ops::scale(ops::add(forward, backward), 0.5);
}

struct Stage1Loss {
  Tensor total;
  double qp = 0.0;
  double qpt = 0.0;
  double qpi = 0.0;
  double rcl = 0.0;
  std::size_t matches = 0;
  std::size_t rows = 0;
};

inline Stage1Loss stage1_loss(const TowerOutput& q, const TowerOutput& p, IntentCodebook& book,
                              const Stage1Config& config, const RclRouting* routing = nullptr) {
  const auto l_qp = contrastive_loss(q.concat, p.concat, config.temperature, config.symmetric);
  const auto l_qpt = contrastive_loss(q.text_half, p.text_half, config.temperature, config.symmetric);
  const auto l_qpi = contrastive_loss(q.image_half, p.image_half, config.temperature, config.symmetric);
  auto rcl = rcl_loss(q.concat, p.concat, book, config.rcl_literal, routing);
  Stage1Loss out;
  out.total = ops::add(ops::add(ops::scale(l_qp, config.lambda), ops::scale(ops::add(l_qpt, l_qpi), 1.0 - config.lambda)),
                       ops::scale(rcl.loss, config.rcl_weight));
  out.qp = l_qp.item();
  out.qpt = l_qpt.item();
  out.qpi = l_qpi.item();
  out.rcl = rcl.loss.item();
  out.matches = rcl.routing.matches;
  out.rows = q.concat.rows();
  return out;
}

struct Stage1Model {
  EncoderParams encoder;
  IntentCodebook codebook;

  std::vector<Tensor> parameters() const {
    auto params = encoder.parameters();
    params.push_back(codebook.tensor());
    return params;
  }
};

inline Stage1Model init_stage1(const Stage1Config& config) {
  config.validate();
  Stage1Model model;
  model.encoder = EncoderParams::init(config.encoder, derive_seed(config.seed, 10));
  model.codebook = init_uniform(config.k_intents, 2 * config.encoder.d, derive_seed(config.seed, 11));
  return model;
}

struct Stage1EpochMetrics {
  std::size_t epoch = 0;
  double l_qp = 0.0;
  double l_qpt = 0.0;
  double l_qpi = 0.0;
  double rcl = 0.0;
  double match_rate = 0.0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"L_qp", l_qp},         {"L_qpt", l_qpt}, {"L_qpi", l_qpi},
            {"RCL", rcl},     {"match_rate", match_rate}, {"lr", lr},   {"train_loss", train_loss},
            {"val_loss", val_loss}};
  }
};

namespace detail {

struct Stage1Batch {
  std::vector<TextTokenSequence> queries;
  std::vector<TextTokenSequence> titles;
  std::vector<const ImagePatchGrid*> images;
  std::vector<std::size_t> products;
};

inline Stage1Batch gather_batch(const EncodedCatalog& catalog, std::span<const EncodedPair> pairs,
                                std::span<const std::size_t> order) {
  Stage1Batch batch;
  for (std::size_t i : order) {
    const auto& pair = pairs[i];
    batch.queries.push_back(pair.query);
    batch.titles.push_back(catalog.titles.at(pair.product));
    batch.images.push_back(&catalog.images.at(pair.product));
    batch.products.push_back(pair.product);
  }
  return batch;
}

inline std::string describe_batch(const Stage1Batch& batch) {
  std::ostringstream os;
  for (std::size_t i = 0; i < batch.queries.size(); ++i) {
    os << "\n  [" << i << "] query='" << batch.queries[i].source << "' product=" << batch.products[i];
  }
  return os.str();
}

}  // namespace detail

/// Mean Stage-1 loss over full batches of `pairs`, evaluated without dropout.
inline double stage1_eval_loss(Stage1Model& model, const EncodedCatalog& catalog, std::span<const EncodedPair> pairs,
                               const Stage1Config& config) {
  NoGradGuard no_grad;
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
    const auto count = std::min(config.batch_size, order.size() - start);
    if (count < 2) break;
    const auto batch = detail::gather_batch(catalog, pairs, std::span(order).subspan(start, count));
    const auto q = encode_query_batch(batch.queries, model.encoder);
    const auto p = encode_product_batch(batch.titles, batch.images, model.encoder);
    total += stage1_loss(q, p, model.codebook, config).total.item();
    ++batches;
  }
  return batches ? total / static_cast<double>(batches) : 0.0;
}

/// Trains encoders, projectors and codebook in place. Epoch metrics go to
/// `on_epoch` when given. Batches smaller than 2 at the end of an epoch are
/// skipped since in-batch negatives need a second row.
inline void train_stage1(Stage1Model& model, const EncodedCatalog& catalog, std::span<const EncodedPair> train,
                         std::span<const EncodedPair> val, const Stage1Config& config,
                         const std::function<void(const Stage1EpochMetrics&)>& on_epoch = {}) {
  config.validate();
  if (config.epochs == 0) return;
  if (train.size() < 2) throw ContractError("train_stage1: need at least 2 training pairs");
  AdamW optimizer(model.parameters(), {.lr = config.lr, .weight_decay = config.weight_decay});
  PlateauScheduler scheduler;
  Rng shuffle_rng(derive_seed(config.seed, 20));
  Rng dropout_rng(derive_seed(config.seed, 21));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto& tape = Tape::active();
  tape.reset();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    Stage1EpochMetrics m;
    m.epoch = epoch;
    m.lr = optimizer.lr();
    std::size_t batches = 0, rows = 0, matches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto count = std::min(config.batch_size, order.size() - start);
      if (count < 2) break;
      const auto batch = detail::gather_batch(catalog, train, std::span(order).subspan(start, count));
      const EncodeMode mode{.train = true, .rng = &dropout_rng};
      optimizer.zero_grad();
      const auto q = encode_query_batch(batch.queries, model.encoder, mode);
      const auto p = encode_product_batch(batch.titles, batch.images, model.encoder, mode);
      const auto loss = stage1_loss(q, p, model.codebook, config);
      if (!std::isfinite(loss.total.item())) {
        std::ostringstream os;
        os << "stage 1: non-finite loss at epoch " << epoch << " (L_qp=" << loss.qp << " L_qpt=" << loss.qpt
           << " L_qpi=" << loss.qpi << " RCL=" << loss.rcl << ") in batch:" << detail::describe_batch(batch);
        tape.reset();
        throw NumericError(os.str());
      }
      backward(loss.total);
      tape.reset();
      optimizer.step();
      model.codebook.renormalize();
      ++model.codebook.steps;
      m.l_qp += loss.qp;
      m.l_qpt += loss.qpt;
      m.l_qpi += loss.qpi;
      m.rcl += loss.rcl;
      m.train_loss += loss.total.item();
      matches += loss.matches;
      rows += loss.rows;
      ++batches;
    }
    if (batches) {
      const double inv = 1.0 / static_cast<double>(batches);
      m.l_qp *= inv;
      m.l_qpt *= inv;
      m.l_qpi *= inv;
      m.rcl *= inv;
      m.train_loss *= inv;
      m.match_rate = static_cast<double>(matches) / static_cast<double>(rows);
    }
    m.val_loss = val.size() >= 2 ? stage1_eval_loss(model, catalog, val, config) : m.train_loss;
    optimizer.set_lr(scheduler.observe(m.val_loss, optimizer.lr()));
    if (on_epoch) on_epoch(m);
  }
}

/// Fraction of pairs whose query and product select the same intent, in
/// eval mode.
inline double intent_match_rate(const Stage1Model& model, const EncodedCatalog& catalog,
                                std::span<const EncodedPair> pairs) {
  if (pairs.empty()) throw EmptyInputError("intent_match_rate: no pairs");
  NoGradGuard no_grad;
  std::size_t matches = 0;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < pairs.size(); start += chunk) {
    const auto count = std::min(chunk, pairs.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = detail::gather_batch(catalog, pairs, idx);
    const auto q = encode_query_batch(batch.queries, model.encoder);
    const auto p = encode_product_batch(batch.titles, batch.images, model.encoder);
    for (std::size_t i = 0; i < count; ++i) {
      if (nearest(q.concat.row_values(i), model.codebook).index == nearest(p.concat.row_values(i), model.codebook).index) {
        ++matches;
      }
    }
  }
  return static_cast<double>(matches) / static_cast<double>(pairs.size());
}

}  // namespace pincer
