#pragma once

// Stage 2: a pre-LN causal decoder that turns (intent, retrieved product
// features, learnable L_v) into a pseudo-product embedding, cross-attending
// to the query. Trained with a pairwise preference loss against an
// intent-cluster negative plus a KL term on in-batch similarity profiles.

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pincer/evaluation.hpp"
#include "pincer/feature_store.hpp"
#include "pincer/intent_codebook.hpp"
#include "pincer/optim.hpp"
#include "pincer/retrieval.hpp"

namespace pincer {

struct DecoderConfig {
  std::size_t layers = 1;
  std::size_t heads = 1;
  std::size_t ffn_mult = 2;
  double lv_init_scale = 1e-4;

  void validate(std::size_t width) const {
    if (layers == 0) throw ConfigError("decoder_layers must be at least 1");
    if (heads == 0 || width % heads != 0) {
      throw ConfigError("decoder_heads must divide the working width " + std::to_string(width));
    }
    if (ffn_mult == 0) throw ConfigError("decoder_ffn_mult must be at least 1");
    if (!(lv_init_scale >= 0.0)) throw ConfigError("lv_init_scale must be non-negative");
  }
};

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // width x width
};

struct DecoderLayer {
  Tensor ln1_gain, ln1_bias;
  AttentionParams self;
  Tensor ln2_gain, ln2_bias;
  AttentionParams cross;
  Tensor ln3_gain, ln3_bias;
  Tensor w1, b1, w2, b2;
};

struct DecoderParams {
  DecoderConfig config;
  std::size_t width = 0;
  std::vector<DecoderLayer> layers;
  Tensor lv;  // 1 x width

  /// Starts as a pass-through of the query: self-attention and FFN outputs
  /// are zero, the cross-attention value path is the identity and L_v is
  /// tiny, so the initial pseudo product is the normalized query.
  static DecoderParams init(const DecoderConfig& config, std::size_t width, std::uint64_t seed) {
    config.validate(width);
    DecoderParams p;
    p.config = config;
    p.width = width;
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    const std::size_t hidden = config.ffn_mult * width;
    auto ones = [&](std::size_t n) { return Tensor({1, n}, std::vector<double>(n, 1.0), true); };
    auto identity = [&] {
      Tensor t = Tensor::zeros({width, width}, true);
      for (std::size_t i = 0; i < width; ++i) t.values_mut()[i * width + i] = 1.0;
      return t;
    };
    for (std::size_t l = 0; l < config.layers; ++l) {
      DecoderLayer layer;
      layer.ln1_gain = ones(width);
      layer.ln1_bias = Tensor::zeros({1, width}, true);
      layer.self.wq = init_uniform_matrix(width, width, bound, rng);
      layer.self.wk = init_uniform_matrix(width, width, bound, rng);
      layer.self.wv = init_uniform_matrix(width, width, bound, rng);
      layer.self.wo = Tensor::zeros({width, width}, true);
      layer.ln2_gain = ones(width);
      layer.ln2_bias = Tensor::zeros({1, width}, true);
      layer.cross.wq = init_uniform_matrix(width, width, bound, rng);
      layer.cross.wk = init_uniform_matrix(width, width, bound, rng);
      layer.cross.wv = identity();
      layer.cross.wo = identity();
      layer.ln3_gain = ones(width);
      layer.ln3_bias = Tensor::zeros({1, width}, true);
      layer.w1 = init_uniform_matrix(width, hidden, bound, rng);
      layer.b1 = Tensor::zeros({1, hidden}, true);
      layer.w2 = Tensor::zeros({hidden, width}, true);
      layer.b2 = Tensor::zeros({1, width}, true);
      p.layers.push_back(std::move(layer));
    }
    std::vector<double> lv(width);
    for (auto& v : lv) v = config.lv_init_scale * normal(rng);
    p.lv = Tensor({1, width}, std::move(lv), true);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      const std::string pre = "decoder.layer" + std::to_string(l) + ".";
      out.insert(out.end(), {{pre + "ln1_gain", L.ln1_gain},   {pre + "ln1_bias", L.ln1_bias},
                             {pre + "self.wq", L.self.wq},     {pre + "self.wk", L.self.wk},
                             {pre + "self.wv", L.self.wv},     {pre + "self.wo", L.self.wo},
                             {pre + "ln2_gain", L.ln2_gain},   {pre + "ln2_bias", L.ln2_bias},
                             {pre + "cross.wq", L.cross.wq},   {pre + "cross.wk", L.cross.wk},
                             {pre + "cross.wv", L.cross.wv},   {pre + "cross.wo", L.cross.wo},
                             {pre + "ln3_gain", L.ln3_gain},   {pre + "ln3_bias", L.ln3_bias},
                             {pre + "ffn.w1", L.w1},           {pre + "ffn.b1", L.b1},
                             {pre + "ffn.w2", L.w2},           {pre + "ffn.b2", L.b2}});
    }
    out.emplace_back("decoder.lv", lv);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }
};

// ------------------------------------------------------------ decoder input

/// Fixed part of one decoder input: the query it answers, the selected
/// intent and the lifted product features, already in sequence order.
struct DecoderInput {
  std::vector<double> query;   // 2d
  std::size_t intent_index = 0;
  std::vector<double> rows;    // (1 + feature rows) x 2d: intent, then features
  std::size_t row_count = 0;
  // (product, feature, is_image) per feature row.
  struct Source {
    std::size_t product;
    std::size_t feature;
    bool image;
  };
  std::vector<Source> sources;

  std::size_t sequence_length() const { return row_count + 1; }  // + L_v
};

/// Sequence: [intent, per query token and rank m: text [f; 0], image [0; f]].
inline DecoderInput build_decoder_input(std::span<const double> query_concat, std::size_t intent_index,
                                        std::span<const double> intent, const FeatureQueryResult& features) {
  const std::size_t w = query_concat.size();
  if (w == 0 || w % 2 != 0) throw ContractError("decoder input: query width must be even and positive");
  if (intent.size() != w) throw ContractError("decoder input: intent width differs from query width");
  const std::size_t d = w / 2;
  DecoderInput in;
  in.query.assign(query_concat.begin(), query_concat.end());
  in.intent_index = intent_index;
  in.rows.assign(intent.begin(), intent.end());
  in.row_count = 1;
  auto lift = [&](const FeatureHit& hit, bool image) {
    if (hit.values.size() != d) throw ContractError("decoder input: feature width differs from d");
    const std::size_t base = in.rows.size();
    in.rows.resize(base + w, 0.0);
    std::copy(hit.values.begin(), hit.values.end(), in.rows.begin() + static_cast<std::ptrdiff_t>(base + (image ? d : 0)));
    in.sources.push_back({hit.product, hit.feature, image});
    ++in.row_count;
  };
  for (const auto& token : features.tokens) {
    for (std::size_t m = 0; m < std::max(token.text.size(), token.image.size()); ++m) {
      if (m < token.text.size()) lift(token.text[m], false);
      if (m < token.image.size()) lift(token.image[m], true);
    }
  }
  return in;
}

// ------------------------------------------------------------ forward

namespace detail {

/// Sinusoidal position codes, added to the inputs of self-attention queries
/// and keys only; the residual stream carries no position signal.
inline Tensor position_codes(std::size_t n, std::size_t width) {
  std::vector<double> v(n * width);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      v[pos * width + i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return Tensor({n, width}, std::move(v));
}

inline Tensor attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, const AttentionParams& p,
                        std::size_t heads, bool causal) {
  const std::size_t width = p.wq.rows();
  const std::size_t dh = width / heads;
  const auto q = ops::matmul(q_in, p.wq);
  const auto k = ops::matmul(k_in, p.wk);
  const auto v = ops::matmul(v_in, p.wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor joined;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = heads == 1 ? q : ops::slice_cols(q, h * dh, (h + 1) * dh);
    const auto kh = heads == 1 ? k : ops::slice_cols(k, h * dh, (h + 1) * dh);
    const auto vh = heads == 1 ? v : ops::slice_cols(v, h * dh, (h + 1) * dh);
    const auto weights = ops::softmax(ops::scale(ops::matmul(qh, ops::transpose(kh)), scale), causal);
    const auto out = ops::matmul(weights, vh);
    joined = h == 0 ? out : ops::concat_cols(joined, out);
  }
  return ops::matmul(joined, p.wo);
}

}  // namespace detail

struct DecoderTrace {
  std::vector<Tensor> hidden;  // per layer, sequence_length x width
};

/// Runs the decoder on the sequence [rows; L_v] with `context` (rows x
/// width) as the cross-attention source. Returns the unit-L2 final row.
inline Tensor decode(const Tensor& sequence_rows, const Tensor& context, const DecoderParams& params,
                     DecoderTrace* trace = nullptr) {
  const std::size_t w = params.width;
  if (sequence_rows.cols() != w || context.cols() != w) throw ContractError("decode: input width differs from decoder width");
  auto h = ops::stack_rows({sequence_rows, params.lv});
  const std::size_t n = h.rows();
  const auto pos = detail::position_codes(n, w);
  for (const auto& L : params.layers) {
    const auto a = ops::layer_norm(h, L.ln1_gain, L.ln1_bias);
    const auto a_pos = ops::add(a, pos);
    h = ops::add(h, detail::attention(a_pos, a_pos, a, L.self, params.config.heads, true));
    const auto c = ops::layer_norm(h, L.ln2_gain, L.ln2_bias);
    h = ops::add(h, detail::attention(c, context, context, L.cross, params.config.heads, false));
    const auto f = ops::layer_norm(h, L.ln3_gain, L.ln3_bias);
    h = ops::add(h, ops::add_row(ops::matmul(ops::gelu(ops::add_row(ops::matmul(f, L.w1), L.b1)), L.w2), L.b2));
    if (trace) trace->hidden.push_back(h.detach());
  }
  return ops::l2_normalize_rows(ops::slice_rows(h, n - 1, n));
}

inline Tensor decode(const DecoderInput& input, const DecoderParams& params, DecoderTrace* trace = nullptr) {
  if (input.query.size() != params.width) throw ContractError("decode: query width differs from decoder width");
  const Tensor rows({input.row_count, params.width}, input.rows);
  return decode(rows, Tensor::row(input.query), params, trace);
}

struct PseudoProduct {
  std::vector<double> embedding;  // 2d, unit-L2
  std::size_t intent_index = 0;
  std::vector<DecoderInput::Source> sources;
};

inline PseudoProduct generate_pseudo(const DecoderInput& input, const DecoderParams& params) {
  NoGradGuard no_grad;
  const auto out = decode(input, params);
  return {std::vector<double>(out.values().begin(), out.values().end()), input.intent_index, input.sources};
}

/// Convenience overload assembling the input from its parts.
inline PseudoProduct generate_pseudo(std::span<const double> query_concat, std::size_t intent_index,
                                     std::span<const double> intent, const FeatureQueryResult& features,
                                     const DecoderParams& params) {
  return generate_pseudo(build_decoder_input(query_concat, intent_index, intent, features), params);
}

// ------------------------------------------------------------ losses

enum class PmlForm { kSigmoid, kLiteral };

inline const char* to_string(PmlForm f) { return f == PmlForm::kSigmoid ? "sigmoid" : "literal"; }

inline PmlForm parse_pml_form(const std::string& s) {
  if (s == "sigmoid") return PmlForm::kSigmoid;
  if (s == "literal") return PmlForm::kLiteral;
  throw ConfigError("pml_form must be 'sigmoid' or 'literal', got '" + s + "'");
}

/// Mean over rows. Sigmoid: -log sigma(p.t - p.n). Literal: p.n - p.t.
inline Tensor pml_loss(const Tensor& pseudo, const Tensor& target, const Tensor& negative, PmlForm form,
                       std::span<const std::size_t> target_ids = {}, std::span<const std::size_t> negative_ids = {}) {
  if (pseudo.shape() != target.shape() || pseudo.shape() != negative.shape()) {
    throw ContractError("pml_loss: pseudo, target and negative shapes differ");
  }
  if (target_ids.size() != negative_ids.size()) throw ContractError("pml_loss: id lists differ in length");
  for (std::size_t i = 0; i < target_ids.size(); ++i) {
    if (target_ids[i] == negative_ids[i]) {
      throw ContractError("pml_loss: negative equals target (product " + std::to_string(target_ids[i]) + ")");
    }
  }
  const auto margin = ops::sub(ops::row_dot(pseudo, target), ops::row_dot(pseudo, negative));
  if (form == PmlForm::kSigmoid) return ops::scale(ops::mean(ops::log_sigmoid(margin)), -1.0);
  return ops::scale(ops::mean(margin), -1.0);
}

/// Mean over rows n of KL(P_n || Q_n) with P_n = softmax_b(pseudo_n . y_b)
/// and Q_n = softmax_b(x_n . y_b).
inline Tensor kl_alignment(const Tensor& pseudo, const Tensor& query, const Tensor& product) {
  if (pseudo.shape() != query.shape() || pseudo.shape() != product.shape()) {
    throw ContractError("kl_alignment: batch shapes differ");
  }
  if (pseudo.rows() < 2) throw ContractError("kl_alignment: batch needs at least 2 rows");
  const auto yt = ops::transpose(product);
  const auto log_p = ops::log_softmax(ops::matmul(pseudo, yt));
  const auto log_q = ops::log_softmax(ops::matmul(query, yt));
  const auto kl = ops::sum(ops::mul(ops::exp(log_p), ops::sub(log_p, log_q)));
  return ops::scale(kl, 1.0 / static_cast<double>(pseudo.rows()));
}

// ------------------------------------------------------------ negatives

/// Uniform over the target's intent cluster without the target; a global
/// uniform draw (without the target) when the cluster has no other member.
inline std::size_t sample_negative(std::size_t target, const ClusterAssignment& clusters, Rng& rng) {
  const std::size_t n = clusters.assignment.size();
  if (n < 2) throw StateError("sample_negative: catalog needs at least 2 products");
  if (target >= n) throw ContractError("sample_negative: target id out of range");
  const auto& members = clusters.members[clusters.assignment[target]];
  if (members.size() >= 2) {
    // members are in ascending id order; skip the target's slot.
    const auto pos = static_cast<std::size_t>(std::lower_bound(members.begin(), members.end(), target) - members.begin());
    auto i = uniform_index(rng, members.size() - 1);
    if (i >= pos) ++i;
    return members[i];
  }
  auto i = uniform_index(rng, n - 1);
  if (i >= target) ++i;
  return i;
}

// ------------------------------------------------------------ training

struct Stage2Config {
  std::size_t epochs = 10;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t negatives = 1;
  double kl_weight = 1.0;
  PmlForm pml_form = PmlForm::kSigmoid;
  std::size_t top_m = 1;
  std::uint64_t seed = 0;
  DecoderConfig decoder;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (negatives < 1) throw ConfigError("negatives must be at least 1");
    if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be non-negative");
    if (top_m < 1) throw ConfigError("top_m_features must be at least 1");
  }
};

struct Stage2Example {
  DecoderInput input;
  std::size_t target = 0;
};

/// Per-query validation data: one decoder input per distinct query with its
/// relevant products.
struct Stage2Validation {
  std::vector<DecoderInput> inputs;
  std::vector<RelevantSet> relevant;
  const ProductIndex* index = nullptr;
};

struct Stage2EpochMetrics {
  std::size_t epoch = 0;
  double pml = 0.0;
  double kl = 0.0;
  double loss = 0.0;
  double val_sum_r = 0.0;
  double lr = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"PML", pml}, {"KL", kl}, {"loss", loss}, {"val_SumR", val_sum_r}, {"lr", lr}};
  }
};

/// Full-scan SumR of pseudo products over the validation queries.
inline double stage2_sum_r(const DecoderParams& params, const Stage2Validation& val) {
  if (!val.index || val.inputs.empty()) return 0.0;
  std::vector<std::vector<std::size_t>> rankings;
  for (const auto& in : val.inputs) {
    const auto pseudo = generate_pseudo(in, params);
    rankings.push_back(topk_full(pseudo.embedding, *val.index, kReportCutoffs.back()).ids);
  }
  return evaluate_rankings(rankings, val.relevant).sum_r;
}

struct Stage2Loss {
  Tensor total;
  double pml = 0.0;
  double kl = 0.0;
};

/// Batch loss. `negatives` holds config.negatives ids per example, row major.
inline Stage2Loss stage2_loss(const DecoderParams& params, std::span<const Stage2Example> batch,
                              const Tensor& product_embeddings, std::span<const std::size_t> negatives,
                              const Stage2Config& config) {
  const std::size_t b = batch.size();
  const std::size_t m = config.negatives;
  if (negatives.size() != b * m) throw ContractError("stage2_loss: need negatives per example");
  std::vector<Tensor> pseudo_rows;
  std::vector<double> queries;
  std::vector<std::size_t> targets;
  for (const auto& ex : batch) {
    pseudo_rows.push_back(decode(ex.input, params));
    queries.insert(queries.end(), ex.input.query.begin(), ex.input.query.end());
    targets.push_back(ex.target);
  }
  const auto pseudo = ops::stack_rows(pseudo_rows);
  const auto target = ops::select_rows(product_embeddings, targets);
  Tensor pml;
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<std::size_t> neg(b);
    for (std::size_t i = 0; i < b; ++i) neg[i] = negatives[i * m + j];
    const auto term = pml_loss(pseudo, target, ops::select_rows(product_embeddings, neg), config.pml_form, targets, neg);
    pml = j == 0 ? term : ops::add(pml, term);
  }
  if (m > 1) pml = ops::scale(pml, 1.0 / static_cast<double>(m));
  Stage2Loss out;
  out.pml = pml.item();
  out.total = pml;
  if (b >= 2 && config.kl_weight > 0.0) {
    const Tensor query({b, params.width}, std::move(queries));
    const auto kl = kl_alignment(pseudo, query, target);
    out.kl = kl.item();
    out.total = ops::add(pml, ops::scale(kl, config.kl_weight));
  }
  return out;
}

/// Trains decoder parameters (incl. L_v) in place; nothing upstream is
/// touched. `product_embeddings` is the frozen catalog (N x 2d) and
/// `clusters` its intent clusters.
inline void train_stage2(DecoderParams& params, std::span<const Stage2Example> train, const Tensor& product_embeddings,
                         const ClusterAssignment& clusters, const Stage2Validation& val, const Stage2Config& config,
                         const std::function<void(const Stage2EpochMetrics&)>& on_epoch = {}) {
  config.validate();
  if (config.epochs == 0) return;
  if (train.size() < 2) throw ContractError("train_stage2: need at least 2 training examples");
  if (product_embeddings.cols() != params.width) throw DimensionError("train_stage2: product width differs from decoder");
  AdamW optimizer(params.parameters(), {.lr = config.lr, .weight_decay = config.weight_decay});
  PlateauScheduler scheduler;
  Rng shuffle_rng(derive_seed(config.seed, 40));
  Rng negative_rng(derive_seed(config.seed, 41));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto& tape = Tape::active();
  tape.reset();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    Stage2EpochMetrics m;
    m.epoch = epoch;
    m.lr = optimizer.lr();
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto count = std::min(config.batch_size, order.size() - start);
      if (count < 2) break;
      std::vector<Stage2Example> batch;
      std::vector<std::size_t> negatives;
      for (std::size_t i = start; i < start + count; ++i) {
        batch.push_back(train[order[i]]);
        for (std::size_t j = 0; j < config.negatives; ++j)
          negatives.push_back(sample_negative(batch.back().target, clusters, negative_rng));
      }
      optimizer.zero_grad();
      const auto loss = stage2_loss(params, batch, product_embeddings, negatives, config);
      if (!std::isfinite(loss.total.item())) {
        tape.reset();
        std::ostringstream os;
        os << "stage 2: non-finite loss at epoch " << epoch << " (PML=" << loss.pml << " KL=" << loss.kl << ") targets:";
        for (const auto& ex : batch) os << ' ' << ex.target;
        throw NumericError(os.str());
      }
      backward(loss.total);
      tape.reset();
      optimizer.step();
      m.pml += loss.pml;
      m.kl += loss.kl;
      m.loss += loss.total.item();
      ++batches;
    }
    if (batches) {
      m.pml /= static_cast<double>(batches);
      m.kl /= static_cast<double>(batches);
      m.loss /= static_cast<double>(batches);
    }
    m.val_sum_r = stage2_sum_r(params, val);
    optimizer.set_lr(scheduler.observe(m.loss, optimizer.lr()));
    if (on_epoch) on_epoch(m);
  }
}

}  // namespace pincer
