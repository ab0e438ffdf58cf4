#pragma once

// Purchase-intention codebook and reward-based competitive learning.
//
// A pair (x, y) selects its nearest intent on each side. When both sides
// pick the same intent the pair is rewarded and pulled toward it, scaled by
// the remaining probability 1 - p; otherwise both sides are pushed away from
// their selections with force p. Selection is plain routing and carries no
// gradient.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "pincer/ops.hpp"
#include "pincer/optim.hpp"
#include "pincer/random.hpp"

namespace pincer {

class IntentCodebook {
 public:
  IntentCodebook() = default;
  explicit IntentCodebook(Tensor vectors) : vectors_(std::move(vectors)) {
    if (vectors_.rows() < 2) throw ConfigError("intent codebook needs at least 2 vectors");
  }

  std::size_t size() const { return vectors_.rows(); }
  std::size_t dim() const { return vectors_.cols(); }
  std::span<const double> vector(std::size_t k) const { return vectors_.row_values(k); }

  Tensor& tensor() { return vectors_; }
  const Tensor& tensor() const { return vectors_; }

  std::uint64_t steps = 0;

  /// Projects every vector back onto the unit sphere.
  void renormalize() {
    auto v = vectors_.values_mut();
    const std::size_t n = dim();
    for (std::size_t k = 0; k < size(); ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += v[k * n + j] * v[k * n + j];
      s = std::sqrt(s);
      if (s == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) v[k * n + j] /= s;
    }
  }

 private:
  Tensor vectors_;
};

/// Components i.i.d. uniform on [-1, 1], then each vector scaled to unit L2.
inline IntentCodebook init_uniform(std::size_t k, std::size_t dim, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k_intents must be at least 2, got " + std::to_string(k));
  if (dim == 0) throw ConfigError("intent dimension must be positive");
  Rng rng(seed);
  std::vector<double> v(k * dim);
  for (auto& x : v) x = uniform(rng, -1.0, 1.0);
  IntentCodebook book(Tensor({k, dim}, std::move(v), true));
  book.renormalize();
  return book;
}

struct IntentSelection {
  std::size_t index = 0;
  double distance = 0.0;
  double probability = 1.0;
};

/// p = 2 * (1 - sigmoid(distance)), written as 2 / (1 + e^distance) so that
/// large distances stay positive instead of cancelling to zero.
inline double selection_probability(double distance) {
  if (!(distance >= 0.0)) throw ContractError("selection_probability: distance must be >= 0");
  return 2.0 / (1.0 + std::exp(distance));
}

template <typename T>
inline double euclidean(std::span<const T> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = static_cast<double>(a[j]) - b[j];
    s += diff * diff;
  }
  return std::sqrt(s);
}

/// Nearest intent by Euclidean distance; ties go to the lowest index.
template <typename T>
inline IntentSelection nearest(std::span<const T> v, const IntentCodebook& book) {
  if (v.size() != book.dim()) {
    throw ContractError("nearest: vector has " + std::to_string(v.size()) + " entries, codebook uses " +
                        std::to_string(book.dim()));
  }
  IntentSelection best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < book.size(); ++k) {
    const double dist = euclidean(v, book.vector(k));
    if (dist < best.distance) {
      best.distance = dist;
      best.index = k;
    }
  }
  best.probability = selection_probability(best.distance);
  return best;
}

inline IntentSelection nearest(const std::vector<double>& v, const IntentCodebook& book) {
  return nearest(std::span<const double>(v), book);
}

struct Reward {
  int r = 1;
  double rp_x = 0.0;
  double rp_y = 0.0;
};

inline Reward reward_and_remaining(const IntentSelection& sx, const IntentSelection& sy) {
  Reward out;
  const bool match = sx.index == sy.index;
  out.r = match ? 1 : -1;
  out.rp_x = match ? 1.0 - sx.probability : -sx.probability;
  out.rp_y = match ? 1.0 - sy.probability : -sy.probability;
  return out;
}

/// Beyond this distance a repelling coefficient is dropped to zero.
inline constexpr double kRepulsionClamp = 2.0;

/// Per-side multiplier on the distance term. The default keeps rp as is; the
/// literal variant multiplies by r, which makes mismatches attract as well.
inline double rcl_coefficient(int r, double rp, double distance, bool literal) {
  const double c = literal ? r * rp : rp;
  if (c < 0.0 && distance > kRepulsionClamp) return 0.0;
  return c;
}

/// Selections and per-side coefficients for a batch. Both are held constant
/// while differentiating: rp scales the step like a per-sample learning rate.
struct RclRouting {
  std::vector<IntentSelection> sel_x;
  std::vector<IntentSelection> sel_y;
  std::vector<double> coef_x;
  std::vector<double> coef_y;
  std::size_t matches = 0;
};

inline RclRouting rcl_route(const Tensor& x, const Tensor& y, const IntentCodebook& book, bool literal = false) {
  if (x.shape() != y.shape()) throw DimensionError("rcl_loss: x and y shapes differ");
  if (x.cols() != book.dim()) throw ContractError("rcl_loss: embedding width does not match the codebook");
  RclRouting out;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto sx = nearest(x.row_values(i), book);
    const auto sy = nearest(y.row_values(i), book);
    const auto rw = reward_and_remaining(sx, sy);
    out.coef_x.push_back(rcl_coefficient(rw.r, rw.rp_x, sx.distance, literal));
    out.coef_y.push_back(rcl_coefficient(rw.r, rw.rp_y, sy.distance, literal));
    if (rw.r == 1) ++out.matches;
    out.sel_x.push_back(sx);
    out.sel_y.push_back(sy);
  }
  return out;
}

struct RclResult {
  Tensor loss;  // scalar, mean over rows
  RclRouting routing;
};

/// Mean over rows of 0.5 * (c_x |x - s_kx| + c_y |y - s_ky|). A routing
/// computed earlier may be passed in to reuse its selections and
/// coefficients.
inline RclResult rcl_loss(const Tensor& x, const Tensor& y, IntentCodebook& book, bool literal = false,
                          const RclRouting* routing = nullptr) {
  RclResult out;
  out.routing = routing ? *routing : rcl_route(x, y, book, literal);
  const auto& r = out.routing;
  const std::size_t b = x.rows();
  if (r.sel_x.size() != b || r.sel_y.size() != b) throw DimensionError("rcl_loss: routing does not match the batch");
  std::vector<std::size_t> kx(b), ky(b);
  for (std::size_t i = 0; i < b; ++i) {
    kx[i] = r.sel_x[i].index;
    ky[i] = r.sel_y[i].index;
  }
  const auto dx = ops::row_norms(ops::sub(x, ops::select_rows(book.tensor(), std::move(kx))));
  const auto dy = ops::row_norms(ops::sub(y, ops::select_rows(book.tensor(), std::move(ky))));
  const auto wx = ops::mul(dx, Tensor({b, 1}, r.coef_x));
  const auto wy = ops::mul(dy, Tensor({b, 1}, r.coef_y));
  out.loss = ops::scale(ops::sum(ops::add(wx, wy)), 0.5 / static_cast<double>(b));
  return out;
}

struct ClusterAssignment {
  std::vector<std::vector<std::size_t>> members;  // one list per intent, ids ascending
  std::vector<std::size_t> assignment;            // intent per product
  std::vector<double> distance;                   // distance to that intent
};

/// Nearest-intent partition of a row-major catalog (count x dim).
template <typename T>
inline ClusterAssignment assign_clusters(std::span<const T> rows, std::size_t dim, const IntentCodebook& book) {
  if (dim != book.dim()) throw ContractError("assign_clusters: catalog width does not match the codebook");
  if (rows.size() % dim != 0) throw DimensionError("assign_clusters: ragged catalog");
  ClusterAssignment out;
  out.members.resize(book.size());
  const std::size_t n = rows.size() / dim;
  for (std::size_t i = 0; i < n; ++i) {
    const auto sel = nearest(rows.subspan(i * dim, dim), book);
    out.members[sel.index].push_back(i);
    out.assignment.push_back(sel.index);
    out.distance.push_back(sel.distance);
  }
  return out;
}

/// Fraction of rows whose x and y select the same intent.
inline double match_rate(const Tensor& x, const Tensor& y, const IntentCodebook& book) {
  if (x.shape() != y.shape()) throw DimensionError("match_rate: x and y shapes differ");
  std::size_t matches = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (nearest(x.row_values(i), book).index == nearest(y.row_values(i), book).index) ++matches;
  }
  return static_cast<double>(matches) / static_cast<double>(x.rows());
}

struct CodebookTrainOptions {
  std::size_t epochs = 15;
  std::size_t batch_size = 8;
  double lr = 1e-2;
  double weight_decay = 1e-4;
  bool literal = false;
  std::uint64_t seed = 0;
};

struct CodebookEpoch {
  std::size_t epoch = 0;
  double rcl = 0.0;
  double match_rate = 0.0;      // training pairs, during the epoch
  double val_match_rate = 0.0;  // held-out pairs, after the epoch
  double lr = 0.0;
};

/// Competitive learning of the codebook alone over fixed, paired embeddings
/// (rows of x and y). The plateau schedule follows the held-out RCL loss.
inline std::vector<CodebookEpoch> train_codebook(IntentCodebook& book, const Tensor& x, const Tensor& y,
                                                 const Tensor& x_val, const Tensor& y_val,
                                                 const CodebookTrainOptions& options) {
  if (x.shape() != y.shape() || x_val.shape() != y_val.shape()) {
    throw DimensionError("train_codebook: paired inputs must share a shape");
  }
  if (options.batch_size < 1) throw ConfigError("train_codebook: batch_size must be positive");
  const Tensor xc = x.detach(), yc = y.detach();
  AdamW optimizer({book.tensor()}, {.lr = options.lr, .weight_decay = options.weight_decay});
  PlateauScheduler scheduler;
  Rng rng(derive_seed(options.seed, 30));
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  std::vector<CodebookEpoch> history;
  auto& tape = Tape::active();
  tape.reset();
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle(order, rng);
    CodebookEpoch e;
    e.epoch = epoch;
    e.lr = optimizer.lr();
    std::size_t matches = 0, batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const auto count = std::min(options.batch_size, order.size() - start);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + count));
      optimizer.zero_grad();
      auto out = rcl_loss(ops::select_rows(xc, idx), ops::select_rows(yc, idx), book, options.literal);
      if (!std::isfinite(out.loss.item())) {
        tape.reset();
        throw NumericError("train_codebook: non-finite RCL loss at epoch " + std::to_string(epoch));
      }
      if (out.loss.requires_grad()) backward(out.loss);
      tape.reset();
      optimizer.step();
      book.renormalize();
      ++book.steps;
      e.rcl += out.loss.item();
      matches += out.routing.matches;
      ++batches;
    }
    e.rcl /= static_cast<double>(batches);
    e.match_rate = static_cast<double>(matches) / static_cast<double>(x.rows());
    double val_loss = e.rcl;
    {
      NoGradGuard no_grad;
      if (x_val.rows() > 0) {
        val_loss = rcl_loss(x_val, y_val, book, options.literal).loss.item();
        e.val_match_rate = match_rate(x_val, y_val, book);
      }
    }
    optimizer.set_lr(scheduler.observe(val_loss, optimizer.lr()));
    history.push_back(e);
  }
  return history;
}

}  // namespace pincer
