#pragma once

// Differentiable operations over rank-1/rank-2 tensors. Rank-1 inputs are
// treated as a single row; outputs of shape-changing ops are rank 2.
// Accumulations are carried out in double precision.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pincer/random.hpp"
#include "pincer/tensor.hpp"

namespace pincer::ops {

namespace detail {

using pincer::detail::finish;
using pincer::detail::Node;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.numel() != b.numel() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline Tensor like(const Tensor& a) { return Tensor(a.shape()); }

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out({m, n});
  auto o = out.values_mut();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &o[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return detail::finish(std::move(out), {&a, &b}, [an = a.node(), bn = b.node(), m, k, n](const detail::Node& out) {
    const auto& g = out.grad;
    if (an->requires_grad) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bn->value[p * n + j];
          an->grad[i * k + p] += acc;
        }
      }
    }
    if (bn->requires_grad) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = an->value[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) bn->grad[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[j * m + i] = a.values()[i * n + j];
  return detail::finish(std::move(out), {&a}, [an = a.node(), m, n](const detail::Node& out) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += out.grad[j * m + i];
  });
}

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = detail::like(a);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] + b.values()[i];
  return detail::finish(std::move(out), {&a, &b}, [an = a.node(), bn = b.node()](const detail::Node& out) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] += out.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = detail::like(a);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] - b.values()[i];
  return detail::finish(std::move(out), {&a, &b}, [an = a.node(), bn = b.node()](const detail::Node& out) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] -= out.grad[i];
  });
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = detail::like(a);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] * b.values()[i];
  return detail::finish(std::move(out), {&a, &b}, [an = a.node(), bn = b.node()](const detail::Node& out) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] * bn->value[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] += out.grad[i] * an->value[i];
  });
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = detail::like(a);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * a.values()[i];
  return detail::finish(std::move(out), {&a}, [an = a.node(), c](const detail::Node& out) {
    for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += c * out.grad[i];
  });
}

/// a[m x n] + bias[n] broadcast over rows.
inline Tensor add_row(const Tensor& a, const Tensor& bias) {
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(a.shape()));
  }
  Tensor out({m, n});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = a.values()[i * n + j] + bias.values()[j];
  return detail::finish(std::move(out), {&a, &bias}, [an = a.node(), bn = bias.node(), m, n](const detail::Node& out) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < m * n; ++i) an->grad[i] += out.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) bn->grad[j] += out.grad[i * n + j];
  });
}

inline constexpr double kGeluCoeff = 0.044715;

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline double gelu_scalar(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + kGeluCoeff * x * x * x)));
}

inline Tensor gelu(const Tensor& a) {
  Tensor out = detail::like(a);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = gelu_scalar(a.values()[i]);
  return detail::finish(std::move(out), {&a}, [an = a.node()](const detail::Node& out) {
    const double c = std::sqrt(2.0 / std::numbers::pi);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      const double x = an->value[i];
      const double u = c * (x + kGeluCoeff * x * x * x);
      const double t = std::tanh(u);
      const double du = c * (1.0 + 3.0 * kGeluCoeff * x * x);
      an->grad[i] += out.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
    }
  });
}

inline Tensor exp(const Tensor& a) {
  Tensor out = detail::like(a);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(a.values()[i]);
  return detail::finish(std::move(out), {&a}, [an = a.node()](const detail::Node& out) {
    for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] * out.value[i];
  });
}

inline Tensor log(const Tensor& a) {
  Tensor out = detail::like(a);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(a.values()[i]);
  return detail::finish(std::move(out), {&a}, [an = a.node()](const detail::Node& out) {
    for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] / an->value[i];
  });
}

/// log(sigmoid(x)) = -softplus(-x), stable for large |x|.
inline Tensor log_sigmoid(const Tensor& a) {
  Tensor out = detail::like(a);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double x = a.values()[i];
    o[i] = std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
  }
  return detail::finish(std::move(out), {&a}, [an = a.node()](const detail::Node& out) {
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      const double x = an->value[i];
      // d/dx log sigmoid(x) = sigmoid(-x)
      const double s = x >= 0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
      an->grad[i] += out.grad[i] * s;
    }
  });
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate). Identity when
/// `train` is false or rate is zero.
inline Tensor dropout(const Tensor& a, double rate, Rng& rng, bool train) {
  if (!train || rate <= 0.0) return a;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  std::vector<double> mask(a.numel());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = uniform01(rng) < rate ? 0.0 : keep_scale;
  Tensor out = detail::like(a);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] * mask[i];
  return detail::finish(std::move(out), {&a}, [an = a.node(), mask = std::move(mask)](const detail::Node& out) {
    for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return detail::finish(Tensor::scalar(acc), {&a}, [an = a.node()](const detail::Node& out) {
    for (auto& g : an->grad) g += out.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

/// Row-wise dot products of equally shaped a and b -> [m x 1].
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "row_dot");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, 1});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += a.values()[i * n + j] * b.values()[i * n + j];
    o[i] = acc;
  }
  return detail::finish(std::move(out), {&a, &b}, [an = a.node(), bn = b.node(), m, n](const detail::Node& out) {
    for (std::size_t i = 0; i < m; ++i) {
      const double g = out.grad[i];
      if (an->requires_grad)
        for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g * bn->value[i * n + j];
      if (bn->requires_grad)
        for (std::size_t j = 0; j < n; ++j) bn->grad[i * n + j] += g * an->value[i * n + j];
    }
  });
}

/// Euclidean norm of each row -> [m x 1]. The subgradient at a zero row is 0.
inline Tensor row_norms(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, 1});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += a.values()[i * n + j] * a.values()[i * n + j];
    o[i] = std::sqrt(acc);
  }
  return detail::finish(std::move(out), {&a}, [an = a.node(), m, n](const detail::Node& out) {
    for (std::size_t i = 0; i < m; ++i) {
      const double norm = out.value[i];
      if (norm == 0.0) continue;
      const double g = out.grad[i] / norm;
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g * an->value[i * n + j];
    }
  });
}

/// Scales each row to unit L2 norm. Rows with norm below `eps` are left
/// unscaled by clamping the divisor.
inline Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, n});
  std::vector<double> norms(m);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += a.values()[i * n + j] * a.values()[i * n + j];
    norms[i] = std::max(std::sqrt(acc), eps);
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = a.values()[i * n + j] / norms[i];
  }
  return detail::finish(std::move(out), {&a}, [an = a.node(), norms = std::move(norms), m, n](const detail::Node& out) {
    for (std::size_t i = 0; i < m; ++i) {
      double proj = 0.0;
      for (std::size_t j = 0; j < n; ++j) proj += out.grad[i * n + j] * out.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        an->grad[i * n + j] += (out.grad[i * n + j] - proj * out.value[i * n + j]) / norms[i];
      }
    }
  });
}

/// Mean over rows: [m x n] -> [1 x n].
inline Tensor mean_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({1, n});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[j] += a.values()[i * n + j];
  for (auto& v : o) v /= static_cast<double>(m);
  return detail::finish(std::move(out), {&a}, [an = a.node(), m, n](const detail::Node& out) {
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += out.grad[j] * inv;
  });
}

// ---------------------------------------------------------------- normalization

/// Per-row layer normalization over the last dimension (biased variance).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(n) + " entries");
  }
  Tensor out({m, n});
  std::vector<double> xhat(m * n), inv_std(m);
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x.values()[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double dv = x.values()[i * n + j] - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x.values()[i * n + j] - mu) * inv_std[i];
      o[i * n + j] = xhat[i * n + j] * gain.values()[j] + bias.values()[j];
    }
  }
  return detail::finish(
      std::move(out), {&x, &gain, &bias},
      [xn = x.node(), gn = gain.node(), bn = bias.node(), xhat = std::move(xhat), inv_std = std::move(inv_std), m,
       n](const detail::Node& out) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* g = &out.grad[i * n];
          const double* xh = &xhat[i * n];
          if (gn->requires_grad)
            for (std::size_t j = 0; j < n; ++j) gn->grad[j] += g[j] * xh[j];
          if (bn->requires_grad)
            for (std::size_t j = 0; j < n; ++j) bn->grad[j] += g[j];
          if (xn->requires_grad) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dy = g[j] * gn->value[j];
              sum_dy += dy;
              sum_dy_xh += dy * xh[j];
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double dy = g[j] * gn->value[j];
              xn->grad[i * n + j] += inv_std[i] * (dy - inv_n * sum_dy - xh[j] * inv_n * sum_dy_xh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------- softmax family

/// Row-wise log-softmax, stabilized by subtracting the row max.
inline Tensor log_softmax(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, n});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = &a.values()[i * n];
    const double mx = *std::max_element(row, row + n);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(row[j] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = row[j] - lse;
  }
  return detail::finish(std::move(out), {&a}, [an = a.node(), m, n](const detail::Node& out) {
    for (std::size_t i = 0; i < m; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += out.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        an->grad[i * n + j] += out.grad[i * n + j] - std::exp(out.value[i * n + j]) * gsum;
      }
    }
  });
}

/// Row-wise softmax. With `causal`, entry (i, j) for j > i is masked to 0,
/// so row i only distributes over columns 0..i.
inline Tensor softmax(const Tensor& a, bool causal = false) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, n});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t width = causal ? std::min(i + 1, n) : n;
    const double* row = &a.values()[i * n];
    const double mx = *std::max_element(row, row + width);
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      o[i * n + j] = std::exp(row[j] - mx);
      acc += o[i * n + j];
    }
    for (std::size_t j = 0; j < width; ++j) o[i * n + j] /= acc;
  }
  return detail::finish(std::move(out), {&a}, [an = a.node(), m, n](const detail::Node& out) {
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += out.grad[i * n + j] * out.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        an->grad[i * n + j] += out.value[i * n + j] * (out.grad[i * n + j] - dot);
      }
    }
  });
}

// ---------------------------------------------------------------- indexing / layout

/// Column `cols[i]` of each row i -> [m x 1].
inline Tensor pick_columns(const Tensor& a, std::vector<std::size_t> cols) {
  const std::size_t m = a.rows(), n = a.cols();
  if (cols.size() != m) throw DimensionError("pick_columns: need one column index per row");
  Tensor out({m, 1});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] >= n) throw DimensionError("pick_columns: column index out of range");
    o[i] = a.values()[i * n + cols[i]];
  }
  return detail::finish(std::move(out), {&a}, [an = a.node(), cols = std::move(cols), n](const detail::Node& out) {
    for (std::size_t i = 0; i < cols.size(); ++i) an->grad[i * n + cols[i]] += out.grad[i];
  });
}

/// Gathers rows (repetition allowed); gradients scatter-add back.
inline Tensor select_rows(const Tensor& a, std::vector<std::size_t> rows) {
  const std::size_t n = a.cols();
  if (rows.empty()) throw DimensionError("select_rows: empty row list");
  Tensor out({rows.size(), n});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows()) throw DimensionError("select_rows: row index out of range");
    std::copy_n(&a.values()[rows[i] * n], n, &o[i * n]);
  }
  return detail::finish(std::move(out), {&a}, [an = a.node(), rows = std::move(rows), n](const detail::Node& out) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) an->grad[rows[i] * n + j] += out.grad[i * n + j];
  });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.rows()) throw DimensionError("slice_rows: bad range");
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return select_rows(a, std::move(rows));
}

/// Mean of table rows per segment -> [segments x n] (an embedding bag).
inline Tensor segment_mean(const Tensor& table, std::vector<std::vector<std::size_t>> segments) {
  const std::size_t n = table.cols();
  if (segments.empty()) throw DimensionError("segment_mean: no segments");
  Tensor out({segments.size(), n});
  auto o = out.values_mut();
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (segments[s].empty()) throw EmptyInputError("segment_mean: empty segment");
    for (std::size_t r : segments[s]) {
      if (r >= table.rows()) throw DimensionError("segment_mean: row index out of range");
      for (std::size_t j = 0; j < n; ++j) o[s * n + j] += table.values()[r * n + j];
    }
    const double inv = 1.0 / static_cast<double>(segments[s].size());
    for (std::size_t j = 0; j < n; ++j) o[s * n + j] *= inv;
  }
  return detail::finish(std::move(out), {&table}, [tn = table.node(), segments = std::move(segments), n](const detail::Node& out) {
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(segments[s].size());
      for (std::size_t r : segments[s])
        for (std::size_t j = 0; j < n; ++j) tn->grad[r * n + j] += out.grad[s * n + j] * inv;
    }
  });
}

/// Stacks tensors with a common column count on top of each other.
inline Tensor stack_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack_rows: nothing to stack");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("stack_rows: column count mismatch");
    m += p.rows();
  }
  Tensor out({m, n});
  auto o = out.values_mut();
  std::size_t offset = 0;
  std::vector<pincer::detail::Node*> nodes;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), o.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
    nodes.push_back(p.node());
  }
  return detail::finish(std::move(out), parts, [nodes = std::move(nodes)](const detail::Node& out) {
    std::size_t offset = 0;
    for (auto* node : nodes) {
      if (node->requires_grad)
        for (std::size_t i = 0; i < node->value.size(); ++i) node->grad[i] += out.grad[offset + i];
      offset += node->value.size();
    }
  });
}

/// [a | b] side by side; both need the same row count.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  if (b.rows() != m) throw DimensionError("concat_cols: row count mismatch");
  Tensor out({m, p + q});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(&a.values()[i * p], p, &o[i * (p + q)]);
    std::copy_n(&b.values()[i * q], q, &o[i * (p + q) + p]);
  }
  return detail::finish(std::move(out), {&a, &b}, [an = a.node(), bn = b.node(), m, p, q](const detail::Node& out) {
    for (std::size_t i = 0; i < m; ++i) {
      if (an->requires_grad)
        for (std::size_t j = 0; j < p; ++j) an->grad[i * p + j] += out.grad[i * (p + q) + j];
      if (bn->requires_grad)
        for (std::size_t j = 0; j < q; ++j) bn->grad[i * q + j] += out.grad[i * (p + q) + p + j];
    }
  });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t m = a.rows(), n = a.cols();
  if (begin >= end || end > n) throw DimensionError("slice_cols: bad range");
  const std::size_t w = end - begin;
  Tensor out({m, w});
  auto o = out.values_mut();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&a.values()[i * n + begin], w, &o[i * w]);
  return detail::finish(std::move(out), {&a}, [an = a.node(), m, n, begin, w](const detail::Node& out) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) an->grad[i * n + begin + j] += out.grad[i * w + j];
  });
}

/// Repeats a single row m times.
inline Tensor broadcast_rows(const Tensor& a, std::size_t m) {
  if (a.rows() != 1) throw DimensionError("broadcast_rows: input must be a single row");
  return select_rows(a, std::vector<std::size_t>(m, 0));
}

}  // namespace pincer::ops
