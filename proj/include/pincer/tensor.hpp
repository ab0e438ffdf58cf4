#pragma once

// Dense row-major tensors with a reverse-mode tape.
//
// Every differentiable op whose inputs require grad appends one record to the
// thread's active Tape. Records are appended after their inputs exist, so the
// tape is already in topological order and backward() is a single reverse
// sweep. A tape may be swept once; reset() clears it for the next step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pincer/errors.hpp"

namespace pincer {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  bool grad_touched = false;  // received gradient during the current sweep
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor.
  explicit Tensor(Shape shape) : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto s : shape) {
      if (s == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + shape_string(shape) + " cannot hold " +
                           std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    set_requires_grad(requires_grad);
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  /// 1 x n row vector.
  static Tensor row(std::span<const double> values, bool requires_grad = false) {
    return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()),
                  requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  /// Rank-1 tensors behave as a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : numel() / cols(); }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const double> values() const { return node_->value; }
  /// Direct write access; meant for parameter updates outside the graph.
  std::span<double> values_mut() { return node_->value; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  std::span<const double> row_values(std::size_t r) const {
    return std::span<const double>(node_->value).subspan(r * cols(), cols());
  }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) {
      node_->grad.assign(node_->value.size(), 0.0);
    } else {
      node_->grad.clear();
    }
  }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() { return node_->grad; }
  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    node_->grad_touched = false;
  }

  /// Copy of the values, cut off from any graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }
  /// Independent copy that keeps the requires_grad flag (grad reset to zero).
  Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

/// Disables recording for its lifetime; ops return constant tensors.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

class Tape {
 public:
  using Rule = std::function<void(const detail::Node& out)>;

  struct Record {
    std::shared_ptr<detail::Node> output;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    Rule rule;
  };

  static Tape& active() {
    thread_local Tape tape;
    return tape;
  }

  void push(Record record) { records_.push_back(std::move(record)); }

  /// Drops all records. Leaf gradients are left alone (see Tensor::zero_grad).
  void reset() {
    records_.clear();
    swept_ = false;
  }

  std::size_t size() const { return records_.size(); }
  bool swept() const { return swept_; }

  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward() needs a scalar loss, got " +
                          (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    }
    if (swept_) throw StateError("backward() called twice without Tape::reset()");
    if (!loss.requires_grad()) {
      throw ContractError("backward() on a loss that is not part of a recorded graph");
    }
    auto it = std::find_if(records_.rbegin(), records_.rend(),
                           [&](const Record& r) { return r.output.get() == loss.node(); });
    if (it == records_.rend()) {
      throw ContractError("backward() on a loss that was not recorded on the active tape");
    }
    for (auto& rec : records_) {
      std::fill(rec.output->grad.begin(), rec.output->grad.end(), 0.0);
      rec.output->grad_touched = false;
    }
    loss.node()->grad[0] = 1.0;
    loss.node()->grad_touched = true;
    for (; it != records_.rend(); ++it) {
      if (!it->output->grad_touched) continue;
      it->rule(*it->output);
      for (auto& in : it->inputs) {
        if (in->requires_grad) in->grad_touched = true;
      }
    }
    swept_ = true;
  }

 private:
  std::vector<Record> records_;
  bool swept_ = false;
};

inline void backward(const Tensor& loss) { Tape::active().backward(loss); }

namespace detail {

/// Attaches a gradient rule to `out` when any input requires grad.
inline Tensor finish(Tensor out, std::initializer_list<const Tensor*> inputs, Tape::Rule rule) {
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (!needs) return out;
  out.set_requires_grad(true);
  Tape::Record rec;
  rec.output = out.node_ptr();
  for (const Tensor* t : inputs) rec.inputs.push_back(t->node_ptr());
  rec.rule = std::move(rule);
  Tape::active().push(std::move(rec));
  return out;
}

inline Tensor finish(Tensor out, const std::vector<Tensor>& inputs, Tape::Rule rule) {
  if (!grad_enabled()) return out;
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  out.set_requires_grad(true);
  Tape::Record rec;
  rec.output = out.node_ptr();
  for (const auto& t : inputs) rec.inputs.push_back(t.node_ptr());
  rec.rule = std::move(rule);
  Tape::active().push(std::move(rec));
  return out;
}

}  // namespace detail
}  // namespace pincer
