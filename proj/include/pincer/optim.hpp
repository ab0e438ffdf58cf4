#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "pincer/tensor.hpp"

namespace pincer {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay. Holds handles to the parameters it
/// updates; moment buffers are allocated on construction.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options)
      : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      first_.emplace_back(p.numel(), 0.0);
      second_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto values = params_[i].values_mut();
      auto grad = params_[i].grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double g = grad[j];
        m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g;
        v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g * g;
        values[j] -= options_.lr * options_.weight_decay * values[j];
        values[j] -= options_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
      }
    }
  }

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  long steps() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  AdamWOptions options_;
  std::vector<std::vector<double>> first_, second_;
  long steps_ = 0;
};

/// Multiplies the learning rate by `factor` once the monitored value has
/// failed to improve by more than `threshold` for `patience` epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.5, int patience = 2, double threshold = 1e-4)
      : factor_(factor), patience_(patience), threshold_(threshold) {}

  /// Returns the learning rate to use for the next epoch.
  double observe(double value, double lr) {
    if (value < best_ - threshold_) {
      best_ = value;
      bad_epochs_ = 0;
      return lr;
    }
    if (++bad_epochs_ >= patience_) {
      bad_epochs_ = 0;
      return lr * factor_;
    }
    return lr;
  }

 private:
  double factor_;
  int patience_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

}  // namespace pincer
