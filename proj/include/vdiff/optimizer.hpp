#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdiff/autodiff.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff::train {

struct AdamWConfig {
  double lr = 8e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 4e-5;
};

/// Adaptive-moment optimizer with decoupled weight decay. Both the update and
/// the decay are scaled by the learning rate, so lr = 0 leaves parameters
/// bit-identical. Moments are keyed by parameter name and created on first
/// touch.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(ParamStore& params, const std::vector<std::string>& trainable, const Gradient& g) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (const auto& name : trainable) {
      const Value& p = params.at(name);
      const Tensor& grad = g.by_name.at(name);
      Tensor& theta = const_cast<Value&>(p).tensor_mut();
      auto& [m, v] = moments_.try_emplace(name, std::make_pair(Tensor::zeros(theta.shape()),
                                                               Tensor::zeros(theta.shape())))
                         .first->second;
      for (std::int64_t i = 0; i < theta.numel(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * theta[i]);
      }
    }
  }

  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }
  const std::map<std::string, std::pair<Tensor, Tensor>>& moments() const { return moments_; }
  std::map<std::string, std::pair<Tensor, Tensor>>& moments() { return moments_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
  std::int64_t step_count_ = 0;
};

}  // namespace vdiff::train
