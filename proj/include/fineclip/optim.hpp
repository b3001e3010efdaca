#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "fineclip/nn.hpp"

namespace fineclip {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay; names in `no_decay` skip the decay term.
class AdamW {
 public:
  AdamW(ParamList params, const AdamWConfig& cfg, std::set<std::string> no_decay = {})
      : params_(std::move(params)), cfg_(cfg), no_decay_(std::move(no_decay)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  std::size_t steps() const { return t_; }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_)), c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i].tensor;
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto w = p.mutable_data();
      const double decay = no_decay_.count(params_[i].name) ? 0.0 : cfg_.lr * cfg_.weight_decay;
      for (std::size_t j = 0; j < w.size(); ++j) {
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        w[j] -= decay * w[j];
        w[j] -= cfg_.lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  ParamList params_;
  AdamWConfig cfg_;
  std::set<std::string> no_decay_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace fineclip
