#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gnnxar/error.hpp"
#include "gnnxar/tensor.hpp"

namespace gnnxar {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

// One bias-corrected Adam update; `step` is the 1-based step index.
inline void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& m,
                        std::size_t step, const AdamConfig& cfg) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m.first[i] = cfg.beta1 * m.first[i] + (1.0 - cfg.beta1) * grad[i];
    m.second[i] = cfg.beta2 * m.second[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m.first[i] / c1;
    const double vhat = m.second[i] / c2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    for (auto& p : params_) {
      p.tensor.set_requires_grad(true);
      p.tensor.mutable_grad();
      moments_.push_back({std::vector<double>(p.tensor.size(), 0.0),
                          std::vector<double>(p.tensor.size(), 0.0)});
    }
  }

  // Validates every gradient before touching any parameter, so a rejected
  // step leaves parameters and moments untouched.
  void step() {
    for (const auto& p : params_) {
      for (double g : p.tensor.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
    ++step_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& t = params_[k].tensor;
      adam_update(t.mutable_values(), t.grad(), moments_[k], step_, cfg_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t step_count() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  const std::vector<AdamMoments>& moments() const noexcept { return moments_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<AdamMoments> moments_;
  AdamConfig cfg_;
  std::size_t step_ = 0;
};

}  // namespace gnnxar
