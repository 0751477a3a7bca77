#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ehdiscrim/tensor.hpp"

namespace ehd {

struct OptimConfig {
  double peak_lr = 2e-4;
  size_t warmup_steps = 10000;
  size_t max_steps = 1650000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;

  void validate() const {
    if (warmup_steps > max_steps)
      throw std::invalid_argument("OptimConfig: warmup exceeds max steps");
    if (peak_lr <= 0 || eps <= 0)
      throw std::invalid_argument("OptimConfig: non-positive lr or eps");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw std::invalid_argument("OptimConfig: betas must lie in [0,1)");
  }
};

// Linear ramp 0 -> peak over the warmup, then linear decay peak -> 0 at
// max_steps.
inline double lr_at(size_t step, const OptimConfig& cfg) {
  cfg.validate();
  if (step > cfg.max_steps)
    throw std::out_of_range("lr_at: step " + std::to_string(step) +
                            " beyond max steps " + std::to_string(cfg.max_steps));
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  if (cfg.max_steps == cfg.warmup_steps) return cfg.peak_lr;
  return cfg.peak_lr * static_cast<double>(cfg.max_steps - step) /
         static_cast<double>(cfg.max_steps - cfg.warmup_steps);
}

// Bias-corrected Adam with decoupled weight decay. Decay only touches
// parameters flagged for it (weight matrices and embeddings; never biases or
// layer-norm terms). Arithmetic runs in double and is stored back at S, so a
// reloaded state continues bit-exactly.
template <typename S>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<S>*> params)
      : params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.push_back(Tensor<S>::zeros(p->value.shape));
      v_.push_back(Tensor<S>::zeros(p->value.shape));
    }
  }

  void step(double lr, const OptimConfig& cfg) {
    for (auto* p : params_)
      if (p->trainable && !p->grad.all_finite())
        throw std::runtime_error("adam_step: non-finite gradient in " + p->name);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Parameter<S>& p = *params_[i];
      if (!p.trainable) continue;
      const double wd = p.weight_decay ? cfg.weight_decay : 0.0;
      for (size_t k = 0; k < p.value.numel(); ++k) {
        const double g = static_cast<double>(p.grad.data[k]);
        const double m = cfg.beta1 * static_cast<double>(m_[i].data[k]) +
                         (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * static_cast<double>(v_[i].data[k]) +
                         (1.0 - cfg.beta2) * g * g;
        m_[i].data[k] = static_cast<S>(m);
        v_[i].data[k] = static_cast<S>(v);
        const double mhat = static_cast<double>(m_[i].data[k]) / bc1;
        const double vhat = static_cast<double>(v_[i].data[k]) / bc2;
        const double w = static_cast<double>(p.value.data[k]);
        p.value.data[k] =
            static_cast<S>(w - lr * (mhat / (std::sqrt(vhat) + cfg.eps) + wd * w));
      }
    }
  }

  size_t steps_taken() const { return t_; }
  void set_steps_taken(size_t t) { t_ = t; }
  const std::vector<Parameter<S>*>& params() const { return params_; }
  Tensor<S>& first_moment(size_t i) { return m_[i]; }
  Tensor<S>& second_moment(size_t i) { return v_[i]; }

 private:
  std::vector<Parameter<S>*> params_;
  std::vector<Tensor<S>> m_, v_;
  size_t t_ = 0;
};

}  // namespace ehd
