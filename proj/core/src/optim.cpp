// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "protonorm/errors.hpp"

namespace protonorm {

void OptimConfig::validate() const {
  if (!(lr_peak > 0.0)) throw ConfigError("optim.lr_peak must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optim.betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optim.eps must be positive");
  if (warmup_steps > total_steps) throw ConfigError("optim.warmup_steps must not exceed optim.total_steps");
  if (!(lr_floor >= 0.0 && lr_floor <= lr_peak)) throw ConfigError("optim.lr_floor must be in [0, lr_peak]");
}

double cosine_warmup_lr(std::size_t step, const OptimConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.total_steps <= cfg.warmup_steps) return cfg.lr_peak;
  const double progress = std::min(
      1.0, static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps));
  return cfg.lr_floor + (cfg.lr_peak - cfg.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(const OptimConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

void AdamW::step(std::span<const NamedTensor> params, double lr) {
  for (const NamedTensor& p : params) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const NamedTensor& p : params) {
    if (!p.trainable) continue;
    Tensor param = p.tensor;
    auto data = param.mutable_data();
    Moments& mom = moments_[p.name];
    if (mom.first.size() != data.size()) {
      mom.first.assign(data.size(), 0.0);
      mom.second.assign(data.size(), 0.0);
    }
    const bool has_grad = param.has_grad();
    const auto grad = param.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      mom.first[i] = cfg_.beta1 * mom.first[i] + (1.0 - cfg_.beta1) * g;
      mom.second[i] = cfg_.beta2 * mom.second[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = mom.first[i] / bc1;
      const double v_hat = mom.second[i] / bc2;
      data[i] -= lr * cfg_.weight_decay * data[i];
      data[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

void AdamW::restore(std::uint64_t steps_taken, std::map<std::string, Moments> moments) {
  t_ = steps_taken;
  moments_ = std::move(moments);
}

void zero_grads(std::span<const NamedTensor> params) {
  for (const NamedTensor& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

}  // namespace protonorm
