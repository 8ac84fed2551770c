// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "protonorm/tensor.hpp"

namespace protonorm {

struct OptimConfig {
  double lr_peak = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 2000;
  std::size_t total_steps = 10000;
  double lr_floor = 0.0;

  void validate() const;
};

// Linear ramp 0 -> lr_peak over the warmup, then cosine decay to lr_floor at
// total_steps. Steps past total_steps stay at lr_floor.
double cosine_warmup_lr(std::size_t step, const OptimConfig& cfg);

struct Moments {
  std::vector<double> first;
  std::vector<double> second;
};

// AdamW with bias correction and decoupled weight decay:
//   p <- p - lr * wd * p
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  explicit AdamW(const OptimConfig& cfg);

  // Updates every trainable entry from its accumulated gradient (missing
  // gradient = zero). Throws DivergenceError naming the first parameter with
  // a non-finite gradient, before touching any parameter.
  void step(std::span<const NamedTensor> params, double lr);

  std::uint64_t steps_taken() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  void restore(std::uint64_t steps_taken, std::map<std::string, Moments> moments);

 private:
  OptimConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

void zero_grads(std::span<const NamedTensor> params);

}  // namespace protonorm
