// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Contrastive pretraining objective: two-view augmentation, NT-Xent over the
// 2N views of a batch, and the combined loss with the prototype
// orthogonality penalty.

#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "protonorm/rng.hpp"
#include "protonorm/tensor.hpp"

namespace protonorm {

struct AugmentConfig {
  double max_shift_fraction = 0.2;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double jitter_std = 0.05;

  void validate() const;
};

struct NtXentConfig {
  double temperature = 0.2;
  double lambda_orth = 0.001;

  void validate() const;
};

// y[c, t] = x[c, (t - shift) mod L] for a [C, L] series.
Tensor circular_shift(const Tensor& series, std::int64_t shift);

// View 1: circular time shift by a uniform integer in
// [-floor(f * L), floor(f * L)]. View 2: one uniform scale factor for the
// sample, then i.i.d. Gaussian jitter. Draws shift, scale, jitter in order.
std::pair<Tensor, Tensor> augment_pair(const Tensor& series, const AugmentConfig& cfg, Rng& rng);

// [B, C, L] -> [2B, C, L]: rows 0..B-1 are first views, rows B..2B-1 the
// matching second views, so row i pairs with row i + B.
Tensor augment_batch(const Tensor& batch, const AugmentConfig& cfg, Rng& rng);

// Mean over all 2N anchors of -log(exp(s_ip / tau) / sum_{j != i} exp(s_ij / tau))
// with cosine similarities s and positive p = i +- N. Throws InputError for a
// zero row and ConfigError for tau <= 0.
Tensor nt_xent(const Tensor& projections, double temperature);

// nt + lambda * sum(orth_per_layer).
Tensor total_loss(const Tensor& nt, std::span<const Tensor> orth_per_layer, double lambda);

}  // namespace protonorm
