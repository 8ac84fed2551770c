// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/ssl.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "protonorm/errors.hpp"
#include "protonorm/ops.hpp"

namespace protonorm {

void AugmentConfig::validate() const {
  if (!(max_shift_fraction >= 0.0 && max_shift_fraction <= 0.5)) {
    throw ConfigError("augment.max_shift_fraction must be in [0, 0.5]");
  }
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) throw ConfigError("augment.scale_range must satisfy 0 < lo <= hi");
  if (!(jitter_std >= 0.0)) throw ConfigError("augment.jitter_std must be non-negative");
}

void NtXentConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("ntxent.temperature must be positive");
  if (!(lambda_orth >= 0.0)) throw ConfigError("ntxent.lambda_orth must be non-negative");
}

Tensor circular_shift(const Tensor& series, std::int64_t shift) {
  if (series.rank() != 2) throw ShapeError("circular_shift expects [C, L], got " + to_string(series.shape()));
  const std::size_t channels = series.dim(0);
  const std::size_t len = series.dim(1);
  const auto L = static_cast<std::int64_t>(len);
  const std::int64_t s = ((shift % L) + L) % L;
  const auto src = series.data();
  std::vector<double> out(series.numel());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::int64_t t = 0; t < L; ++t) {
      const std::int64_t from = (t - s + L) % L;
      out[c * len + static_cast<std::size_t>(t)] = src[c * len + static_cast<std::size_t>(from)];
    }
  return Tensor(series.shape(), std::move(out));
}

std::pair<Tensor, Tensor> augment_pair(const Tensor& series, const AugmentConfig& cfg, Rng& rng) {
  if (series.rank() != 2) throw ShapeError("augment_pair expects [C, L], got " + to_string(series.shape()));
  for (double v : series.data()) {
    if (!std::isfinite(v)) throw InputError("augment_pair: non-finite input");
  }
  const auto len = static_cast<double>(series.dim(1));
  const auto max_shift = static_cast<std::int64_t>(std::floor(cfg.max_shift_fraction * len));
  const std::int64_t shift = rng.uniform_int(-max_shift, max_shift);
  Tensor shifted = circular_shift(series, shift);

  const double factor = cfg.scale_lo == cfg.scale_hi ? cfg.scale_lo : rng.uniform(cfg.scale_lo, cfg.scale_hi);
  std::vector<double> scaled(series.data().begin(), series.data().end());
  for (double& v : scaled) {
    v *= factor;
    if (cfg.jitter_std > 0.0) v += rng.normal(0.0, cfg.jitter_std);
  }
  return {std::move(shifted), Tensor(series.shape(), std::move(scaled))};
}

Tensor augment_batch(const Tensor& batch, const AugmentConfig& cfg, Rng& rng) {
  if (batch.rank() != 3) throw ShapeError("augment_batch expects [B, C, L], got " + to_string(batch.shape()));
  const std::size_t B = batch.dim(0), C = batch.dim(1), L = batch.dim(2);
  const std::size_t per = C * L;
  std::vector<double> out(2 * B * per);
  const auto src = batch.data();
  for (std::size_t b = 0; b < B; ++b) {
    Tensor sample({C, L}, std::vector<double>(src.begin() + b * per, src.begin() + (b + 1) * per));
    auto [v1, v2] = augment_pair(sample, cfg, rng);
    std::copy(v1.data().begin(), v1.data().end(), out.begin() + b * per);
    std::copy(v2.data().begin(), v2.data().end(), out.begin() + (B + b) * per);
  }
  return Tensor({2 * B, C, L}, std::move(out));
}

Tensor nt_xent(const Tensor& projections, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("NT-Xent temperature must be positive");
  if (projections.rank() != 2 || projections.dim(0) < 2 || projections.dim(0) % 2 != 0) {
    throw ShapeError("nt_xent expects [2N, dim] with N >= 1, got " + to_string(projections.shape()));
  }
  const std::size_t rows = projections.dim(0);
  const std::size_t dim = projections.dim(1);
  const std::size_t half = rows / 2;
  const auto zd = projections.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t k = 0; k < dim; ++k) sq += zd[r * dim + k] * zd[r * dim + k];
    if (sq == 0.0) throw InputError("nt_xent: projection row " + std::to_string(r) + " has zero norm");
  }

  const Tensor norms = ops::sqrt(ops::sum(projections * projections, -1, true));
  const Tensor unit = projections / norms;
  const Tensor logits = ops::scale(ops::matmul(unit, ops::transpose(unit, 0, 1)), 1.0 / temperature);

  // Self-similarity is excluded from every denominator.
  std::vector<double> mask(rows * rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) mask[i * rows + i] = -std::numeric_limits<double>::infinity();
  const Tensor log_probs = ops::log_softmax(logits + Tensor({rows, rows}, std::move(mask)), -1);

  std::vector<std::size_t> positives(rows);
  for (std::size_t i = 0; i < rows; ++i) positives[i] = i < half ? i + half : i - half;
  return ops::neg(ops::mean(ops::gather_last(log_probs, positives)));
}

Tensor total_loss(const Tensor& nt, std::span<const Tensor> orth_per_layer, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda_orth must be non-negative");
  if (orth_per_layer.empty()) return nt;
  Tensor orth = orth_per_layer[0];
  for (std::size_t i = 1; i < orth_per_layer.size(); ++i) orth = orth + orth_per_layer[i];
  return nt + ops::scale(orth, lambda);
}

}  // namespace protonorm
