// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/protonorm.hpp"

#include <cmath>
#include <string>

#include "protonorm/errors.hpp"
#include "protonorm/ops.hpp"

namespace protonorm {

std::string_view to_string(NormMode mode) {
  switch (mode) {
    case NormMode::kProtoGated:
      return "proto-gated";
    case NormMode::kDatasetIndexed:
      return "dataset-indexed";
    case NormMode::kPlain:
      return "plain-ln";
  }
  return "unknown";
}

NormMode parse_norm_mode(std::string_view text) {
  if (text == "proto" || text == "proto-gated") return NormMode::kProtoGated;
  if (text == "dataset" || text == "dataset-indexed") return NormMode::kDatasetIndexed;
  if (text == "plain" || text == "plain-ln") return NormMode::kPlain;
  throw ConfigError("unknown norm mode '" + std::string(text) + "' (expected proto, dataset or plain)");
}

LayerNormParams LayerNormParams::identity(std::size_t dim, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("layer norm epsilon must be positive");
  return LayerNormParams{Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true), epsilon};
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& params) {
  const std::size_t d = params.dim();
  if (x.rank() == 0 || x.dim(-1) != d || params.beta.numel() != d) {
    throw ShapeError("layer_norm expects last dimension " + std::to_string(d) + ", got " + to_string(x.shape()));
  }
  const Tensor mu = ops::mean(x, -1, true);
  const Tensor var = ops::variance(x, -1, true);
  const Tensor centered = x - mu;
  const Tensor denom = ops::sqrt(var + params.epsilon);
  return centered / denom * params.gamma + params.beta;
}

std::size_t gate(std::span<const double> features, const PrototypeBank& bank) {
  const std::size_t n = bank.size();
  const std::size_t d = bank.dim();
  if (n == 0) throw ContractError("gate() on an empty prototype bank");
  if (features.size() != d) {
    throw ShapeError("gating features have length " + std::to_string(features.size()) + ", bank dimension is " +
                     std::to_string(d));
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw InputError("non-finite gating feature");
  }
  const auto p = bank.prototypes.data();
  std::size_t best = 0;
  double best_dist = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dist = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = features[k] - p[i * d + k];
      dist += diff * diff;
    }
    if (i == 0 || dist < best_dist) {
      best = i;
      best_dist = dist;
    }
  }
  return best;
}

EmaOutcome ema_update(PrototypeBank& bank, std::span<const AssignedMean> assigned) {
  EmaOutcome outcome;
  if (bank.frozen) {
    outcome.skipped_frozen = true;
    return outcome;
  }
  const std::size_t d = bank.dim();
  const double alpha = bank.ema_alpha;
  auto p = bank.prototypes.mutable_data();
  for (const AssignedMean& a : assigned) {
    if (a.prototype >= bank.size()) throw ContractError("ema_update: prototype index out of range");
    if (a.mean.size() != d) throw ShapeError("ema_update: feature mean has wrong length");
    for (double v : a.mean) {
      if (!std::isfinite(v)) throw InputError("ema_update: non-finite feature mean");
    }
    double* row = p.data() + a.prototype * d;
    for (std::size_t k = 0; k < d; ++k) row[k] = (1.0 - alpha) * row[k] + alpha * a.mean[k];
    ++outcome.updated;
  }
  return outcome;
}

Tensor orthogonality_loss(const Tensor& prototypes) {
  if (prototypes.rank() != 2) throw ShapeError("orthogonality_loss expects an [n, d] matrix");
  const std::size_t n = prototypes.dim(0);
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  const Tensor gram = ops::matmul(prototypes, ops::transpose(prototypes, 0, 1));
  const Tensor residual = gram - Tensor({n, n}, std::move(eye));
  return ops::sum(residual * residual);
}

Tensor init_orthogonal(std::size_t n, std::size_t d, Rng& rng) {
  if (n == 0) throw ConfigError("prototype count must be at least 1");
  if (n > d) {
    throw ConfigError("cannot initialize " + std::to_string(n) + " orthonormal prototypes in dimension " +
                      std::to_string(d) + "; raise d_model or lower n_prototypes");
  }
  std::vector<double> p(n * d);
  for (double& v : p) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = p.data() + i * d;
    // Two projection passes keep the rows orthogonal to machine precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        const double* prev = p.data() + j * d;
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += row[k] * prev[k];
        for (std::size_t k = 0; k < d; ++k) row[k] -= dot * prev[k];
      }
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += row[k] * row[k];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw InputError("degenerate draw in init_orthogonal");
    for (std::size_t k = 0; k < d; ++k) row[k] /= norm;
  }
  return Tensor({n, d}, std::move(p), true);
}

// ---------------------------------------------------------------------------

ProtoNormLayer::ProtoNormLayer(const ProtoNormOptions& options, Rng& rng)
    : mode_(options.mode), dim_(options.dim) {
  if (options.dim == 0) throw ConfigError("ProtoNorm dimension must be positive");
  if (options.n_prototypes == 0) throw ConfigError("n_prototypes must be at least 1");
  if (!(options.ema_alpha > 0.0 && options.ema_alpha <= 1.0)) throw ConfigError("ema_alpha must be in (0, 1]");
  const std::size_t n_norms = mode_ == NormMode::kPlain ? 1 : options.n_prototypes;
  for (std::size_t i = 0; i < n_norms; ++i) norms_.push_back(LayerNormParams::identity(options.dim, options.epsilon));
  // The bank is drawn in every mode so the random stream, and therefore every
  // other initialization, does not depend on the normalization mode.
  bank_.prototypes = init_orthogonal(options.n_prototypes, options.dim, rng);
  bank_.ema_alpha = options.ema_alpha;
  bank_.assignment_counts.assign(options.n_prototypes, 0);
}

Tensor ProtoNormLayer::forward(const Tensor& x, bool train, std::span<const std::size_t> dataset_ids) {
  if (x.rank() != 3 || x.dim(2) != dim_) {
    throw ShapeError("ProtoNorm expects [B, T, " + std::to_string(dim_) + "], got " + to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t tokens = x.dim(1);
  if (mode_ == NormMode::kDatasetIndexed) {
    if (dataset_ids.size() != batch) {
      throw ContractError("dataset-indexed ProtoNorm needs one dataset id per sample");
    }
    for (std::size_t id : dataset_ids) {
      if (id >= norms_.size()) {
        throw ContractError("dataset id " + std::to_string(id) + " has no LayerNorm (n = " +
                            std::to_string(norms_.size()) + ")");
      }
    }
  }

  // Gating features: token mean of each sample, outside the graph.
  last_features_.assign(batch * dim_, 0.0);
  const auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < tokens; ++t) {
      const double* tok = xd.data() + (b * tokens + t) * dim_;
      for (std::size_t k = 0; k < dim_; ++k) last_features_[b * dim_ + k] += tok[k];
    }
    for (std::size_t k = 0; k < dim_; ++k) last_features_[b * dim_ + k] /= static_cast<double>(tokens);
  }

  last_assignments_.assign(batch, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::span<const double> feat(last_features_.data() + b * dim_, dim_);
    switch (mode_) {
      case NormMode::kProtoGated:
        last_assignments_[b] = gate(feat, bank_);
        break;
      case NormMode::kDatasetIndexed:
        last_assignments_[b] = dataset_ids[b];
        break;
      case NormMode::kPlain:
        last_assignments_[b] = 0;
        break;
    }
  }
  if (train && mode_ != NormMode::kPlain) {
    for (std::size_t idx : last_assignments_) ++bank_.assignment_counts[idx];
  }

  if (train && mode_ == NormMode::kProtoGated && !bank_.frozen) {
    if (pending_sums_.empty()) {
      pending_sums_.assign(bank_.size(), std::vector<double>(dim_, 0.0));
      pending_counts_.assign(bank_.size(), 0);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      auto& acc = pending_sums_[last_assignments_[b]];
      for (std::size_t k = 0; k < dim_; ++k) acc[k] += last_features_[b * dim_ + k];
      ++pending_counts_[last_assignments_[b]];
    }
  }

  // Every mode goes through the same per-sample path so that routing all
  // samples to one LayerNorm is arithmetically identical to plain mode.
  std::vector<Tensor> outputs;
  outputs.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    outputs.push_back(layer_norm(ops::slice(x, 0, b, b + 1), norms_[last_assignments_[b]]));
  }
  return batch == 1 ? outputs.front() : ops::concat(outputs, 0);
}

EmaOutcome ProtoNormLayer::commit_ema() {
  if (pending_sums_.empty()) {
    EmaOutcome outcome;
    outcome.skipped_frozen = bank_.frozen;
    return outcome;
  }
  std::vector<AssignedMean> assigned;
  for (std::size_t i = 0; i < pending_sums_.size(); ++i) {
    if (pending_counts_[i] == 0) continue;
    AssignedMean a{i, pending_sums_[i]};
    for (double& v : a.mean) v /= static_cast<double>(pending_counts_[i]);
    assigned.push_back(std::move(a));
  }
  discard_pending();
  return ema_update(bank_, assigned);
}

void ProtoNormLayer::discard_pending() {
  pending_sums_.clear();
  pending_counts_.clear();
}

Tensor ProtoNormLayer::orthogonality_loss() const { return protonorm::orthogonality_loss(bank_.prototypes); }

void ProtoNormLayer::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  const std::size_t used = mode_ == NormMode::kPlain ? 1 : norms_.size();
  for (std::size_t i = 0; i < used; ++i) {
    out.push_back({prefix + ".norm" + std::to_string(i) + ".gamma", norms_[i].gamma, true});
    out.push_back({prefix + ".norm" + std::to_string(i) + ".beta", norms_[i].beta, true});
  }
  if (mode_ == NormMode::kProtoGated) {
    out.push_back({prefix + ".prototypes", bank_.prototypes, !bank_.frozen});
  }
}

}  // namespace protonorm
