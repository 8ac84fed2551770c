// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prototype-gated layer normalization.
//
// A ProtoNormLayer keeps n LayerNorm parameter pairs and n prototype vectors.
// Each sample is routed, as a whole, to the LayerNorm whose prototype is
// nearest (squared Euclidean) to the sample's token-averaged features. The
// routing is a hard decision; prototypes move only through an exponential
// moving average toward their assigned features and through the gradient of
// the orthogonality penalty.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protonorm/rng.hpp"
#include "protonorm/tensor.hpp"

namespace protonorm {

enum class NormMode {
  kProtoGated,
  kDatasetIndexed,  // each sample uses the LayerNorm of its dataset of origin
  kPlain,           // one LayerNorm for every input
};

std::string_view to_string(NormMode mode);
// Accepts "proto", "proto-gated", "dataset", "dataset-indexed", "plain", "plain-ln".
NormMode parse_norm_mode(std::string_view text);

struct LayerNormParams {
  Tensor gamma;  // [d]
  Tensor beta;   // [d]
  double epsilon = 1e-5;

  // gamma = 1, beta = 0, both trainable.
  static LayerNormParams identity(std::size_t dim, double epsilon = 1e-5);
  std::size_t dim() const { return gamma.numel(); }
};

// gamma * (x - mean) / sqrt(var + epsilon) + beta over the last axis, with
// population variance. Throws ShapeError if the last axis is not d.
Tensor layer_norm(const Tensor& x, const LayerNormParams& params);

struct PrototypeBank {
  Tensor prototypes;  // [n, d]
  double ema_alpha = 0.05;
  bool frozen = false;
  std::vector<std::uint64_t> assignment_counts;

  std::size_t size() const { return prototypes.dim(0); }
  std::size_t dim() const { return prototypes.dim(1); }
};

// Index of the prototype nearest to `features`; lowest index wins ties.
// Throws InputError on non-finite features.
std::size_t gate(std::span<const double> features, const PrototypeBank& bank);

struct AssignedMean {
  std::size_t prototype;
  std::vector<double> mean;
};

struct EmaOutcome {
  bool skipped_frozen = false;
  std::size_t updated = 0;
};

// p_i <- (1 - alpha) p_i + alpha * mean_i for every listed prototype. Writes
// prototype data in place, outside any tape. A frozen bank is left untouched
// and reported through `skipped_frozen`.
EmaOutcome ema_update(PrototypeBank& bank, std::span<const AssignedMean> assigned);

// ||P P^T - I||_F^2, differentiable in P. For n > d the minimum is positive.
Tensor orthogonality_loss(const Tensor& prototypes);

// n x d matrix with orthonormal rows (Gram-Schmidt over Gaussian draws).
// Throws ConfigError when n > d.
Tensor init_orthogonal(std::size_t n, std::size_t d, Rng& rng);

struct ProtoNormOptions {
  std::size_t dim = 0;
  std::size_t n_prototypes = 1;
  NormMode mode = NormMode::kProtoGated;
  double epsilon = 1e-5;
  double ema_alpha = 0.05;
};

class ProtoNormLayer {
 public:
  ProtoNormLayer(const ProtoNormOptions& options, Rng& rng);

  // x: [B, T, d]. `dataset_ids` is required (one per sample, each < n) in
  // dataset-indexed mode and ignored otherwise. In train mode with an
  // unfrozen bank, per-prototype feature means are staged for commit_ema().
  Tensor forward(const Tensor& x, bool train, std::span<const std::size_t> dataset_ids = {});

  // Applies the staged EMA step and clears it.
  EmaOutcome commit_ema();
  void discard_pending();

  Tensor orthogonality_loss() const;

  NormMode mode() const { return mode_; }
  std::size_t dim() const { return dim_; }
  std::size_t n_prototypes() const { return bank_.size(); }

  std::vector<LayerNormParams>& norms() { return norms_; }
  const std::vector<LayerNormParams>& norms() const { return norms_; }
  PrototypeBank& bank() { return bank_; }
  const PrototypeBank& bank() const { return bank_; }

  void set_frozen(bool frozen) { bank_.frozen = frozen; }

  // Routing of the most recent forward call, for audits.
  const std::vector<std::size_t>& last_assignments() const { return last_assignments_; }
  // [B * d] row-major gating features of the most recent forward call.
  const std::vector<double>& last_gating_features() const { return last_features_; }

  // Stored parameters. Prototypes appear only in proto-gated mode and are
  // marked non-trainable while the bank is frozen.
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;

 private:
  NormMode mode_;
  std::size_t dim_;
  std::vector<LayerNormParams> norms_;
  PrototypeBank bank_;

  std::vector<std::vector<double>> pending_sums_;
  std::vector<std::size_t> pending_counts_;
  std::vector<std::size_t> last_assignments_;
  std::vector<double> last_features_;
};

}  // namespace protonorm
