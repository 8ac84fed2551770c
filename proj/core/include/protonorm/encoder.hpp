// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Patch-based Transformer encoder whose normalization sites are ProtoNorm
// layers, with a projection head for contrastive pretraining and a linear
// classifier head for fine-tuning.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protonorm/protonorm.hpp"
#include "protonorm/rng.hpp"
#include "protonorm/tensor.hpp"

namespace protonorm {

struct EncoderConfig {
  std::size_t input_len = 128;
  std::size_t channels = 1;
  std::size_t patch_size = 16;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 3;
  std::size_t n_prototypes = 4;
  double dropout = 0.15;
  NormMode norm_mode = NormMode::kProtoGated;
  double norm_epsilon = 1e-5;
  double ema_alpha = 0.05;
  // 0 selects d_model / 2.
  std::size_t proj_dim = 0;

  std::size_t n_tokens() const { return (input_len + patch_size - 1) / patch_size; }
  std::size_t projection_dim() const { return proj_dim == 0 ? d_model / 2 : proj_dim; }
  std::size_t ffn_dim() const { return 4 * d_model; }

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Splits [C, L] (or [B, C, L]) into non-overlapping windows; the tail is
// zero-padded to a whole patch. Returns [T, C * P] (or [B, T, C * P]) with
// features ordered channel-major. Not differentiable (acts on input data).
Tensor patchify(const Tensor& series, std::size_t patch_size);

struct ParameterCount {
  std::size_t embedding = 0;  // patch projection + positional table
  std::size_t attention = 0;
  std::size_t feed_forward = 0;
  std::size_t norm_sites = 0;  // LayerNorm pairs and prototype banks
  std::size_t projection_head = 0;
  std::size_t classifier_head = 0;

  std::size_t trunk() const { return embedding + attention + feed_forward + norm_sites; }
  std::size_t total() const { return trunk() + projection_head + classifier_head; }
};

// Closed-form parameter count for an encoder built from `cfg`, with the
// projection head and (when n_classes > 0) a classifier head.
ParameterCount count_parameters(const EncoderConfig& cfg, std::size_t n_classes = 0);

// Closed-form multiply-accumulate count for one sample's forward pass.
struct MacCount {
  std::uint64_t trunk = 0;  // embedding, attention, feed-forward, normalization
  std::uint64_t projection_head = 0;
  std::uint64_t classifier_head = 0;
  std::uint64_t gating_distance = 0;  // prototype distance evaluations only
};
MacCount count_forward_macs(const EncoderConfig& cfg, std::size_t n_classes = 0);

enum class Phase { kPretrain, kFinetune, kEval };

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;  // dropout stream; required when train && dropout > 0
  std::span<const std::size_t> dataset_ids;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct EncoderBlock {
  Linear query, key, value, output;
  ProtoNormLayer attn_norm;
  Linear ffn_in, ffn_out;
  ProtoNormLayer ffn_norm;
};

class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }

  // [B, C, L] -> mean-pooled token representation [B, d_model].
  Tensor embed(const Tensor& batch, const ForwardContext& ctx);

  // The stages of embed(), for callers that re-run only part of the trunk.
  // Chaining embed_patches, forward_block(0..L-1) and pool with one context
  // is exactly embed(), including the order of dropout draws.
  Tensor embed_patches(const Tensor& batch, const ForwardContext& ctx);
  Tensor forward_block(std::size_t index, const Tensor& h, const ForwardContext& ctx);
  // forward_block(i, h) == forward_feed_forward(i, forward_attention(i, h)).
  Tensor forward_attention(std::size_t index, const Tensor& h, const ForwardContext& ctx);
  Tensor forward_feed_forward(std::size_t index, const Tensor& h, const ForwardContext& ctx);
  Tensor pool(const Tensor& h) const;

  // Full forward for a phase: projection output in pretraining, class logits
  // otherwise. Throws ContractError when the phase's head is missing.
  Tensor encode(const Tensor& batch, Phase phase, const ForwardContext& ctx);

  Tensor project(const Tensor& pooled) const;
  Tensor classify(const Tensor& pooled) const;

  bool has_projection_head() const { return projection_.has_value(); }
  bool has_classifier() const { return classifier_.has_value(); }
  std::size_t n_classes() const { return classifier_ ? classifier_->weight.dim(1) : 0; }
  void attach_classifier(std::size_t n_classes, Rng& rng);
  void drop_projection_head();

  std::vector<NamedTensor> parameters() const;

  std::vector<ProtoNormLayer*> norm_layers();
  std::vector<const ProtoNormLayer*> norm_layers() const;
  std::vector<EncoderBlock>& blocks() { return blocks_; }

  void set_prototypes_frozen(bool frozen);
  void commit_ema();
  void discard_pending_ema();

  // One orthogonality penalty per ProtoNorm site (empty outside proto mode).
  std::vector<Tensor> orthogonality_losses() const;

  Linear& patch_embedding() { return patch_embed_; }

 private:
  Tensor attention(const EncoderBlock& block, const Tensor& x) const;

  EncoderConfig cfg_;
  Linear patch_embed_;
  Tensor positions_;  // [T, d]
  std::vector<EncoderBlock> blocks_;
  struct ProjectionHead {
    Linear hidden, out;
  };
  std::optional<ProjectionHead> projection_;
  std::optional<Linear> classifier_;
};

// Deep copies of parameter values, for best-checkpoint tracking.
std::vector<std::vector<double>> snapshot_parameters(const std::vector<NamedTensor>& params);
void restore_parameters(const std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& values);

}  // namespace protonorm
