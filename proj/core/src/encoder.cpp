// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "protonorm/errors.hpp"
#include "protonorm/ops.hpp"

namespace protonorm {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("encoder." + field + ": " + why);
  };
  if (input_len == 0) fail("input_len", "must be positive");
  if (channels == 0) fail("channels", "must be positive");
  if (patch_size == 0) fail("patch_size", "must be positive");
  if (patch_size > input_len) fail("patch_size", "must not exceed input_len");
  if (d_model == 0) fail("d_model", "must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) fail("n_heads", "must divide d_model");
  if (n_layers == 0) fail("n_layers", "must be positive");
  if (n_prototypes == 0) fail("n_prototypes", "must be at least 1");
  if (n_prototypes > d_model) {
    fail("n_prototypes", "cannot exceed d_model (orthonormal prototypes need n <= d); raise d_model or lower "
                         "n_prototypes");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must be in [0, 1)");
  if (!(norm_epsilon > 0.0)) fail("norm_epsilon", "must be positive");
  if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) fail("ema_alpha", "must be in (0, 1]");
  if (projection_dim() == 0) fail("proj_dim", "must be positive");
}

Tensor patchify(const Tensor& series, std::size_t patch_size) {
  const bool batched = series.rank() == 3;
  if (!batched && series.rank() != 2) {
    throw ShapeError("patchify expects [C, L] or [B, C, L], got " + to_string(series.shape()));
  }
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  const std::size_t batch = batched ? series.dim(0) : 1;
  const std::size_t channels = series.dim(-2);
  const std::size_t len = series.dim(-1);
  if (patch_size > len) {
    throw ConfigError("patch_size " + std::to_string(patch_size) + " exceeds series length " + std::to_string(len));
  }
  const std::size_t tokens = (len + patch_size - 1) / patch_size;
  const std::size_t width = channels * patch_size;
  std::vector<double> out(batch * tokens * width, 0.0);
  const auto src = series.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t s = 0; s < patch_size; ++s) {
          const std::size_t pos = t * patch_size + s;
          if (pos >= len) break;
          out[(b * tokens + t) * width + c * patch_size + s] = src[(b * channels + c) * len + pos];
        }
  Shape shape = batched ? Shape{batch, tokens, width} : Shape{tokens, width};
  return Tensor(std::move(shape), std::move(out));
}

ParameterCount count_parameters(const EncoderConfig& cfg, std::size_t n_classes) {
  const std::size_t d = cfg.d_model;
  const std::size_t L = cfg.n_layers;
  const std::size_t n = cfg.n_prototypes;
  ParameterCount pc;
  pc.embedding = cfg.channels * cfg.patch_size * d + d + cfg.n_tokens() * d;
  pc.attention = L * 4 * (d * d + d);
  pc.feed_forward = L * (d * cfg.ffn_dim() + cfg.ffn_dim() + cfg.ffn_dim() * d + d);
  const std::size_t ln_pairs = cfg.norm_mode == NormMode::kPlain ? 1 : n;
  const std::size_t protos = cfg.norm_mode == NormMode::kProtoGated ? n * d : 0;
  pc.norm_sites = 2 * L * (ln_pairs * 2 * d + protos);
  const std::size_t p = cfg.projection_dim();
  pc.projection_head = d * d + d + d * p + p;
  pc.classifier_head = n_classes == 0 ? 0 : d * n_classes + n_classes;
  return pc;
}

MacCount count_forward_macs(const EncoderConfig& cfg, std::size_t n_classes) {
  const std::uint64_t T = cfg.n_tokens();
  const std::uint64_t d = cfg.d_model;
  const std::uint64_t L = cfg.n_layers;
  MacCount mc;
  const std::uint64_t embed = T * cfg.channels * cfg.patch_size * d;
  const std::uint64_t attention = 4 * T * d * d + 2 * T * T * d;
  const std::uint64_t ffn = 2 * T * d * cfg.ffn_dim();
  mc.trunk = embed + L * (attention + ffn);
  mc.projection_head = d * d + d * cfg.projection_dim();
  mc.classifier_head = d * n_classes;
  mc.gating_distance = cfg.norm_mode == NormMode::kProtoGated ? 2 * L * cfg.n_prototypes * d : 0;
  return mc;
}

// ---------------------------------------------------------------------------

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out), b(out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  for (double& v : b) v = rng.uniform(-bound, bound);
  return Linear{Tensor({in, out}, std::move(w), true), Tensor({out}, std::move(b), true)};
}

Tensor Linear::operator()(const Tensor& x) const { return ops::matmul(x, weight) + bias; }

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  patch_embed_ = Linear::init(cfg_.channels * cfg_.patch_size, d, rng);
  std::vector<double> pos(cfg_.n_tokens() * d);
  for (double& v : pos) v = rng.normal(0.0, 0.02);
  positions_ = Tensor({cfg_.n_tokens(), d}, std::move(pos), true);

  const ProtoNormOptions norm_opts{d, cfg_.n_prototypes, cfg_.norm_mode, cfg_.norm_epsilon, cfg_.ema_alpha};
  blocks_.reserve(cfg_.n_layers);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    Linear q = Linear::init(d, d, rng);
    Linear k = Linear::init(d, d, rng);
    Linear v = Linear::init(d, d, rng);
    Linear o = Linear::init(d, d, rng);
    ProtoNormLayer attn_norm(norm_opts, rng);
    Linear f1 = Linear::init(d, cfg_.ffn_dim(), rng);
    Linear f2 = Linear::init(cfg_.ffn_dim(), d, rng);
    ProtoNormLayer ffn_norm(norm_opts, rng);
    blocks_.push_back(EncoderBlock{std::move(q), std::move(k), std::move(v), std::move(o), std::move(attn_norm),
                                   std::move(f1), std::move(f2), std::move(ffn_norm)});
  }
  ProjectionHead head{Linear::init(d, d, rng), Linear::init(d, cfg_.projection_dim(), rng)};
  projection_ = std::move(head);
}

Tensor Encoder::attention(const EncoderBlock& block, const Tensor& x) const {
  const std::size_t B = x.dim(0), T = x.dim(1), d = cfg_.d_model, h = cfg_.n_heads, dh = d / h;
  auto split_heads = [&](const Tensor& t) { return ops::transpose(ops::reshape(t, {B, T, h, dh}), 1, 2); };
  const Tensor q = split_heads(block.query(x));
  const Tensor k = split_heads(block.key(x));
  const Tensor v = split_heads(block.value(x));
  const Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k, 2, 3)), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor weights = ops::softmax(scores, -1);
  const Tensor context = ops::reshape(ops::transpose(ops::matmul(weights, v), 1, 2), {B, T, d});
  return block.output(context);
}

Tensor Encoder::embed_patches(const Tensor& batch, const ForwardContext& ctx) {
  if (batch.rank() != 3 || batch.dim(1) != cfg_.channels || batch.dim(2) != cfg_.input_len) {
    throw ShapeError("encoder expects [B, " + std::to_string(cfg_.channels) + ", " + std::to_string(cfg_.input_len) +
                     "], got " + to_string(batch.shape()));
  }
  if (cfg_.norm_mode == NormMode::kDatasetIndexed && ctx.dataset_ids.size() != batch.dim(0)) {
    throw ContractError("dataset-indexed normalization requires one dataset id per sample");
  }
  if (ctx.train && cfg_.dropout > 0.0 && ctx.rng == nullptr) {
    throw ContractError("training forward with dropout needs an rng");
  }
  const Tensor h = patch_embed_(patchify(batch, cfg_.patch_size)) + positions_;
  return ctx.train && cfg_.dropout > 0.0 ? ops::dropout(h, cfg_.dropout, *ctx.rng, true) : h;
}

Tensor Encoder::forward_attention(std::size_t index, const Tensor& h, const ForwardContext& ctx) {
  if (index >= blocks_.size()) throw ContractError("block index " + std::to_string(index) + " out of range");
  const bool use_dropout = ctx.train && cfg_.dropout > 0.0;
  if (use_dropout && ctx.rng == nullptr) throw ContractError("training forward with dropout needs an rng");
  EncoderBlock& block = blocks_[index];
  const Tensor attn = attention(block, h);
  return block.attn_norm.forward(h + (use_dropout ? ops::dropout(attn, cfg_.dropout, *ctx.rng, true) : attn),
                                 ctx.train, ctx.dataset_ids);
}

Tensor Encoder::forward_feed_forward(std::size_t index, const Tensor& h, const ForwardContext& ctx) {
  if (index >= blocks_.size()) throw ContractError("block index " + std::to_string(index) + " out of range");
  const bool use_dropout = ctx.train && cfg_.dropout > 0.0;
  if (use_dropout && ctx.rng == nullptr) throw ContractError("training forward with dropout needs an rng");
  EncoderBlock& block = blocks_[index];
  const Tensor ff = block.ffn_out(ops::gelu(block.ffn_in(h)));
  return block.ffn_norm.forward(h + (use_dropout ? ops::dropout(ff, cfg_.dropout, *ctx.rng, true) : ff), ctx.train,
                                ctx.dataset_ids);
}

Tensor Encoder::forward_block(std::size_t index, const Tensor& h, const ForwardContext& ctx) {
  return forward_feed_forward(index, forward_attention(index, h, ctx), ctx);
}

Tensor Encoder::pool(const Tensor& h) const { return ops::mean(h, 1); }

Tensor Encoder::embed(const Tensor& batch, const ForwardContext& ctx) {
  Tensor h = embed_patches(batch, ctx);
  for (std::size_t l = 0; l < blocks_.size(); ++l) h = forward_block(l, h, ctx);
  return pool(h);
}

Tensor Encoder::project(const Tensor& pooled) const {
  if (!projection_) throw ContractError("encoder has no projection head");
  return projection_->out(ops::relu(projection_->hidden(pooled)));
}

Tensor Encoder::classify(const Tensor& pooled) const {
  if (!classifier_) throw ContractError("encoder has no classifier head");
  return (*classifier_)(pooled);
}

Tensor Encoder::encode(const Tensor& batch, Phase phase, const ForwardContext& ctx) {
  if (phase == Phase::kPretrain && !projection_) throw ContractError("pretrain phase requires the projection head");
  if (phase != Phase::kPretrain && !classifier_) throw ContractError("fine-tune/eval phase requires a classifier");
  const Tensor pooled = embed(batch, ctx);
  return phase == Phase::kPretrain ? project(pooled) : classify(pooled);
}

void Encoder::attach_classifier(std::size_t n_classes, Rng& rng) {
  if (n_classes < 2) throw ConfigError("classifier needs at least two classes");
  classifier_ = Linear::init(cfg_.d_model, n_classes, rng);
}

void Encoder::drop_projection_head() { projection_.reset(); }

std::vector<NamedTensor> Encoder::parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"patch_embed.weight", patch_embed_.weight, true});
  out.push_back({"patch_embed.bias", patch_embed_.bias, true});
  out.push_back({"positions", positions_, true});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const EncoderBlock& b = blocks_[l];
    const std::string p = "block" + std::to_string(l);
    auto linear = [&](const std::string& name, const Linear& lin) {
      out.push_back({p + "." + name + ".weight", lin.weight, true});
      out.push_back({p + "." + name + ".bias", lin.bias, true});
    };
    linear("query", b.query);
    linear("key", b.key);
    linear("value", b.value);
    linear("output", b.output);
    b.attn_norm.collect_parameters(p + ".attn_norm", out);
    linear("ffn_in", b.ffn_in);
    linear("ffn_out", b.ffn_out);
    b.ffn_norm.collect_parameters(p + ".ffn_norm", out);
  }
  if (projection_) {
    out.push_back({"projection.hidden.weight", projection_->hidden.weight, true});
    out.push_back({"projection.hidden.bias", projection_->hidden.bias, true});
    out.push_back({"projection.out.weight", projection_->out.weight, true});
    out.push_back({"projection.out.bias", projection_->out.bias, true});
  }
  if (classifier_) {
    out.push_back({"classifier.weight", classifier_->weight, true});
    out.push_back({"classifier.bias", classifier_->bias, true});
  }
  return out;
}

std::vector<ProtoNormLayer*> Encoder::norm_layers() {
  std::vector<ProtoNormLayer*> out;
  for (EncoderBlock& b : blocks_) {
    out.push_back(&b.attn_norm);
    out.push_back(&b.ffn_norm);
  }
  return out;
}

std::vector<const ProtoNormLayer*> Encoder::norm_layers() const {
  std::vector<const ProtoNormLayer*> out;
  for (const EncoderBlock& b : blocks_) {
    out.push_back(&b.attn_norm);
    out.push_back(&b.ffn_norm);
  }
  return out;
}

void Encoder::set_prototypes_frozen(bool frozen) {
  for (ProtoNormLayer* layer : norm_layers()) layer->set_frozen(frozen);
}

void Encoder::commit_ema() {
  for (ProtoNormLayer* layer : norm_layers()) layer->commit_ema();
}

void Encoder::discard_pending_ema() {
  for (ProtoNormLayer* layer : norm_layers()) layer->discard_pending();
}

std::vector<Tensor> Encoder::orthogonality_losses() const {
  std::vector<Tensor> out;
  if (cfg_.norm_mode != NormMode::kProtoGated) return out;
  for (const ProtoNormLayer* layer : norm_layers()) out.push_back(layer->orthogonality_loss());
  return out;
}

std::vector<std::vector<double>> snapshot_parameters(const std::vector<NamedTensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const NamedTensor& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore_parameters(const std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& values) {
  if (params.size() != values.size()) throw ContractError("parameter snapshot does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    if (t.numel() != values[i].size()) throw ContractError("parameter snapshot shape mismatch for " + params[i].name);
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
  }
}

}  // namespace protonorm
