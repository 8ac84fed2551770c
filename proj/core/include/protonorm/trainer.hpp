// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Contrastive pretraining, supervised fine-tuning, and evaluation loops.

#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protonorm/checkpoint.hpp"
#include "protonorm/data.hpp"
#include "protonorm/encoder.hpp"
#include "protonorm/metrics.hpp"
#include "protonorm/optim.hpp"
#include "protonorm/ssl.hpp"

namespace protonorm {

struct PretrainConfig {
  AugmentConfig augment;
  NtXentConfig ntxent;
  OptimConfig optim;  // total_steps == 0: epochs * steps per epoch
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  bool freeze_prototypes = false;
  // false drops the orthogonality term from the objective entirely.
  bool orthogonality = true;
  // false keeps banks out of the EMA refinement (gradients still apply).
  bool prototype_ema = true;
  std::uint64_t seed = 0;
};

struct StepLog {
  std::uint64_t step = 0;  // 1-based index of the optimizer step just taken
  std::uint64_t epoch = 0;
  double lr = 0.0;
  double loss_nt = 0.0;
  double loss_orth = 0.0;  // unweighted sum over sites
  double loss_total = 0.0;
};

// Step-wise NT-Xent pretraining over a pool. Each epoch visits the pool in an
// order derived from (seed, epoch) and drops the trailing partial batch, so a
// run resumed from state() continues bit-identically.
class Pretrainer {
 public:
  Pretrainer(Encoder& model, const SamplePool& pool, const PretrainConfig& cfg);

  void resume(const TrainState& state);

  // One optimizer step, or nullopt once every epoch has run. On a non-finite
  // loss or gradient throws DivergenceError and leaves parameters untouched.
  std::optional<StepLog> step();

  // Steps until done or `max_steps` more steps were taken.
  void run(const std::function<void(const StepLog&)>& on_step = {},
           std::size_t max_steps = std::numeric_limits<std::size_t>::max());

  bool done() const { return epoch_ >= cfg_.epochs; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t batch_size() const { return batch_size_; }
  std::uint64_t steps_taken() const { return step_; }
  const OptimConfig& optim_config() const { return cfg_.optim; }

  TrainState state() const;

  // Mean NT-Xent over `pool` in eval mode with augmentations from a fixed
  // stream, so values are comparable across calls.
  double validation_loss(const SamplePool& pool, std::size_t batch_size) const;

 private:
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;

  Encoder* model_;
  const SamplePool* pool_;
  PretrainConfig cfg_;
  std::size_t batch_size_;
  std::size_t steps_per_epoch_;
  AdamW optimizer_;
  Rng rng_;
  std::uint64_t step_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t batch_in_epoch_ = 0;
};

// Mean softmax cross-entropy of logits [B, K] against labels.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

struct Evaluation {
  Metrics metrics;
  std::vector<std::size_t> predictions;
  // histogram[layer][prototype]: routing counts over the evaluated set.
  std::vector<std::vector<std::size_t>> gating;
};

// Eval-mode argmax classification; the model needs a classifier head.
Evaluation evaluate(Encoder& model, const Dataset& ds, std::size_t batch_size);

// Eval-mode routing counts per normalization site (no head required).
std::vector<std::vector<std::size_t>> gating_histogram(Encoder& model, const Dataset& ds, std::size_t batch_size);

struct FinetuneConfig {
  OptimConfig optim;  // total_steps == 0: epochs * batches per epoch
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t n_labeled = 100;  // 0 = every training sample
  std::size_t min_per_class = 5;
  double val_fraction = 0.2;
  std::size_t patience = 0;  // 0 disables early stopping
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  Evaluation test;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::vector<double> train_loss;  // per epoch
  // Prototype banks were bit-identical after every epoch.
  bool prototypes_unchanged = true;
};

// Labeled subset: n_labeled samples drawn without replacement with at least
// min_per_class per class (capped by availability). Sorted by original index.
std::vector<std::size_t> select_labeled(const Dataset& ds, std::size_t n_labeled, std::size_t min_per_class, Rng& rng);

// Replaces the projection head with a fresh classifier, freezes every
// prototype bank, trains on a train/val split of the labeled subset keeping
// the best-validation weights, then scores `test`.
FinetuneResult finetune(Encoder& model, const Dataset& train, const Dataset& test, const FinetuneConfig& cfg);

// step,lr,loss_nt,loss_orth,loss_total rows with round-trip precision.
class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path, bool append = false);
  ~TraceWriter();
  TraceWriter(const TraceWriter&) = delete;
  TraceWriter& operator=(const TraceWriter&) = delete;

  void write(const StepLog& log);

 private:
  std::FILE* file_;
};

}  // namespace protonorm
