// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "protonorm/errors.hpp"
#include "protonorm/ops.hpp"

namespace protonorm {

namespace {

constexpr std::uint64_t kRunStream = 0x52554e;     // augmentation + dropout
constexpr std::uint64_t kOrderStream = 0x4f5244;   // per-epoch shuffles
constexpr std::uint64_t kValStream = 0x56414c;     // validation augmentations
constexpr std::uint64_t kTuneStream = 0x54554e45;  // fine-tuning

OptimConfig resolve_total(OptimConfig cfg, std::size_t total) {
  if (cfg.total_steps == 0) cfg.total_steps = total;
  return cfg;
}

std::vector<std::size_t> repeat_twice(std::span<const std::size_t> ids) {
  std::vector<std::size_t> out(ids.begin(), ids.end());
  out.insert(out.end(), ids.begin(), ids.end());
  return out;
}

double sum_of(std::span<const Tensor> ts) {
  double s = 0.0;
  for (const Tensor& t : ts) s += t.item();
  return s;
}

std::vector<std::vector<double>> bank_bits(const Encoder& model) {
  std::vector<std::vector<double>> out;
  for (const ProtoNormLayer* layer : model.norm_layers()) {
    const auto d = layer->bank().prototypes.data();
    out.emplace_back(d.begin(), d.end());
  }
  return out;
}

bool same_bits(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(double)) != 0) return false;
  }
  return true;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.name = ds.name;
  out.dataset_id = ds.dataset_id;
  out.split = ds.split;
  out.n_classes = ds.n_classes;
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(ds.samples[i]);
  return out;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

Pretrainer::Pretrainer(Encoder& model, const SamplePool& pool, const PretrainConfig& cfg)
    : model_(&model),
      pool_(&pool),
      cfg_(cfg),
      batch_size_(std::min(cfg.batch_size, pool.size())),
      steps_per_epoch_(batch_size_ == 0 ? 0 : pool.size() / batch_size_),
      optimizer_(resolve_total(cfg.optim, cfg.epochs * steps_per_epoch_)),
      rng_(mix_seed(cfg.seed, kRunStream)) {
  if (cfg.batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
  if (!model.has_projection_head()) throw ContractError("pretraining needs the projection head");
  cfg_.augment.validate();
  cfg_.ntxent.validate();
  cfg_.optim = resolve_total(cfg.optim, cfg.epochs * steps_per_epoch_);
  if (cfg_.freeze_prototypes) model.set_prototypes_frozen(true);
}

void Pretrainer::resume(const TrainState& state) {
  if (state.stage != TrainState::Stage::kPretrain) throw ContractError("checkpoint is not a pretraining checkpoint");
  if (state.batch_in_epoch >= steps_per_epoch_ && steps_per_epoch_ > 0) {
    throw ContractError("checkpoint batch position is beyond the epoch length of this pool");
  }
  optimizer_.restore(state.optimizer_steps, state.moments);
  rng_ = Rng::deserialize(state.rng_state);
  step_ = state.step;
  epoch_ = state.epoch;
  batch_in_epoch_ = state.batch_in_epoch;
}

std::vector<std::size_t> Pretrainer::epoch_order(std::uint64_t epoch) const {
  Rng order_rng(mix_seed(mix_seed(cfg_.seed, kOrderStream), epoch));
  return shuffled_order(pool_->size(), order_rng);
}

std::optional<StepLog> Pretrainer::step() {
  if (done() || steps_per_epoch_ == 0) return std::nullopt;
  const auto order = epoch_order(epoch_);
  const std::span<const std::size_t> indices(order.data() + batch_in_epoch_ * batch_size_, batch_size_);
  const Batch batch = pool_->gather(indices);

  Tape tape;
  Tape::Scope scope(tape);
  const Tensor views = augment_batch(batch.series, cfg_.augment, rng_);
  const auto ids = repeat_twice(batch.dataset_ids);
  ForwardContext ctx;
  ctx.train = true;
  ctx.rng = &rng_;
  ctx.dataset_ids = ids;
  const Tensor z = model_->encode(views, Phase::kPretrain, ctx);
  const Tensor nt = nt_xent(z, cfg_.ntxent.temperature);
  const auto orth = cfg_.orthogonality ? model_->orthogonality_losses() : std::vector<Tensor>{};
  const Tensor total = total_loss(nt, orth, cfg_.ntxent.lambda_orth);

  StepLog log;
  log.loss_nt = nt.item();
  log.loss_orth = sum_of(orth);
  log.loss_total = total.item();
  if (!std::isfinite(log.loss_total)) {
    model_->discard_pending_ema();
    throw DivergenceError("non-finite pretraining loss at step " + std::to_string(step_ + 1));
  }

  tape.backward(total);
  const auto params = model_->parameters();
  log.lr = cosine_warmup_lr(step_ + 1, cfg_.optim);
  try {
    optimizer_.step(params, log.lr);
  } catch (const DivergenceError&) {
    zero_grads(params);
    model_->discard_pending_ema();
    throw;
  }
  zero_grads(params);
  // Prototype EMA runs after the gradient step so both see the same forward.
  if (cfg_.prototype_ema) {
    model_->commit_ema();
  } else {
    model_->discard_pending_ema();
  }

  ++step_;
  log.step = step_;
  log.epoch = epoch_;
  if (++batch_in_epoch_ == steps_per_epoch_) {
    batch_in_epoch_ = 0;
    ++epoch_;
  }
  return log;
}

void Pretrainer::run(const std::function<void(const StepLog&)>& on_step, std::size_t max_steps) {
  for (std::size_t taken = 0; taken < max_steps; ++taken) {
    auto log = step();
    if (!log) break;
    if (on_step) on_step(*log);
  }
}

TrainState Pretrainer::state() const {
  TrainState s;
  s.stage = TrainState::Stage::kPretrain;
  s.step = step_;
  s.epoch = epoch_;
  s.batch_in_epoch = batch_in_epoch_;
  const auto layers = model_->norm_layers();
  s.prototypes_frozen = !layers.empty() && layers.front()->bank().frozen;
  s.rng_state = rng_.serialize();
  s.optimizer_steps = optimizer_.steps_taken();
  s.moments = optimizer_.moments();
  return s;
}

double Pretrainer::validation_loss(const SamplePool& pool, std::size_t batch_size) const {
  if (pool.size() == 0) throw InputError("validation pool is empty");
  const std::size_t bs = std::max<std::size_t>(1, std::min(batch_size, pool.size()));
  Rng val_rng(mix_seed(cfg_.seed, kValStream));
  const auto order = iota(pool.size());
  double weighted = 0.0;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    const Batch batch = pool.gather(std::span<const std::size_t>(order.data() + start, end - start));
    const Tensor views = augment_batch(batch.series, cfg_.augment, val_rng);
    const auto ids = repeat_twice(batch.dataset_ids);
    ForwardContext ctx;
    ctx.dataset_ids = ids;
    const Tensor z = model_->encode(views, Phase::kPretrain, ctx);
    weighted += nt_xent(z, cfg_.ntxent.temperature).item() * static_cast<double>(end - start);
  }
  return weighted / static_cast<double>(pool.size());
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy expects [B, K] logits and B labels, got " + to_string(logits.shape()));
  }
  for (std::size_t y : labels) {
    if (y >= logits.dim(1)) throw InputError("label " + std::to_string(y) + " out of range");
  }
  return ops::neg(ops::mean(ops::gather_last(ops::log_softmax(logits, -1), labels)));
}

namespace {

// Eval-mode pass over `ds`; `on_batch` sees the output and the batch.
template <typename Fn>
void eval_pass(Encoder& model, const Dataset& ds, std::size_t batch_size, Phase phase, Fn&& on_batch) {
  if (ds.size() == 0) throw InputError("cannot evaluate an empty dataset");
  const SamplePool pool({&ds});
  const std::size_t bs = std::max<std::size_t>(1, batch_size);
  const auto order = iota(ds.size());
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    const Batch batch = pool.gather(std::span<const std::size_t>(order.data() + start, end - start));
    ForwardContext ctx;
    ctx.dataset_ids = batch.dataset_ids;
    Tensor out = phase == Phase::kEval ? model.encode(batch.series, Phase::kEval, ctx) : model.embed(batch.series, ctx);
    on_batch(out, batch);
  }
}

void add_routing(const Encoder& model, std::vector<std::vector<std::size_t>>& hist) {
  const auto layers = model.norm_layers();
  if (hist.empty()) {
    for (const ProtoNormLayer* layer : layers) hist.emplace_back(layer->n_prototypes(), 0);
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t a : layers[l]->last_assignments()) ++hist[l][a];
  }
}

}  // namespace

Evaluation evaluate(Encoder& model, const Dataset& ds, std::size_t batch_size) {
  if (!model.has_classifier()) throw ContractError("evaluation needs a classifier head");
  Evaluation ev;
  std::vector<std::size_t> truth;
  eval_pass(model, ds, batch_size, Phase::kEval, [&](const Tensor& logits, const Batch& batch) {
    const std::size_t k = logits.dim(1);
    const auto d = logits.data();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const double* row = d.data() + b * k;
      ev.predictions.push_back(static_cast<std::size_t>(std::max_element(row, row + k) - row));
      truth.push_back(batch.labels[b]);
    }
    add_routing(model, ev.gating);
  });
  ev.metrics = compute_metrics(truth, ev.predictions, model.n_classes());
  return ev;
}

std::vector<std::vector<std::size_t>> gating_histogram(Encoder& model, const Dataset& ds, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> hist;
  eval_pass(model, ds, batch_size, Phase::kPretrain, [&](const Tensor&, const Batch&) { add_routing(model, hist); });
  return hist;
}

std::vector<std::size_t> select_labeled(const Dataset& ds, std::size_t n_labeled, std::size_t min_per_class, Rng& rng) {
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.samples[i].label].push_back(i);
  for (std::size_t c = 0; c < ds.n_classes; ++c) {
    if (!by_class.count(c)) throw InputError("class " + std::to_string(c) + " has no training samples");
  }
  if (n_labeled == 0 || n_labeled >= ds.size()) return iota(ds.size());
  if (n_labeled < by_class.size() * min_per_class) {
    throw InputError("n_labeled = " + std::to_string(n_labeled) + " cannot hold " + std::to_string(min_per_class) +
                     " samples for each of " + std::to_string(by_class.size()) + " classes");
  }

  std::vector<std::size_t> chosen;
  std::vector<std::size_t> rest;
  for (auto& [label, members] : by_class) {
    const auto perm = shuffled_order(members.size(), rng);
    const std::size_t take = std::min(min_per_class, members.size());
    for (std::size_t j = 0; j < perm.size(); ++j) (j < take ? chosen : rest).push_back(members[perm[j]]);
  }
  if (chosen.size() < n_labeled) {
    const auto perm = shuffled_order(rest.size(), rng);
    for (std::size_t j = 0; j < perm.size() && chosen.size() < n_labeled; ++j) chosen.push_back(rest[perm[j]]);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

FinetuneResult finetune(Encoder& model, const Dataset& train, const Dataset& test, const FinetuneConfig& cfg) {
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw ConfigError("finetune epochs and batch_size must be positive");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) throw ConfigError("finetune.val_fraction must be in (0, 1)");
  if (train.n_classes < 2) throw InputError("fine-tuning needs at least two classes");
  Rng rng(mix_seed(cfg.seed, kTuneStream));

  const auto labeled_idx = select_labeled(train, cfg.n_labeled, cfg.min_per_class, rng);
  if (labeled_idx.size() < 2) throw InputError("fine-tuning needs at least two labeled samples");
  const auto perm = shuffled_order(labeled_idx.size(), rng);
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(labeled_idx.size()))), 1,
      labeled_idx.size() - 1);
  std::vector<std::size_t> val_idx, train_idx;
  for (std::size_t j = 0; j < perm.size(); ++j) (j < n_val ? val_idx : train_idx).push_back(labeled_idx[perm[j]]);
  const Dataset train_part = subset(train, train_idx);
  const Dataset val_part = subset(train, val_idx);

  if (model.has_projection_head()) model.drop_projection_head();
  model.attach_classifier(train.n_classes, rng);
  model.set_prototypes_frozen(true);

  FinetuneResult result;
  result.n_train = train_part.size();
  result.n_val = val_part.size();
  const std::size_t batches = (train_part.size() + cfg.batch_size - 1) / cfg.batch_size;
  const OptimConfig optim_cfg = resolve_total(cfg.optim, cfg.epochs * batches);
  AdamW optimizer(optim_cfg);
  const auto params = model.parameters();
  const auto banks_before = bank_bits(model);
  const SamplePool pool({&train_part});

  std::vector<std::vector<double>> best = snapshot_parameters(params);
  double best_acc = -1.0;
  std::size_t since_best = 0;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchIterator it(pool, cfg.batch_size, shuffled_order(pool.size(), rng));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    while (auto batch = it.next()) {
      Tape tape;
      Tape::Scope scope(tape);
      ForwardContext ctx;
      ctx.train = true;
      ctx.rng = &rng;
      ctx.dataset_ids = batch->dataset_ids;
      const Tensor logits = model.encode(batch->series, Phase::kFinetune, ctx);
      const Tensor loss = cross_entropy(logits, batch->labels);
      if (!std::isfinite(loss.item())) throw DivergenceError("non-finite fine-tuning loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      optimizer.step(params, cosine_warmup_lr(++step, optim_cfg));
      zero_grads(params);
      loss_sum += loss.item() * static_cast<double>(batch->size());
      seen += batch->size();
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(seen));
    result.epochs_run = epoch + 1;
    if (!same_bits(banks_before, bank_bits(model))) result.prototypes_unchanged = false;

    const double acc = evaluate(model, val_part, cfg.batch_size).metrics.accuracy;
    if (acc > best_acc) {
      best_acc = acc;
      result.best_epoch = epoch + 1;
      best = snapshot_parameters(params);
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  restore_parameters(params, best);
  result.best_val_accuracy = best_acc;
  result.test = evaluate(model, test, cfg.batch_size);
  return result;
}

TraceWriter::TraceWriter(const std::string& path, bool append) {
  file_ = std::fopen(path.c_str(), append ? "a" : "w");
  if (file_ == nullptr) throw IoError("cannot open trace file " + path);
  if (!append || std::ftell(file_) == 0) {
    std::fputs("step,lr,loss_nt,loss_orth,loss_total\n", file_);
  }
}

TraceWriter::~TraceWriter() {
  if (file_ != nullptr) std::fclose(file_);
}

void TraceWriter::write(const StepLog& log) {
  std::fprintf(file_, "%llu,%.17g,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(log.step), log.lr,
               log.loss_nt, log.loss_orth, log.loss_total);
  std::fflush(file_);
}

}  // namespace protonorm
