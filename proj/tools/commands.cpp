// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "protonorm/checkpoint.hpp"
#include "protonorm/errors.hpp"

namespace protonorm::cli {

namespace {

constexpr std::uint64_t kInitStream = 0x494e4954;
constexpr std::uint64_t kStandardizeStream = 0x535444;
constexpr std::uint64_t kSplitStream = 0x53504c;
constexpr std::uint64_t kShiftStream = 0x534846;
constexpr std::uint64_t kSyntheticStream = 0x53594e;
constexpr std::uint64_t kGenerateStream = 0x47454e;

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

// status.json maps each command to its latest state and is rewritten at
// every transition, so a crashed run still reads "running" and a failed one
// carries its error.
class StatusFile {
 public:
  StatusFile(fs::path dir, std::string command) : path_(dir / "status.json"), command_(std::move(command)) {
    write("running", "");
  }
  void completed() { write("completed", ""); }
  void failed(const std::string& error) { write("failed", error); }
  void add_output(const fs::path& p) { outputs_.push_back(p.filename().string()); }

 private:
  void write(const std::string& status, const std::string& error) {
    Json all = Json::object();
    if (std::ifstream in(path_); in) {
      try {
        all = Json::parse(in);
      } catch (const nlohmann::json::exception&) {
        all = Json::object();
      }
      if (!all.is_object()) all = Json::object();
    }
    Json entry{{"status", status}, {"outputs", outputs_}};
    if (!error.empty()) entry["error"] = error;
    all[command_] = entry;
    write_json(path_, all);
  }
  fs::path path_;
  std::string command_;
  std::vector<std::string> outputs_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::size_t counted_parameters(const Encoder& model) {
  std::size_t n = 0;
  for (const NamedTensor& p : model.parameters()) n += p.tensor.numel();
  return n;
}

Json gating_json(const std::vector<std::vector<std::size_t>>& hist) {
  Json j = Json::array();
  for (const auto& layer : hist) j.push_back(layer);
  return j;
}

int report(const std::exception& e, int code) {
  std::cerr << "protonorm: " << e.what() << '\n';
  return code;
}

// Keeps the header and the first `rows` rows so an appended resume does not
// duplicate steps written after the checkpoint.
void truncate_rows(const fs::path& path, std::uint64_t rows) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line) && lines.size() < rows + 1) lines.push_back(line);
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
}

OptimConfig finetune_optim(const RunConfig& cfg) {
  OptimConfig o = cfg.optim;
  o.total_steps = 0;  // re-derived from the fine-tuning schedule
  return o;
}

}  // namespace

bool parse_bool(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw ConfigError("expected a boolean, got '" + text + "'");
}

Overrides environment_overrides(const std::function<const char*(const char*)>& getenv) {
  Overrides o;
  auto get = [&](const char* name) -> std::optional<std::string> {
    const char* v = getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  auto number = [](const char* name, const std::string& v, auto parse) {
    try {
      std::size_t used = 0;
      auto value = parse(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return value;
    } catch (const std::exception&) {
      throw ConfigError(std::string(name) + ": cannot parse '" + v + "'");
    }
  };
  if (auto v = get("PROTONORM_CONFIG")) o.config = *v;
  if (auto v = get("PROTONORM_OUT")) o.out = *v;
  if (auto v = get("PROTONORM_NORM_MODE")) o.norm_mode = *v;
  if (auto v = get("PROTONORM_SEED")) {
    o.seed = number("PROTONORM_SEED", *v, [](const std::string& s, std::size_t* u) { return std::stoull(s, u); });
  }
  if (auto v = get("PROTONORM_PROTOTYPES")) {
    o.prototypes =
        number("PROTONORM_PROTOTYPES", *v, [](const std::string& s, std::size_t* u) { return std::stoull(s, u); });
  }
  if (auto v = get("PROTONORM_LAMBDA")) {
    o.lambda = number("PROTONORM_LAMBDA", *v, [](const std::string& s, std::size_t* u) { return std::stod(s, u); });
  }
  if (auto v = get("PROTONORM_FREEZE_PROTOTYPES")) {
    try {
      o.freeze_prototypes = parse_bool(*v);
    } catch (const ConfigError&) {
      throw ConfigError("PROTONORM_FREEZE_PROTOTYPES: expected a boolean, got '" + *v + "'");
    }
  }
  return o;
}

Resolved resolve(const Overrides& flags, const Overrides& env) {
  auto pick = [](const auto& flag, const auto& envv) { return flag ? flag : envv; };
  Resolved r;
  const auto config_path = pick(flags.config, env.config);
  r.config = config_path ? load_run_config(*config_path, desk_config()) : desk_config();
  if (auto v = pick(flags.seed, env.seed)) r.config.seed = *v;
  if (auto v = pick(flags.norm_mode, env.norm_mode)) r.config.encoder.norm_mode = parse_norm_mode(*v);
  if (auto v = pick(flags.prototypes, env.prototypes)) r.config.encoder.n_prototypes = *v;
  if (auto v = pick(flags.lambda, env.lambda)) r.config.ntxent.lambda_orth = *v;
  if (auto v = pick(flags.freeze_prototypes, env.freeze_prototypes)) r.config.freeze_prototypes = *v;
  r.out_root = pick(flags.out, env.out).value_or("runs");
  r.config.validate();
  return r;
}

fs::path run_directory(const RunConfig& cfg, const fs::path& out_root) {
  return out_root / (config_digest(cfg) + "-seed" + std::to_string(cfg.seed));
}

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData out;
  std::vector<Dataset> base;
  if (!cfg.data.pool.empty()) {
    for (std::size_t i = 0; i < cfg.data.pool.size(); ++i) {
      base.push_back(load_ucr_tsv(cfg.data.pool[i].path, cfg.data.pool[i].znorm, i));
    }
  } else if (cfg.data.synthetic) {
    Rng rng(mix_seed(cfg.seed, kSyntheticStream));
    base = make_synthetic_clusters(*cfg.data.synthetic, rng);
  } else {
    throw ConfigError("data: either data.pool or data.synthetic must be given");
  }
  for (std::size_t i = 0; i < base.size(); ++i) {
    Rng rng(mix_seed(mix_seed(cfg.seed, kStandardizeStream), i));
    base[i] = standardize(base[i], cfg.standardize, rng);
  }

  if (!cfg.data.finetune_train.empty() || !cfg.data.finetune_test.empty()) {
    if (cfg.data.finetune_train.empty() || cfg.data.finetune_test.empty()) {
      throw ConfigError("data: finetune_train and finetune_test must be given together");
    }
    Rng rng_a(mix_seed(mix_seed(cfg.seed, kStandardizeStream), 1000));
    Rng rng_b(mix_seed(mix_seed(cfg.seed, kStandardizeStream), 1001));
    out.finetune_train = standardize(load_ucr_tsv(cfg.data.finetune_train, cfg.data.finetune_znorm, 0), cfg.standardize, rng_a);
    out.finetune_test = standardize(load_ucr_tsv(cfg.data.finetune_test, cfg.data.finetune_znorm, 0), cfg.standardize, rng_b);
    out.finetune_test.split = Split::kTest;
  } else {
    Rng rng(mix_seed(cfg.seed, kSplitStream));
    auto [train, test] = split_dataset(base[0], 1.0 - cfg.data.test_fraction, rng);
    train.split = Split::kTrain;
    test.split = Split::kTest;
    base[0] = train;
    out.finetune_train = std::move(train);
    out.finetune_test = std::move(test);
  }

  if (cfg.data.shift_sigma >= 0.0) {
    Rng rng(mix_seed(cfg.seed, kShiftStream));
    Dataset shifted = make_shifted_variant(base[0], cfg.data.shift_sigma, rng, 1);
    base.resize(1);
    base.push_back(std::move(shifted));
  }

  if (cfg.encoder.norm_mode == NormMode::kDatasetIndexed && base.size() > cfg.encoder.n_prototypes) {
    throw ConfigError("encoder.n_prototypes: dataset-indexed mode needs one LayerNorm per pool dataset (" +
                      std::to_string(base.size()) + ")");
  }

  for (std::size_t i = 0; i < base.size(); ++i) {
    if (cfg.pretrain.val_fraction > 0.0) {
      Rng rng(mix_seed(mix_seed(cfg.seed, kSplitStream), i + 1));
      auto [train, val] = split_dataset(base[i], 1.0 - cfg.pretrain.val_fraction, rng);
      out.pool.push_back(std::move(train));
      out.pool_val.push_back(std::move(val));
    } else {
      out.pool.push_back(std::move(base[i]));
    }
  }
  return out;
}

PretrainOutcome run_pretrain(const RunConfig& cfg, const PreparedData& data, const fs::path& run_dir, bool resume,
                             std::size_t max_steps) {
  ensure_dir(run_dir);
  std::vector<const Dataset*> pool_refs, val_refs;
  for (const Dataset& d : data.pool) pool_refs.push_back(&d);
  for (const Dataset& d : data.pool_val) {
    if (d.size() > 0) val_refs.push_back(&d);
  }
  const SamplePool pool(pool_refs);

  const fs::path last_good = run_dir / "checkpoint.ckpt";
  const fs::path best_path = run_dir / "best.ckpt";
  const fs::path final_path = run_dir / "pretrain.ckpt";
  const fs::path trace_path = run_dir / "trace.csv";
  const fs::path assign_path = run_dir / "assignments.csv";

  PretrainConfig pcfg;
  pcfg.augment = cfg.augment;
  pcfg.ntxent = cfg.ntxent;
  pcfg.optim = cfg.optim;
  pcfg.epochs = cfg.pretrain.epochs;
  pcfg.batch_size = cfg.pretrain.batch_size;
  pcfg.freeze_prototypes = cfg.freeze_prototypes;
  pcfg.seed = cfg.seed;

  std::optional<LoadedCheckpoint> restored;
  if (resume && fs::exists(last_good)) restored = load_checkpoint(last_good);
  Rng init(mix_seed(cfg.seed, kInitStream));
  Encoder model = restored ? std::move(restored->model) : Encoder(cfg.encoder, init);
  Pretrainer trainer(model, pool, pcfg);
  TrainState best_state;
  if (restored) {
    trainer.resume(restored->state);
    best_state = restored->state;
    truncate_rows(trace_path, restored->state.step);
    truncate_rows(assign_path, restored->state.step * model.norm_layers().size());
  }

  PretrainOutcome outcome;
  outcome.param_count = counted_parameters(model);
  const bool append = restored.has_value();
  TraceWriter trace(trace_path.string(), append);
  std::FILE* assign = std::fopen(assign_path.string().c_str(), append ? "a" : "w");
  if (assign == nullptr) throw IoError("cannot open " + assign_path.string());
  if (!append) std::fputs("step,layer,counts\n", assign);

  auto save_epoch = [&]() {
    TrainState st = trainer.state();
    st.best_val = best_state.best_val;
    st.best_epoch = best_state.best_epoch;
    if (!val_refs.empty()) {
      const SamplePool val_pool(val_refs);
      const double v = trainer.validation_loss(val_pool, cfg.pretrain.batch_size);
      if (v < st.best_val) {
        st.best_val = v;
        st.best_epoch = st.epoch;
        save_checkpoint(best_path, model, st);
      }
    }
    best_state.best_val = st.best_val;
    best_state.best_epoch = st.best_epoch;
    save_checkpoint(last_good, model, st);
  };

  try {
    trainer.run([&](const StepLog& log) {
      trace.write(log);
      const auto layers = model.norm_layers();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        std::string counts;
        for (std::uint64_t c : layers[l]->bank().assignment_counts) {
          if (!counts.empty()) counts += ';';
          counts += std::to_string(c);
        }
        std::fprintf(assign, "%llu,%zu,%s\n", static_cast<unsigned long long>(log.step), l, counts.c_str());
      }
      outcome.final_loss = log.loss_total;
      outcome.steps = log.step;
      if (trainer.steps_per_epoch() > 0 && log.step % trainer.steps_per_epoch() == 0) save_epoch();
    }, max_steps);
  } catch (...) {
    std::fclose(assign);
    throw;
  }
  std::fclose(assign);
  if (!trainer.done()) {
    outcome.checkpoint = last_good;
    outcome.steps = trainer.steps_taken();
    outcome.best_val = best_state.best_val;
    return outcome;
  }

  TrainState final_state = trainer.state();
  final_state.best_val = best_state.best_val;
  final_state.best_epoch = best_state.best_epoch;
  save_checkpoint(final_path, model, final_state);
  outcome.checkpoint = final_path;
  outcome.best_val = best_state.best_val;
  outcome.steps = final_state.step;
  return outcome;
}

FinetuneOutcome run_finetune(const RunConfig& cfg, const PreparedData& data, const fs::path& checkpoint,
                             const fs::path& run_dir) {
  ensure_dir(run_dir);
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  FinetuneConfig fcfg;
  fcfg.optim = finetune_optim(cfg);
  fcfg.epochs = cfg.finetune.epochs;
  fcfg.batch_size = cfg.finetune.batch_size;
  fcfg.n_labeled = cfg.finetune.n_labeled;
  fcfg.min_per_class = cfg.finetune.min_per_class;
  fcfg.val_fraction = cfg.finetune.val_fraction;
  fcfg.seed = cfg.seed;
  FinetuneOutcome out;
  out.result = finetune(loaded.model, data.finetune_train, data.finetune_test, fcfg);
  TrainState st;
  st.stage = TrainState::Stage::kFinetune;
  st.prototypes_frozen = true;
  st.best_val = -out.result.best_val_accuracy;
  st.best_epoch = out.result.best_epoch;
  st.epoch = out.result.epochs_run;
  st.rng_state = Rng(cfg.seed).serialize();
  out.checkpoint = run_dir / "finetuned.ckpt";
  save_checkpoint(out.checkpoint, loaded.model, st);
  return out;
}

Json metrics_json(const Evaluation& ev) {
  return Json{{"accuracy", ev.metrics.accuracy},
              {"macro_f1", ev.metrics.macro_f1},
              {"per_class_f1", ev.metrics.per_class_f1},
              {"confusion", ev.metrics.confusion},
              {"n_samples", ev.metrics.total},
              {"gating_histogram", gating_json(ev.gating)}};
}

int cmd_generate(const RunConfig& cfg, const fs::path& out_dir) {
  try {
    if (!cfg.generate.synthetic && cfg.generate.source.empty()) {
      throw ConfigError("generate: set generate.synthetic and/or generate.source");
    }
    if (!cfg.generate.source.empty() && cfg.generate.sigmas.empty()) {
      throw ConfigError("generate.sigmas: a source dataset needs at least one noise level");
    }
    ensure_dir(out_dir);
    Json manifest = Json::array();
    if (cfg.generate.synthetic) {
      Rng rng(mix_seed(cfg.seed, kGenerateStream));
      for (const Dataset& ds : make_synthetic_clusters(*cfg.generate.synthetic, rng)) {
        const std::string file = ds.name + ".tsv";
        write_ucr_tsv(ds, out_dir / file);
        manifest.push_back({{"name", ds.name},
                            {"file", file},
                            {"dataset_id", ds.dataset_id},
                            {"sigma", nullptr},
                            {"n_samples", ds.size()},
                            {"n_classes", ds.n_classes}});
      }
    }
    if (!cfg.generate.source.empty()) {
      const Dataset source = load_ucr_tsv(cfg.generate.source, cfg.generate.source_znorm, 0);
      for (std::size_t i = 0; i < cfg.generate.sigmas.size(); ++i) {
        const double sigma = cfg.generate.sigmas[i];
        Rng rng(mix_seed(mix_seed(cfg.seed, kShiftStream), i));
        Dataset variant = make_shifted_variant(source, sigma, rng, i + 1);
        const std::string stem = fs::path(cfg.generate.source).stem().string();
        variant.name = stem + variant.name.substr(source.name.size());
        const std::string file = variant.name + ".tsv";
        write_ucr_tsv(variant, out_dir / file);
        manifest.push_back({{"name", variant.name},
                            {"file", file},
                            {"dataset_id", variant.dataset_id},
                            {"sigma", sigma},
                            {"n_samples", variant.size()},
                            {"n_classes", variant.n_classes}});
      }
    }
    write_json(out_dir / "manifest.json", Json{{"seed", cfg.seed}, {"datasets", manifest}});
    return 0;
  } catch (const ConfigError& e) {
    return report(e, 2);
  } catch (const std::exception& e) {
    return report(e, 3);
  }
}

int cmd_pretrain(const RunConfig& cfg, const fs::path& out_root, bool resume) {
  fs::path dir;
  std::optional<StatusFile> status;
  try {
    cfg.validate();
    dir = run_directory(cfg, out_root);
    ensure_dir(dir);
    write_json(dir / "config.json", to_json(cfg));
    status.emplace(dir, "pretrain");
    const PreparedData data = prepare_data(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const PretrainOutcome out = run_pretrain(cfg, data, dir, resume);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    LoadedCheckpoint final = load_checkpoint(out.checkpoint);
    Json gating = Json::object();
    for (const Dataset& ds : data.pool) gating[ds.name] = gating_json(gating_histogram(final.model, ds, 64));
    Json counts = Json::array();
    for (const ProtoNormLayer* layer : final.model.norm_layers()) counts.push_back(layer->bank().assignment_counts);
    Json metrics{{"steps", out.steps},
                 {"final_loss", out.final_loss},
                 {"param_count", out.param_count},
                 {"runtime_seconds", seconds},
                 {"assignment_counts", counts},
                 {"gating_histogram", gating}};
    if (std::isfinite(out.best_val)) metrics["best_val_loss"] = out.best_val;
    write_json(dir / "pretrain_metrics.json", metrics);
    for (const char* f : {"config.json", "trace.csv", "assignments.csv", "checkpoint.ckpt", "pretrain.ckpt",
                          "pretrain_metrics.json"}) {
      status->add_output(f);
    }
    if (fs::exists(dir / "best.ckpt")) status->add_output("best.ckpt");
    status->completed();
    std::cout << dir.string() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    if (status) status->failed(e.what());
    return report(e, 2);
  } catch (const std::exception& e) {
    if (status) status->failed(e.what());
    return report(e, 3);
  }
}

int cmd_finetune(const RunConfig& cfg, const fs::path& out_root, const std::optional<fs::path>& checkpoint) {
  std::optional<StatusFile> status;
  try {
    cfg.validate();
    const fs::path dir = run_directory(cfg, out_root);
    ensure_dir(dir);
    write_json(dir / "config.json", to_json(cfg));
    status.emplace(dir, "finetune");
    const fs::path ckpt = checkpoint.value_or(dir / "pretrain.ckpt");
    if (!fs::exists(ckpt)) throw IoError("checkpoint " + ckpt.string() + " does not exist (run pretrain first)");
    const PreparedData data = prepare_data(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const FinetuneOutcome out = run_finetune(cfg, data, ckpt, dir);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Json metrics = metrics_json(out.result.test);
    metrics["best_val_accuracy"] = out.result.best_val_accuracy;
    metrics["best_epoch"] = out.result.best_epoch;
    metrics["epochs_run"] = out.result.epochs_run;
    metrics["n_train"] = out.result.n_train;
    metrics["n_val"] = out.result.n_val;
    metrics["train_loss"] = out.result.train_loss;
    metrics["prototypes_unchanged"] = out.result.prototypes_unchanged;
    metrics["runtime_seconds"] = seconds;
    write_json(dir / "finetune_metrics.json", metrics);
    status->add_output("finetuned.ckpt");
    status->add_output("finetune_metrics.json");
    status->completed();
    std::cout << dir.string() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    if (status) status->failed(e.what());
    return report(e, 2);
  } catch (const std::exception& e) {
    if (status) status->failed(e.what());
    return report(e, 3);
  }
}

int cmd_eval(const RunConfig& cfg, const fs::path& out_root, const std::optional<fs::path>& model_path) {
  std::optional<StatusFile> status;
  try {
    cfg.validate();
    const fs::path dir = run_directory(cfg, out_root);
    ensure_dir(dir);
    write_json(dir / "config.json", to_json(cfg));
    status.emplace(dir, "eval");
    const fs::path path = model_path.value_or(dir / "finetuned.ckpt");
    LoadedCheckpoint loaded = load_checkpoint(path);
    if (!loaded.model.has_classifier()) throw ContractError("model " + path.string() + " has no classifier head");
    const PreparedData data = prepare_data(cfg);
    if (data.finetune_test.n_classes != loaded.model.n_classes()) {
      throw ContractError("test set has " + std::to_string(data.finetune_test.n_classes) +
                          " classes but the model head has " + std::to_string(loaded.model.n_classes()));
    }
    const Evaluation ev = evaluate(loaded.model, data.finetune_test, cfg.finetune.batch_size);
    write_json(dir / "eval_metrics.json", metrics_json(ev));
    status->add_output("eval_metrics.json");
    status->completed();
    std::cout << dir.string() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    if (status) status->failed(e.what());
    return report(e, 2);
  } catch (const std::exception& e) {
    if (status) status->failed(e.what());
    return report(e, 3);
  }
}

int cmd_sweep(const RunConfig& cfg, const fs::path& out_root) {
  std::optional<StatusFile> status;
  try {
    cfg.validate();
    if (cfg.sweep.axis.empty() || cfg.sweep.values.empty()) {
      throw ConfigError("sweep: sweep.axis and sweep.values are required");
    }
    const fs::path dir = run_directory(cfg, out_root);
    ensure_dir(dir);
    write_json(dir / "config.json", to_json(cfg));
    status.emplace(dir, "sweep");
    const fs::path table = dir / "sweep.csv";
    std::FILE* f = std::fopen(table.string().c_str(), "w");
    if (f == nullptr) throw IoError("cannot write " + table.string());
    std::fputs("axis,value,accuracy,macro_f1,param_count,runtime_seconds,status\n", f);
    std::size_t failures = 0;
    for (double value : cfg.sweep.values) {
      RunConfig leg = cfg;
      leg.sweep = SweepSettings{};
      if (cfg.sweep.axis == "n_prototypes") {
        leg.encoder.n_prototypes = static_cast<std::size_t>(value);
      } else if (cfg.sweep.axis == "sigma") {
        leg.data.shift_sigma = value;
      } else {
        leg.ntxent.lambda_orth = value;
      }
      const auto t0 = std::chrono::steady_clock::now();
      double acc = 0.0, f1 = 0.0;
      std::size_t params = 0;
      std::string leg_status = "ok";
      try {
        leg.validate();
        params = count_parameters(leg.encoder).total();
        const fs::path leg_dir = run_directory(leg, dir);
        ensure_dir(leg_dir);
        write_json(leg_dir / "config.json", to_json(leg));
        const PreparedData data = prepare_data(leg);
        const PretrainOutcome pre = run_pretrain(leg, data, leg_dir);
        params = pre.param_count;
        const FinetuneOutcome fin = run_finetune(leg, data, pre.checkpoint, leg_dir);
        acc = fin.result.test.metrics.accuracy;
        f1 = fin.result.test.metrics.macro_f1;
        write_json(leg_dir / "finetune_metrics.json", metrics_json(fin.result.test));
      } catch (const std::exception& e) {
        ++failures;
        leg_status = std::string("failed: ") + e.what();
        std::replace(leg_status.begin(), leg_status.end(), ',', ';');
        std::replace(leg_status.begin(), leg_status.end(), '\n', ' ');
      }
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(f, "%s,%.17g,%.17g,%.17g,%zu,%.3f,%s\n", cfg.sweep.axis.c_str(), value, acc, f1, params, seconds,
                   leg_status.c_str());
      std::fflush(f);
    }
    std::fclose(f);
    status->add_output("sweep.csv");
    if (failures > 0) {
      status->failed(std::to_string(failures) + " sweep leg(s) failed; see sweep.csv");
    } else {
      status->completed();
    }
    std::cout << dir.string() << '\n';
    return failures > 0 ? 3 : 0;
  } catch (const ConfigError& e) {
    if (status) status->failed(e.what());
    return report(e, 2);
  } catch (const std::exception& e) {
    if (status) status->failed(e.what());
    return report(e, 3);
  }
}

}  // namespace protonorm::cli
