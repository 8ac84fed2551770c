// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations behind the protonorm executable. They live in a
// library so tests can drive them without spawning processes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protonorm/config.hpp"
#include "protonorm/data.hpp"
#include "protonorm/trainer.hpp"

namespace protonorm::cli {

namespace fs = std::filesystem;

// Values given on the command line; unset fields fall through to the
// environment and then to the config file.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> norm_mode;
  std::optional<std::size_t> prototypes;
  std::optional<double> lambda;
  std::optional<bool> freeze_prototypes;
};

// Reads PROTONORM_CONFIG, PROTONORM_SEED, PROTONORM_OUT, PROTONORM_NORM_MODE,
// PROTONORM_PROTOTYPES, PROTONORM_LAMBDA and PROTONORM_FREEZE_PROTOTYPES
// through `getenv`.
Overrides environment_overrides(const std::function<const char*(const char*)>& getenv);

bool parse_bool(const std::string& text);

struct Resolved {
  RunConfig config;
  fs::path out_root;
};

// Precedence flag > env > file > built-in desk defaults. The result is
// validated.
Resolved resolve(const Overrides& flags, const Overrides& env);

// <out_root>/<config digest>-seed<seed>
fs::path run_directory(const RunConfig& cfg, const fs::path& out_root);

struct PreparedData {
  std::vector<Dataset> pool;      // pretraining datasets, ids 0..k-1
  std::vector<Dataset> pool_val;  // held-out part of each pool dataset
  Dataset finetune_train;
  Dataset finetune_test;
};

// Deterministic in (config, seed). Fine-tuning test samples never enter the
// pretraining pool.
PreparedData prepare_data(const RunConfig& cfg);

struct PretrainOutcome {
  fs::path checkpoint;
  std::uint64_t steps = 0;
  double final_loss = 0.0;
  double best_val = 0.0;
  std::size_t param_count = 0;
};
// `max_steps` stops early (the run can later be resumed from its last epoch
// checkpoint); pretrain.ckpt is only written once every epoch has run.
PretrainOutcome run_pretrain(const RunConfig& cfg, const PreparedData& data, const fs::path& run_dir,
                             bool resume = false, std::size_t max_steps = std::numeric_limits<std::size_t>::max());

struct FinetuneOutcome {
  fs::path checkpoint;
  FinetuneResult result;
};
FinetuneOutcome run_finetune(const RunConfig& cfg, const PreparedData& data, const fs::path& checkpoint,
                             const fs::path& run_dir);

Json metrics_json(const Evaluation& ev);

// Each returns the process exit code: 0 success, 2 invalid configuration,
// 3 run failure (details in the run directory's status.json).
int cmd_generate(const RunConfig& cfg, const fs::path& out_dir);
int cmd_pretrain(const RunConfig& cfg, const fs::path& out_root, bool resume = false);
int cmd_finetune(const RunConfig& cfg, const fs::path& out_root, const std::optional<fs::path>& checkpoint);
int cmd_eval(const RunConfig& cfg, const fs::path& out_root, const std::optional<fs::path>& model);
int cmd_sweep(const RunConfig& cfg, const fs::path& out_root);

}  // namespace protonorm::cli
