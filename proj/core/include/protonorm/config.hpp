// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: every tunable of the pipeline in one structured,
// validated object with a JSON representation. Parsing rejects unknown keys
// at every level.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "protonorm/data.hpp"
#include "protonorm/encoder.hpp"
#include "protonorm/optim.hpp"
#include "protonorm/ssl.hpp"

namespace protonorm {

using Json = nlohmann::ordered_json;

struct DataSource {
  std::string path;
  bool znorm = true;
};

struct DataConfig {
  // Pretraining pool read from UCR-format files ...
  std::vector<DataSource> pool;
  // ... or generated when no files are listed.
  std::optional<SyntheticSpec> synthetic;
  // When >= 0, the pool becomes {dataset 0, dataset 0 + N(0, sigma^2)}.
  double shift_sigma = -1.0;

  // Fine-tuning data. Empty paths: dataset 0 of the pool split into
  // train/test by test_fraction.
  std::string finetune_train;
  std::string finetune_test;
  bool finetune_znorm = true;
  double test_fraction = 0.3;
};

struct PretrainSettings {
  std::size_t epochs = 5;
  std::size_t batch_size = 256;
  double val_fraction = 0.2;
};

struct FinetuneSettings {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::size_t n_labeled = 100;  // 0 = all training samples
  std::size_t min_per_class = 5;
  double val_fraction = 0.2;
};

struct GenerateSettings {
  std::optional<SyntheticSpec> synthetic;
  std::string source;  // UCR file whose noisy variants are written
  bool source_znorm = true;
  std::vector<double> sigmas;
};

struct SweepSettings {
  std::string axis;  // n_prototypes | sigma | lambda
  std::vector<double> values;
};

struct RunConfig {
  EncoderConfig encoder;
  AugmentConfig augment;
  NtXentConfig ntxent;
  OptimConfig optim;
  StandardizeSpec standardize;
  DataConfig data;
  PretrainSettings pretrain;
  FinetuneSettings finetune;
  GenerateSettings generate;
  SweepSettings sweep;
  std::uint64_t seed = 0;
  bool freeze_prototypes = false;

  // Throws ConfigError with the dotted field name.
  void validate() const;
};

// Defaults sized for single-core desk runs.
RunConfig desk_config();

Json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const Json& j);

Json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const Json& j, const std::string& where);

Json to_json(const RunConfig& cfg);
// Missing keys keep their defaults from `base`; unknown keys are errors.
RunConfig run_config_from_json(const Json& j, const RunConfig& base = RunConfig{});
RunConfig load_run_config(const std::string& path, const RunConfig& base = RunConfig{});

std::uint64_t fnv1a64(std::string_view bytes);
// 16 hex digits over the canonical JSON of the resolved configuration.
std::string config_digest(const RunConfig& cfg);

}  // namespace protonorm
