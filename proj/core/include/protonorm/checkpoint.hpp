// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoints: model weights, prototype banks with their
// EMA bookkeeping, optimizer moments, loop counters, and the RNG state. Every
// section carries a CRC32 so truncation and bit rot are detected on load.
//
// Layout (little endian):
//   "PNRMCKPT" | u32 version | u64 config digest | u32 n_sections
//   n_sections x { u32 len, name, u64 offset, u64 size, u32 crc32 }
//   u32 crc32 of everything above
//   section payloads

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "protonorm/encoder.hpp"
#include "protonorm/optim.hpp"

namespace protonorm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainState {
  enum class Stage : std::uint8_t { kPretrain = 0, kFinetune = 1 };

  Stage stage = Stage::kPretrain;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch_in_epoch = 0;
  bool prototypes_frozen = false;
  double best_val = std::numeric_limits<double>::infinity();
  std::uint64_t best_epoch = 0;
  std::uint64_t epochs_since_best = 0;
  std::string rng_state;  // Rng::serialize()

  std::uint64_t optimizer_steps = 0;
  std::map<std::string, Moments> moments;
};

struct LoadedCheckpoint {
  Encoder model;
  TrainState state;
};

std::vector<std::uint8_t> serialize_checkpoint(const Encoder& model, const TrainState& state);
LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Encoder& model, const TrainState& state);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protonorm
