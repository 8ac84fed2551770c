// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small models and datasets shared by the training tests and the acceptance
// runner.

#pragma once

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "protonorm/data.hpp"
#include "protonorm/encoder.hpp"
#include "protonorm/trainer.hpp"

namespace protonorm::testing {

inline EncoderConfig small_encoder(NormMode mode = NormMode::kProtoGated, std::size_t n_prototypes = 2) {
  EncoderConfig c;
  c.input_len = 32;
  c.patch_size = 8;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.n_prototypes = n_prototypes;
  c.dropout = 0.1;
  c.norm_mode = mode;
  return c;
}

inline std::vector<Dataset> offset_pool(std::size_t n_per, std::size_t length, std::uint64_t seed,
                                        double offset = 5.0) {
  SyntheticSpec spec;
  spec.k_datasets = 2;
  spec.n_per = n_per;
  spec.length = length;
  spec.offsets = {-offset, offset};
  Rng rng(seed);
  return make_synthetic_clusters(spec, rng);
}

inline PretrainConfig small_pretrain(std::uint64_t seed = 1) {
  PretrainConfig p;
  p.epochs = 2;
  p.batch_size = 8;
  p.optim.warmup_steps = 3;
  p.optim.total_steps = 0;
  p.seed = seed;
  return p;
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

inline bool same_parameters(const Encoder& a, const Encoder& b, bool skip_prototypes = false) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  std::size_t j = 0;
  for (const NamedTensor& p : pa) {
    if (skip_prototypes && p.name.find("prototypes") != std::string::npos) continue;
    while (j < pb.size() && skip_prototypes && pb[j].name.find("prototypes") != std::string::npos) ++j;
    if (j >= pb.size() || pb[j].name != p.name) return false;
    if (!bitwise_equal(p.tensor.data(), pb[j].tensor.data())) return false;
    ++j;
  }
  return true;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace protonorm::testing
