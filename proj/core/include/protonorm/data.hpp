// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset loading, length/channel standardization, synthetic generators, and
// batching over a pool of datasets.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protonorm/rng.hpp"
#include "protonorm/tensor.hpp"

namespace protonorm {

enum class Split { kTrain, kVal, kTest };

struct Sample {
  std::size_t channels = 1;
  std::size_t length = 0;
  std::vector<double> values;  // [channels, length] row-major
  std::size_t label = 0;
};

struct Dataset {
  std::string name;
  std::size_t dataset_id = 0;
  Split split = Split::kTrain;
  std::size_t n_classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

// Per-sample z-normalization; a (near) constant series becomes all zeros.
void znormalize(std::span<double> series);

// Reads the UCR text layout: one sample per line, an integer class label
// followed by values separated by tabs, commas, or spaces (detected per
// file). Labels are remapped to a dense 0-based index in ascending order.
// Each series is z-normalized when `znorm` is set.
Dataset load_ucr_tsv(const std::filesystem::path& path, bool znorm = true, std::size_t dataset_id = 0);

// Writes univariate samples in the same layout (tab separated, dense labels,
// round-trip precision).
void write_ucr_tsv(const Dataset& ds, const std::filesystem::path& path);

struct StandardizeSpec {
  std::size_t target_len = 128;
  std::size_t target_channels = 1;
  double replication_noise_std = 0.01;

  void validate() const;
};

// Linear interpolation of `series` (length L) at positions k * (L - 1) / (n - 1).
std::vector<double> resample_linear(std::span<const double> series, std::size_t n);

// Length: linear-interpolation downsample when longer, tail zero padding when
// shorter. Channels: cyclic replication up to the target count with Gaussian
// noise added to replicated copies only. Throws ConfigError when the sample
// has more channels than the target.
Sample standardize(const Sample& sample, const StandardizeSpec& spec, Rng& rng);
Dataset standardize(const Dataset& ds, const StandardizeSpec& spec, Rng& rng);

// Every series perturbed by i.i.d. N(0, noise_std^2); labels preserved.
Dataset make_shifted_variant(const Dataset& ds, double noise_std, Rng& rng, std::size_t new_dataset_id);

struct ClassRule {
  // Two classes: sinusoid frequency (cycles per series) below or above the
  // threshold, separated by a margin on each side.
  double threshold = 4.0;
  double margin = 0.5;
  double band_lo = 1.0;
  double band_hi = 8.0;
};

struct SyntheticSpec {
  std::size_t k_datasets = 2;
  std::size_t n_per = 200;
  std::size_t length = 128;
  std::vector<double> offsets;  // empty: evenly spaced over [-5, 5]
  std::vector<double> scales;   // empty: 1 + 0.5 * j
  double band_stretch = 0.25;   // dataset j frequencies scaled by 1 + stretch * j
  double noise_std = 0.1;
  ClassRule rule;
};

// Sinusoid-plus-noise datasets with dataset-specific offset, scale, and
// frequency band. Labels alternate 0/1 so every dataset is balanced.
std::vector<Dataset> make_synthetic_clusters(const SyntheticSpec& spec, Rng& rng);

// Shuffled split into (first, second) with floor(fraction * n) samples in the
// first part.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double first_fraction, Rng& rng);

struct Batch {
  Tensor series;  // [B, C, L]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> dataset_ids;
  std::vector<std::size_t> pool_indices;

  std::size_t size() const { return labels.size(); }
};

// Flat view over the union of samples in several datasets.
class SamplePool {
 public:
  explicit SamplePool(std::vector<const Dataset*> datasets);

  std::size_t size() const { return refs_.size(); }
  std::size_t channels() const { return channels_; }
  std::size_t length() const { return length_; }

  const Sample& sample(std::size_t i) const;
  std::size_t dataset_id(std::size_t i) const;

  Batch gather(std::span<const std::size_t> indices) const;

 private:
  struct Ref {
    const Dataset* dataset;
    std::size_t index;
  };
  std::vector<Ref> refs_;
  std::size_t channels_ = 0;
  std::size_t length_ = 0;
};

// Uniform permutation of [0, n).
std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng);

// Consecutive batches over `order`; the last batch may be partial.
class BatchIterator {
 public:
  BatchIterator(const SamplePool& pool, std::size_t batch_size, std::vector<std::size_t> order,
                std::size_t start_batch = 0);

  std::optional<Batch> next();
  std::size_t batches_total() const;
  std::size_t position() const { return cursor_ / batch_size_; }

 private:
  const SamplePool* pool_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_;
};

}  // namespace protonorm
