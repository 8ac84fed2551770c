// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace protonorm {

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  // confusion[truth][prediction]
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t total = 0;
};

// A class with no support and no predictions scores F1 = 0 and still counts
// toward the macro mean.
Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion);

Metrics compute_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                        std::size_t n_classes);

// Additive merge of confusion matrices, e.g. from disjoint test shards.
Metrics merge_metrics(const Metrics& a, const Metrics& b);

}  // namespace protonorm
