// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/metrics.hpp"

#include "protonorm/errors.hpp"

namespace protonorm {

Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  const std::size_t k = confusion.size();
  Metrics m;
  m.per_class_f1.assign(k, 0.0);
  std::size_t correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (confusion[c].size() != k) throw ShapeError("confusion matrix must be square");
    for (std::size_t p = 0; p < k; ++p) m.total += confusion[c][p];
    correct += confusion[c][c];
  }
  if (m.total == 0) throw InputError("metrics over an empty evaluation set");
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t tp = confusion[c][c];
    std::size_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += confusion[o][c];
      fn += confusion[c][o];
    }
    const std::size_t denom = 2 * tp + fp + fn;
    m.per_class_f1[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    m.macro_f1 += m.per_class_f1[c];
  }
  m.macro_f1 /= static_cast<double>(k);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.total);
  m.confusion = std::move(confusion);
  return m;
}

Metrics compute_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                        std::size_t n_classes) {
  if (truth.size() != predicted.size()) throw ShapeError("truth and prediction counts differ");
  if (truth.empty()) throw InputError("metrics over an empty evaluation set");
  std::vector<std::vector<std::size_t>> confusion(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= n_classes || predicted[i] >= n_classes) throw InputError("class index out of range");
    ++confusion[truth[i]][predicted[i]];
  }
  return metrics_from_confusion(std::move(confusion));
}

Metrics merge_metrics(const Metrics& a, const Metrics& b) {
  if (a.confusion.size() != b.confusion.size()) throw ShapeError("cannot merge metrics over different class counts");
  auto merged = a.confusion;
  for (std::size_t c = 0; c < merged.size(); ++c)
    for (std::size_t p = 0; p < merged.size(); ++p) merged[c][p] += b.confusion[c][p];
  return metrics_from_confusion(std::move(merged));
}

}  // namespace protonorm
