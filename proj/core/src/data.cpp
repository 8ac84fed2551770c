// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "protonorm/errors.hpp"

namespace protonorm {

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  if (delim == ' ') {
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
  }
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, delim)) {
    const auto b = field.find_first_not_of(" \r");
    const auto e = field.find_last_not_of(" \r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  return out;
}

double parse_double(const std::string& text, std::size_t line) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) throw ParseError("invalid number '" + text + "'", line);
  return v;
}

std::string format_sigma(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

}  // namespace

void znormalize(std::span<double> series) {
  if (series.empty()) return;
  const double n = static_cast<double>(series.size());
  double s = 0.0;
  for (double v : series) s += v;
  double mean = s / n;
  double c = 0.0;
  for (double v : series) c += v - mean;
  mean += c / n;
  double ss = 0.0;
  for (double v : series) ss += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(ss / n), 1e-8);
  for (double& v : series) v = (v - mean) / sd;
}

Dataset load_ucr_tsv(const std::filesystem::path& path, bool znorm, std::size_t dataset_id) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  struct Row {
    long long label;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  std::optional<char> delim;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!delim) delim = line.find('\t') != std::string::npos ? '\t' : line.find(',') != std::string::npos ? ',' : ' ';
    auto fields = split_fields(line, *delim);
    if (fields.size() < 2) throw ParseError("expected a label and at least one value", line_no);
    const double label = parse_double(fields[0], line_no);
    if (label != std::floor(label)) throw ParseError("class label must be an integer", line_no);
    Row row{static_cast<long long>(label), {}};
    row.values.reserve(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) row.values.push_back(parse_double(fields[i], line_no));
    if (width == 0) {
      width = row.values.size();
    } else if (row.values.size() != width) {
      throw ParseError("ragged row: " + std::to_string(row.values.size()) + " values, expected " +
                           std::to_string(width),
                       line_no);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("no samples in " + path.string());

  std::map<long long, std::size_t> remap;
  for (const Row& r : rows) remap.emplace(r.label, 0);
  std::size_t next = 0;
  for (auto& [label, index] : remap) index = next++;

  Dataset ds;
  ds.name = path.stem().string();
  ds.dataset_id = dataset_id;
  ds.n_classes = remap.size();
  ds.samples.reserve(rows.size());
  for (Row& r : rows) {
    Sample s{1, width, std::move(r.values), remap.at(r.label)};
    if (znorm) znormalize(s.values);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void write_ucr_tsv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (const Sample& s : ds.samples) {
    if (s.channels != 1) throw InputError("UCR text format holds univariate series only");
    out << s.label;
    for (double v : s.values) out << '\t' << v;
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void StandardizeSpec::validate() const {
  if (target_len == 0) throw ConfigError("standardize.target_len must be positive");
  if (target_channels == 0) throw ConfigError("standardize.target_channels must be positive");
  if (!(replication_noise_std >= 0.0)) throw ConfigError("standardize.replication_noise_std must be non-negative");
}

std::vector<double> resample_linear(std::span<const double> series, std::size_t n) {
  std::vector<double> out(n);
  const std::size_t L = series.size();
  if (L == 0) throw InputError("cannot resample an empty series");
  if (n == 1 || L == 1) {
    std::fill(out.begin(), out.end(), series[0]);
    return out;
  }
  const double step = static_cast<double>(L - 1) / static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k) {
    const double pos = static_cast<double>(k) * step;
    const auto lo = std::min(static_cast<std::size_t>(pos), L - 1);
    const std::size_t hi = std::min(lo + 1, L - 1);
    const double frac = pos - static_cast<double>(lo);
    out[k] = series[lo] + frac * (series[hi] - series[lo]);
  }
  return out;
}

Sample standardize(const Sample& sample, const StandardizeSpec& spec, Rng& rng) {
  spec.validate();
  if (sample.channels > spec.target_channels) {
    throw ConfigError("sample has " + std::to_string(sample.channels) + " channels but target_channels is " +
                      std::to_string(spec.target_channels) + "; channel dropping is not supported");
  }
  const std::size_t L = sample.length;
  const std::size_t target = spec.target_len;
  std::vector<std::vector<double>> channels;
  for (std::size_t c = 0; c < sample.channels; ++c) {
    std::span<const double> src(sample.values.data() + c * L, L);
    if (L > target) {
      channels.push_back(resample_linear(src, target));
    } else {
      std::vector<double> padded(target, 0.0);
      std::copy(src.begin(), src.end(), padded.begin());
      channels.push_back(std::move(padded));
    }
  }
  Sample out{spec.target_channels, target, {}, sample.label};
  out.values.reserve(spec.target_channels * target);
  for (std::size_t c = 0; c < spec.target_channels; ++c) {
    const auto& src = channels[c % sample.channels];
    if (c < sample.channels || spec.replication_noise_std == 0.0) {
      out.values.insert(out.values.end(), src.begin(), src.end());
    } else {
      for (double v : src) out.values.push_back(v + rng.normal(0.0, spec.replication_noise_std));
    }
  }
  return out;
}

Dataset standardize(const Dataset& ds, const StandardizeSpec& spec, Rng& rng) {
  Dataset out = ds;
  for (Sample& s : out.samples) s = standardize(s, spec, rng);
  return out;
}

Dataset make_shifted_variant(const Dataset& ds, double noise_std, Rng& rng, std::size_t new_dataset_id) {
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  Dataset out = ds;
  out.dataset_id = new_dataset_id;
  out.name = ds.name + "_sigma" + format_sigma(noise_std);
  if (noise_std > 0.0) {
    for (Sample& s : out.samples)
      for (double& v : s.values) v += rng.normal(0.0, noise_std);
  }
  return out;
}

std::vector<Dataset> make_synthetic_clusters(const SyntheticSpec& spec, Rng& rng) {
  if (spec.k_datasets == 0) throw ConfigError("synthetic.k_datasets must be at least 1");
  if (spec.length == 0) throw ConfigError("synthetic.length must be positive");
  const ClassRule& rule = spec.rule;
  if (!(rule.band_lo < rule.threshold - rule.margin && rule.threshold + rule.margin < rule.band_hi)) {
    throw ConfigError("synthetic class rule bands must straddle the threshold");
  }
  const std::size_t k = spec.k_datasets;
  std::vector<Dataset> out;
  for (std::size_t j = 0; j < k; ++j) {
    double offset = 0.0;
    if (!spec.offsets.empty()) {
      offset = spec.offsets.at(j);
    } else if (k > 1) {
      offset = -5.0 + 10.0 * static_cast<double>(j) / static_cast<double>(k - 1);
    }
    const double scale = spec.scales.empty() ? 1.0 + 0.5 * static_cast<double>(j) : spec.scales.at(j);
    const double stretch = 1.0 + spec.band_stretch * static_cast<double>(j);

    Dataset ds;
    ds.name = "synthetic" + std::to_string(j);
    ds.dataset_id = j;
    ds.n_classes = 2;
    for (std::size_t i = 0; i < spec.n_per; ++i) {
      const std::size_t label = i % 2;
      const double lo = label == 0 ? rule.band_lo : rule.threshold + rule.margin;
      const double hi = label == 0 ? rule.threshold - rule.margin : rule.band_hi;
      const double freq = rng.uniform(lo, hi) * stretch;
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      Sample s{1, spec.length, std::vector<double>(spec.length), label};
      for (std::size_t t = 0; t < spec.length; ++t) {
        const double angle =
            2.0 * std::numbers::pi * freq * static_cast<double>(t) / static_cast<double>(spec.length) + phase;
        double v = offset + scale * std::sin(angle);
        if (spec.noise_std > 0.0) v += rng.normal(0.0, spec.noise_std);
        s.values[t] = v;
      }
      ds.samples.push_back(std::move(s));
    }
    out.push_back(std::move(ds));
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double first_fraction, Rng& rng) {
  if (!(first_fraction >= 0.0 && first_fraction <= 1.0)) throw ConfigError("split fraction must be in [0, 1]");
  const auto order = shuffled_order(ds.size(), rng);
  const auto n_first = static_cast<std::size_t>(std::floor(first_fraction * static_cast<double>(ds.size())));
  Dataset a = ds, b = ds;
  a.samples.clear();
  b.samples.clear();
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_first ? a : b).samples.push_back(ds.samples[order[i]]);
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------

SamplePool::SamplePool(std::vector<const Dataset*> datasets) {
  for (const Dataset* ds : datasets) {
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const Sample& s = ds->samples[i];
      if (refs_.empty()) {
        channels_ = s.channels;
        length_ = s.length;
      } else if (s.channels != channels_ || s.length != length_) {
        throw InputError("pool mixes sample shapes; standardize datasets first (" + ds->name + ")");
      }
      if (s.values.size() != s.channels * s.length) throw InputError("sample size does not match its shape");
      refs_.push_back({ds, i});
    }
  }
  if (refs_.empty()) throw InputError("empty sample pool");
}

const Sample& SamplePool::sample(std::size_t i) const { return refs_.at(i).dataset->samples[refs_.at(i).index]; }

std::size_t SamplePool::dataset_id(std::size_t i) const { return refs_.at(i).dataset->dataset_id; }

Batch SamplePool::gather(std::span<const std::size_t> indices) const {
  Batch batch;
  const std::size_t per = channels_ * length_;
  std::vector<double> data;
  data.reserve(indices.size() * per);
  for (std::size_t idx : indices) {
    const Sample& s = sample(idx);
    data.insert(data.end(), s.values.begin(), s.values.end());
    batch.labels.push_back(s.label);
    batch.dataset_ids.push_back(dataset_id(idx));
    batch.pool_indices.push_back(idx);
  }
  batch.series = Tensor({indices.size(), channels_, length_}, std::move(data));
  return batch;
}

std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // Fisher-Yates with our own index draws; std::shuffle's algorithm is
  // implementation-defined.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

BatchIterator::BatchIterator(const SamplePool& pool, std::size_t batch_size, std::vector<std::size_t> order,
                             std::size_t start_batch)
    : pool_(&pool), batch_size_(batch_size), order_(std::move(order)), cursor_(start_batch * batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (order_.empty()) throw InputError("empty batch order");
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
  Batch b = pool_->gather(std::span<const std::size_t>(order_.data() + cursor_, end - cursor_));
  cursor_ = end;
  return b;
}

std::size_t BatchIterator::batches_total() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

}  // namespace protonorm
