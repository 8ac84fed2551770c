// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "protonorm/config.hpp"
#include "protonorm/errors.hpp"

namespace protonorm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'N', 'R', 'M', 'C', 'K', 'P', 'T'};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void put_doubles(std::span<const double> v) {
    put<std::uint64_t>(v.size());
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    buf_.insert(buf_.end(), p, p + v.size() * sizeof(double));
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> get_doubles() {
    const auto n = get<std::uint64_t>();
    if (n > (bytes_.size() - pos_) / sizeof(double)) truncated();
    std::vector<double> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw IntegrityError("checkpoint section '" + what_ + "' has trailing bytes");
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) truncated();
  }
  [[noreturn]] void truncated() const { throw IntegrityError("checkpoint " + what_ + " is truncated"); }

  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> config_section(const Encoder& model) {
  Json j{{"encoder", to_json(model.config())},
         {"n_classes", model.n_classes()},
         {"has_projection_head", model.has_projection_head()}};
  const std::string text = j.dump();
  return {text.begin(), text.end()};
}

std::vector<std::uint8_t> params_section(const Encoder& model) {
  Writer w;
  const auto params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const NamedTensor& p : params) {
    w.put_string(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.put<std::uint64_t>(d);
    w.put_doubles(p.tensor.data());
  }
  return std::move(w.bytes());
}

std::vector<std::uint8_t> banks_section(const Encoder& model) {
  Writer w;
  const auto layers = model.norm_layers();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(layers.size()));
  for (const ProtoNormLayer* layer : layers) {
    const PrototypeBank& bank = layer->bank();
    w.put<double>(bank.ema_alpha);
    w.put<std::uint8_t>(bank.frozen ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bank.assignment_counts.size()));
    for (std::uint64_t c : bank.assignment_counts) w.put<std::uint64_t>(c);
    w.put_doubles(bank.prototypes.data());
  }
  return std::move(w.bytes());
}

std::vector<std::uint8_t> optimizer_section(const TrainState& s) {
  Writer w;
  w.put<std::uint64_t>(s.optimizer_steps);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.moments.size()));
  for (const auto& [name, m] : s.moments) {
    w.put_string(name);
    w.put_doubles(m.first);
    w.put_doubles(m.second);
  }
  return std::move(w.bytes());
}

std::vector<std::uint8_t> state_section(const TrainState& s) {
  Writer w;
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.stage));
  w.put<std::uint64_t>(s.step);
  w.put<std::uint64_t>(s.epoch);
  w.put<std::uint64_t>(s.batch_in_epoch);
  w.put<std::uint8_t>(s.prototypes_frozen ? 1 : 0);
  w.put<double>(s.best_val);
  w.put<std::uint64_t>(s.best_epoch);
  w.put<std::uint64_t>(s.epochs_since_best);
  return std::move(w.bytes());
}

struct Section {
  std::string name;
  std::vector<std::uint8_t> payload;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Encoder& model, const TrainState& state) {
  std::vector<Section> sections;
  sections.push_back({"config", config_section(model)});
  sections.push_back({"params", params_section(model)});
  sections.push_back({"banks", banks_section(model)});
  sections.push_back({"optimizer", optimizer_section(state)});
  sections.push_back({"state", state_section(state)});
  sections.push_back({"rng", {state.rng_state.begin(), state.rng_state.end()}});

  std::size_t header_size = sizeof(kMagic) + 4 + 8 + 4;
  for (const Section& s : sections) header_size += 4 + s.name.size() + 8 + 8 + 4;
  header_size += 4;

  Writer w;
  for (char c : kMagic) w.put<char>(c);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string cfg_text(sections[0].payload.begin(), sections[0].payload.end());
  w.put<std::uint64_t>(fnv1a64(cfg_text));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sections.size()));
  std::uint64_t offset = header_size;
  for (const Section& s : sections) {
    w.put_string(s.name);
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(s.payload.size());
    w.put<std::uint32_t>(crc32_of(s.payload));
    offset += s.payload.size();
  }
  w.put<std::uint32_t>(crc32_of(w.bytes()));
  auto& out = w.bytes();
  for (const Section& s : sections) out.insert(out.end(), s.payload.begin(), s.payload.end());
  return std::move(out);
}

LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader head(bytes, "header");
  char magic[8];
  for (char& c : magic) c = head.get<char>();
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IntegrityError("not a checkpoint file (bad magic)");
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IntegrityError("checkpoint schema version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
  }
  const auto digest = head.get<std::uint64_t>();
  const auto n_sections = head.get<std::uint32_t>();
  std::map<std::string, std::span<const std::uint8_t>> payloads;
  std::vector<std::uint32_t> crcs;
  std::vector<std::string> names;
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    std::string name = head.get_string();
    const auto off = head.get<std::uint64_t>();
    const auto size = head.get<std::uint64_t>();
    const auto crc = head.get<std::uint32_t>();
    if (off > bytes.size() || size > bytes.size() - off) throw IntegrityError("checkpoint is truncated");
    payloads[name] = bytes.subspan(off, size);
    names.push_back(name);
    crcs.push_back(crc);
  }
  const std::size_t header_end = head.position();
  const auto header_crc = head.get<std::uint32_t>();
  if (header_crc != crc32_of(bytes.first(header_end))) throw IntegrityError("checkpoint header checksum mismatch");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (crc32_of(payloads[names[i]]) != crcs[i]) {
      throw IntegrityError("checkpoint section '" + names[i] + "' checksum mismatch");
    }
  }
  auto section = [&](const char* name) {
    auto it = payloads.find(name);
    if (it == payloads.end()) throw IntegrityError(std::string("checkpoint is missing section '") + name + "'");
    return it->second;
  };

  // config -> model skeleton
  const auto cfg_bytes = section("config");
  const std::string cfg_text(cfg_bytes.begin(), cfg_bytes.end());
  if (fnv1a64(cfg_text) != digest) throw IntegrityError("checkpoint config digest mismatch");
  Json cfg_json;
  try {
    cfg_json = Json::parse(cfg_text);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const EncoderConfig enc_cfg = encoder_config_from_json(cfg_json.at("encoder"));
  Rng scratch(0);
  Encoder model(enc_cfg, scratch);
  if (!cfg_json.at("has_projection_head").get<bool>()) model.drop_projection_head();
  const auto n_classes = cfg_json.at("n_classes").get<std::size_t>();
  if (n_classes > 0) model.attach_classifier(n_classes, scratch);

  // banks first: they decide which prototype tensors are trainable parameters
  {
    Reader r(section("banks"), "banks");
    auto layers = model.norm_layers();
    if (r.get<std::uint32_t>() != layers.size()) throw IntegrityError("checkpoint bank count does not match model");
    for (ProtoNormLayer* layer : layers) {
      PrototypeBank& bank = layer->bank();
      bank.ema_alpha = r.get<double>();
      bank.frozen = r.get<std::uint8_t>() != 0;
      const auto n = r.get<std::uint32_t>();
      bank.assignment_counts.assign(n, 0);
      for (auto& c : bank.assignment_counts) c = r.get<std::uint64_t>();
      const auto values = r.get_doubles();
      auto dst = bank.prototypes.mutable_data();
      if (values.size() != dst.size()) throw IntegrityError("checkpoint prototype bank shape does not match model");
      std::copy(values.begin(), values.end(), dst.begin());
    }
    r.expect_end();
  }
  {
    Reader r(section("params"), "params");
    const auto params = model.parameters();
    std::map<std::string, const NamedTensor*> by_name;
    for (const NamedTensor& p : params) by_name[p.name] = &p;
    const auto count = r.get<std::uint32_t>();
    if (count != params.size()) throw IntegrityError("checkpoint parameter count does not match model");
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::string name = r.get_string();
      const auto rank = r.get<std::uint32_t>();
      Shape shape(rank);
      for (auto& d : shape) d = r.get<std::uint64_t>();
      const auto values = r.get_doubles();
      auto it = by_name.find(name);
      if (it == by_name.end()) throw IntegrityError("checkpoint parameter '" + name + "' is unknown to the model");
      Tensor t = it->second->tensor;
      if (t.shape() != shape || values.size() != t.numel()) {
        throw IntegrityError("checkpoint parameter '" + name + "' has shape " + to_string(shape) + ", model expects " +
                             to_string(t.shape()));
      }
      auto dst = t.mutable_data();
      std::copy(values.begin(), values.end(), dst.begin());
    }
    r.expect_end();
  }

  TrainState state;
  {
    Reader r(section("optimizer"), "optimizer");
    state.optimizer_steps = r.get<std::uint64_t>();
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.get_string();
      Moments m;
      m.first = r.get_doubles();
      m.second = r.get_doubles();
      state.moments.emplace(std::move(name), std::move(m));
    }
    r.expect_end();
  }
  {
    Reader r(section("state"), "state");
    const auto stage = r.get<std::uint8_t>();
    if (stage > 1) throw IntegrityError("checkpoint has an unknown training stage");
    state.stage = static_cast<TrainState::Stage>(stage);
    state.step = r.get<std::uint64_t>();
    state.epoch = r.get<std::uint64_t>();
    state.batch_in_epoch = r.get<std::uint64_t>();
    state.prototypes_frozen = r.get<std::uint8_t>() != 0;
    state.best_val = r.get<double>();
    state.best_epoch = r.get<std::uint64_t>();
    state.epochs_since_best = r.get<std::uint64_t>();
    r.expect_end();
  }
  const auto rng_bytes = section("rng");
  state.rng_state.assign(rng_bytes.begin(), rng_bytes.end());
  return {std::move(model), std::move(state)};
}

void save_checkpoint(const std::filesystem::path& path, const Encoder& model, const TrainState& state) {
  const auto bytes = serialize_checkpoint(model, state);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace protonorm
