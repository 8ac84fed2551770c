// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "protonorm/errors.hpp"

namespace protonorm {

namespace {

// Reads keys from one JSON object and remembers which were consumed so that
// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown configuration key '" + field(it.key().c_str()) + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void fail(const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); }

}  // namespace

Json to_json(const EncoderConfig& c) {
  return Json{{"input_len", c.input_len},
              {"channels", c.channels},
              {"patch_size", c.patch_size},
              {"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_layers", c.n_layers},
              {"n_prototypes", c.n_prototypes},
              {"dropout", c.dropout},
              {"norm_mode", std::string(to_string(c.norm_mode))},
              {"norm_epsilon", c.norm_epsilon},
              {"ema_alpha", c.ema_alpha},
              {"proj_dim", c.proj_dim}};
}

namespace {

void read_encoder(ObjectReader& r, EncoderConfig& c) {
  r.get("input_len", c.input_len);
  r.get("channels", c.channels);
  r.get("patch_size", c.patch_size);
  r.get("d_model", c.d_model);
  r.get("n_heads", c.n_heads);
  r.get("n_layers", c.n_layers);
  r.get("n_prototypes", c.n_prototypes);
  r.get("dropout", c.dropout);
  std::string mode(to_string(c.norm_mode));
  r.get("norm_mode", mode);
  c.norm_mode = parse_norm_mode(mode);
  r.get("norm_epsilon", c.norm_epsilon);
  r.get("ema_alpha", c.ema_alpha);
  r.get("proj_dim", c.proj_dim);
  r.finish();
}

void read_synthetic(ObjectReader& r, SyntheticSpec& s) {
  r.get("k_datasets", s.k_datasets);
  r.get("n_per", s.n_per);
  r.get("length", s.length);
  r.get("offsets", s.offsets);
  r.get("scales", s.scales);
  r.get("band_stretch", s.band_stretch);
  r.get("noise_std", s.noise_std);
  if (const Json* rule = r.child("class_rule")) {
    ObjectReader rr(*rule, r.field("class_rule"));
    rr.get("threshold", s.rule.threshold);
    rr.get("margin", s.rule.margin);
    rr.get("band_lo", s.rule.band_lo);
    rr.get("band_hi", s.rule.band_hi);
    rr.finish();
  }
  r.finish();
}

}  // namespace

EncoderConfig encoder_config_from_json(const Json& j) {
  EncoderConfig c;
  ObjectReader r(j, "encoder");
  read_encoder(r, c);
  return c;
}

Json to_json(const SyntheticSpec& s) {
  return Json{{"k_datasets", s.k_datasets},
              {"n_per", s.n_per},
              {"length", s.length},
              {"offsets", s.offsets},
              {"scales", s.scales},
              {"band_stretch", s.band_stretch},
              {"noise_std", s.noise_std},
              {"class_rule",
               {{"threshold", s.rule.threshold},
                {"margin", s.rule.margin},
                {"band_lo", s.rule.band_lo},
                {"band_hi", s.rule.band_hi}}}};
}

SyntheticSpec synthetic_spec_from_json(const Json& j, const std::string& where) {
  SyntheticSpec s;
  ObjectReader r(j, where);
  read_synthetic(r, s);
  return s;
}

Json to_json(const RunConfig& c) {
  Json pool = Json::array();
  for (const DataSource& src : c.data.pool) pool.push_back({{"path", src.path}, {"znorm", src.znorm}});
  Json data{{"pool", pool},
            {"synthetic", c.data.synthetic ? to_json(*c.data.synthetic) : Json(nullptr)},
            {"shift_sigma", c.data.shift_sigma},
            {"finetune_train", c.data.finetune_train},
            {"finetune_test", c.data.finetune_test},
            {"finetune_znorm", c.data.finetune_znorm},
            {"test_fraction", c.data.test_fraction}};
  return Json{
      {"seed", c.seed},
      {"freeze_prototypes", c.freeze_prototypes},
      {"encoder", to_json(c.encoder)},
      {"augment",
       {{"max_shift_fraction", c.augment.max_shift_fraction},
        {"scale_range", {c.augment.scale_lo, c.augment.scale_hi}},
        {"jitter_std", c.augment.jitter_std}}},
      {"ntxent", {{"temperature", c.ntxent.temperature}, {"lambda_orth", c.ntxent.lambda_orth}}},
      {"optim",
       {{"lr_peak", c.optim.lr_peak},
        {"weight_decay", c.optim.weight_decay},
        {"betas", {c.optim.beta1, c.optim.beta2}},
        {"eps", c.optim.eps},
        {"warmup_steps", c.optim.warmup_steps},
        {"total_steps", c.optim.total_steps},
        {"lr_floor", c.optim.lr_floor}}},
      {"standardize",
       {{"target_len", c.standardize.target_len},
        {"target_channels", c.standardize.target_channels},
        {"replication_noise_std", c.standardize.replication_noise_std}}},
      {"data", data},
      {"pretrain",
       {{"epochs", c.pretrain.epochs}, {"batch_size", c.pretrain.batch_size}, {"val_fraction", c.pretrain.val_fraction}}},
      {"finetune",
       {{"epochs", c.finetune.epochs},
        {"batch_size", c.finetune.batch_size},
        {"n_labeled", c.finetune.n_labeled},
        {"min_per_class", c.finetune.min_per_class},
        {"val_fraction", c.finetune.val_fraction}}},
      {"generate",
       {{"synthetic", c.generate.synthetic ? to_json(*c.generate.synthetic) : Json(nullptr)},
        {"source", c.generate.source},
        {"source_znorm", c.generate.source_znorm},
        {"sigmas", c.generate.sigmas}}},
      {"sweep", {{"axis", c.sweep.axis}, {"values", c.sweep.values}}},
  };
}

RunConfig run_config_from_json(const Json& j, const RunConfig& base) {
  RunConfig c = base;
  ObjectReader top(j, "");
  top.get("seed", c.seed);
  top.get("freeze_prototypes", c.freeze_prototypes);
  if (const Json* e = top.child("encoder")) {
    ObjectReader r(*e, "encoder");
    read_encoder(r, c.encoder);
  }
  if (const Json* a = top.child("augment")) {
    ObjectReader r(*a, "augment");
    r.get("max_shift_fraction", c.augment.max_shift_fraction);
    std::vector<double> range{c.augment.scale_lo, c.augment.scale_hi};
    r.get("scale_range", range);
    if (range.size() != 2) fail("augment.scale_range", "expected [lo, hi]");
    c.augment.scale_lo = range[0];
    c.augment.scale_hi = range[1];
    r.get("jitter_std", c.augment.jitter_std);
    r.finish();
  }
  if (const Json* n = top.child("ntxent")) {
    ObjectReader r(*n, "ntxent");
    r.get("temperature", c.ntxent.temperature);
    r.get("lambda_orth", c.ntxent.lambda_orth);
    r.finish();
  }
  if (const Json* o = top.child("optim")) {
    ObjectReader r(*o, "optim");
    r.get("lr_peak", c.optim.lr_peak);
    r.get("weight_decay", c.optim.weight_decay);
    std::vector<double> betas{c.optim.beta1, c.optim.beta2};
    r.get("betas", betas);
    if (betas.size() != 2) fail("optim.betas", "expected [beta1, beta2]");
    c.optim.beta1 = betas[0];
    c.optim.beta2 = betas[1];
    r.get("eps", c.optim.eps);
    r.get("warmup_steps", c.optim.warmup_steps);
    r.get("total_steps", c.optim.total_steps);
    r.get("lr_floor", c.optim.lr_floor);
    r.finish();
  }
  if (const Json* s = top.child("standardize")) {
    ObjectReader r(*s, "standardize");
    r.get("target_len", c.standardize.target_len);
    r.get("target_channels", c.standardize.target_channels);
    r.get("replication_noise_std", c.standardize.replication_noise_std);
    r.finish();
  }
  if (const Json* d = top.child("data")) {
    ObjectReader r(*d, "data");
    if (const Json* pool = r.child("pool")) {
      if (!pool->is_array()) fail("data.pool", "expected an array");
      c.data.pool.clear();
      for (std::size_t i = 0; i < pool->size(); ++i) {
        const Json& item = (*pool)[i];
        DataSource src;
        if (item.is_string()) {
          src.path = item.get<std::string>();
        } else {
          ObjectReader pr(item, "data.pool[" + std::to_string(i) + "]");
          pr.get("path", src.path);
          pr.get("znorm", src.znorm);
          pr.finish();
        }
        c.data.pool.push_back(src);
      }
    }
    if (const Json* syn = r.child("synthetic"); syn && !syn->is_null()) {
      c.data.synthetic = synthetic_spec_from_json(*syn, "data.synthetic");
    }
    r.get("shift_sigma", c.data.shift_sigma);
    r.get("finetune_train", c.data.finetune_train);
    r.get("finetune_test", c.data.finetune_test);
    r.get("finetune_znorm", c.data.finetune_znorm);
    r.get("test_fraction", c.data.test_fraction);
    r.finish();
  }
  if (const Json* p = top.child("pretrain")) {
    ObjectReader r(*p, "pretrain");
    r.get("epochs", c.pretrain.epochs);
    r.get("batch_size", c.pretrain.batch_size);
    r.get("val_fraction", c.pretrain.val_fraction);
    r.finish();
  }
  if (const Json* f = top.child("finetune")) {
    ObjectReader r(*f, "finetune");
    r.get("epochs", c.finetune.epochs);
    r.get("batch_size", c.finetune.batch_size);
    r.get("n_labeled", c.finetune.n_labeled);
    r.get("min_per_class", c.finetune.min_per_class);
    r.get("val_fraction", c.finetune.val_fraction);
    r.finish();
  }
  if (const Json* g = top.child("generate")) {
    ObjectReader r(*g, "generate");
    if (const Json* syn = r.child("synthetic"); syn && !syn->is_null()) {
      c.generate.synthetic = synthetic_spec_from_json(*syn, "generate.synthetic");
    }
    r.get("source", c.generate.source);
    r.get("source_znorm", c.generate.source_znorm);
    r.get("sigmas", c.generate.sigmas);
    r.finish();
  }
  if (const Json* s = top.child("sweep")) {
    ObjectReader r(*s, "sweep");
    r.get("axis", c.sweep.axis);
    r.get("values", c.sweep.values);
    r.finish();
  }
  top.finish();
  return c;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, base);
}

void RunConfig::validate() const {
  encoder.validate();
  augment.validate();
  ntxent.validate();
  standardize.validate();
  if (optim.total_steps != 0) {
    optim.validate();
  } else {
    OptimConfig probe = optim;
    probe.total_steps = probe.warmup_steps;
    probe.validate();
  }
  if (standardize.target_len != encoder.input_len) fail("standardize.target_len", "must equal encoder.input_len");
  if (standardize.target_channels != encoder.channels) {
    fail("standardize.target_channels", "must equal encoder.channels");
  }
  if (pretrain.epochs == 0) fail("pretrain.epochs", "must be positive");
  if (pretrain.batch_size == 0) fail("pretrain.batch_size", "must be positive");
  if (!(pretrain.val_fraction >= 0.0 && pretrain.val_fraction < 1.0)) fail("pretrain.val_fraction", "must be in [0, 1)");
  if (finetune.epochs == 0) fail("finetune.epochs", "must be positive");
  if (finetune.batch_size == 0) fail("finetune.batch_size", "must be positive");
  if (!(finetune.val_fraction > 0.0 && finetune.val_fraction < 1.0)) fail("finetune.val_fraction", "must be in (0, 1)");
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) fail("data.test_fraction", "must be in (0, 1)");
  for (double s : generate.sigmas) {
    if (!(s >= 0.0)) fail("generate.sigmas", "noise levels must be non-negative");
  }
  if (!sweep.axis.empty() && sweep.axis != "n_prototypes" && sweep.axis != "sigma" && sweep.axis != "lambda") {
    fail("sweep.axis", "must be one of n_prototypes, sigma, lambda");
  }
}

RunConfig desk_config() {
  RunConfig c;
  c.encoder = EncoderConfig{};  // input 128, patch 16, d 64, 4 heads, 3 layers, 4 prototypes
  c.standardize.target_len = c.encoder.input_len;
  c.standardize.target_channels = c.encoder.channels;
  c.optim.warmup_steps = 20;
  c.optim.total_steps = 0;
  c.pretrain.epochs = 5;
  c.pretrain.batch_size = 32;
  c.finetune.epochs = 30;
  c.finetune.batch_size = 16;
  SyntheticSpec syn;
  syn.k_datasets = 2;
  syn.n_per = 300;
  syn.length = c.encoder.input_len;
  c.data.synthetic = syn;
  return c;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_digest(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(cfg).dump())));
  return buf;
}

}  // namespace protonorm
