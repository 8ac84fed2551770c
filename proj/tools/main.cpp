// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "protonorm/errors.hpp"

namespace pc = protonorm::cli;

namespace {

struct CommonFlags {
  std::string config, out, norm_mode, freeze;
  std::uint64_t seed = 0;
  std::size_t prototypes = 0;
  double lambda = 0.0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--out", f.out, "Output root (run directories are created inside)");
  cmd->add_option("--norm-mode", f.norm_mode, "proto | dataset | plain");
  cmd->add_option("--prototypes", f.prototypes, "Prototypes per ProtoNorm layer");
  cmd->add_option("--lambda", f.lambda, "Orthogonality weight");
  cmd->add_option("--freeze-prototypes", f.freeze, "Keep prototype banks fixed (true/false)");
}

pc::Overrides to_overrides(const CLI::App* cmd, const CommonFlags& f) {
  pc::Overrides o;
  if (cmd->count("--config")) o.config = f.config;
  if (cmd->count("--seed")) o.seed = f.seed;
  if (cmd->count("--out")) o.out = f.out;
  if (cmd->count("--norm-mode")) o.norm_mode = f.norm_mode;
  if (cmd->count("--prototypes")) o.prototypes = f.prototypes;
  if (cmd->count("--lambda")) o.lambda = f.lambda;
  if (cmd->count("--freeze-prototypes")) o.freeze_prototypes = pc::parse_bool(f.freeze);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ProtoNorm: prototype-gated normalization for time-series Transformers"};
  app.require_subcommand(1);

  CommonFlags gen_f, pre_f, fin_f, eval_f, sweep_f;
  std::string fin_ckpt, eval_model;
  bool resume = false;

  auto* gen = app.add_subcommand("generate", "Write synthetic datasets and noise variants in UCR format");
  add_common(gen, gen_f);
  auto* pre = app.add_subcommand("pretrain", "Contrastive pretraining over the configured pool");
  add_common(pre, pre_f);
  pre->add_flag("--resume", resume, "Continue from the run directory's last epoch checkpoint");
  auto* fin = app.add_subcommand("finetune", "Fine-tune a pretrained checkpoint with a linear classifier");
  add_common(fin, fin_f);
  fin->add_option("--checkpoint", fin_ckpt, "Pretrained checkpoint (default: <run dir>/pretrain.ckpt)");
  auto* ev = app.add_subcommand("eval", "Evaluate a fine-tuned model on the test split");
  add_common(ev, eval_f);
  ev->add_option("--model", eval_model, "Fine-tuned checkpoint (default: <run dir>/finetuned.ckpt)");
  auto* sweep = app.add_subcommand("sweep", "Pretrain + fine-tune once per value of the configured axis");
  add_common(sweep, sweep_f);

  CLI11_PARSE(app, argc, argv);

  try {
    const pc::Overrides env = pc::environment_overrides([](const char* name) { return std::getenv(name); });
    auto resolved = [&](const CLI::App* cmd, const CommonFlags& f) { return pc::resolve(to_overrides(cmd, f), env); };
    if (gen->parsed()) {
      const auto r = resolved(gen, gen_f);
      return pc::cmd_generate(r.config, r.out_root);
    }
    if (pre->parsed()) {
      const auto r = resolved(pre, pre_f);
      return pc::cmd_pretrain(r.config, r.out_root, resume);
    }
    if (fin->parsed()) {
      const auto r = resolved(fin, fin_f);
      return pc::cmd_finetune(r.config, r.out_root,
                              fin_ckpt.empty() ? std::nullopt : std::optional<pc::fs::path>(fin_ckpt));
    }
    if (ev->parsed()) {
      const auto r = resolved(ev, eval_f);
      return pc::cmd_eval(r.config, r.out_root,
                          eval_model.empty() ? std::nullopt : std::optional<pc::fs::path>(eval_model));
    }
    if (sweep->parsed()) {
      const auto r = resolved(sweep, sweep_f);
      return pc::cmd_sweep(r.config, r.out_root);
    }
  } catch (const protonorm::ConfigError& e) {
    std::cerr << "protonorm: invalid configuration: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "protonorm: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
