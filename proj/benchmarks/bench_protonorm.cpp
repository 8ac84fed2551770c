// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Throughput of the desk-scale encoder and the pieces whose cost depends on
// the number of prototypes.

#include <benchmark/benchmark.h>

#include <vector>

#include "protonorm/encoder.hpp"
#include "protonorm/ops.hpp"
#include "protonorm/ssl.hpp"

namespace protonorm {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

EncoderConfig desk(NormMode mode, std::size_t n) {
  EncoderConfig c;
  c.norm_mode = mode;
  c.n_prototypes = n;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({m, 64}, 1);
  const Tensor b = random_tensor({64, 256}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * 64 * 256));
}
BENCHMARK(BM_Matmul)->Arg(8)->Arg(128)->Arg(512);

// Eval-mode forward of 16 series; the argument is the prototype count.
void BM_EncoderForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  Encoder model(desk(NormMode::kProtoGated, n), rng);
  const Tensor batch = random_tensor({16, 1, 128}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.project(model.embed(batch, ForwardContext{})));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 16));
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(4)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_EncoderForwardPlain(benchmark::State& state) {
  Rng rng(3);
  Encoder model(desk(NormMode::kPlain, 1), rng);
  const Tensor batch = random_tensor({16, 1, 128}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.project(model.embed(batch, ForwardContext{})));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 16));
}
BENCHMARK(BM_EncoderForwardPlain)->Unit(benchmark::kMillisecond);

// One pretraining objective evaluation plus backward on 8 pairs.
void BM_PretrainStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  Encoder model(desk(NormMode::kProtoGated, n), rng);
  const Tensor views = random_tensor({16, 1, 128}, 6);
  for (auto _ : state) {
    Rng dropout(7);
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor z = model.encode(views, Phase::kPretrain, ForwardContext{true, &dropout, {}});
    const Tensor loss = total_loss(nt_xent(z, 0.2), model.orthogonality_losses(), 1e-3);
    tape.backward(loss);
    model.discard_pending_ema();
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 16));
}
BENCHMARK(BM_PretrainStep)->Arg(1)->Arg(4)->Arg(32)->Unit(benchmark::kMillisecond);

// Nearest-prototype search alone: linear in n.
void BM_Gate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  PrototypeBank bank;
  bank.prototypes = random_tensor({n, 64}, 8);
  const Tensor feature = random_tensor({64}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(gate(feature.data(), bank));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Gate)->RangeMultiplier(2)->Range(1, 64)->Complexity(benchmark::oN);

void BM_NtXent(benchmark::State& state) {
  const auto pairs = static_cast<std::size_t>(state.range(0));
  const Tensor z = random_tensor({2 * pairs, 32}, 10);
  for (auto _ : state) benchmark::DoNotOptimize(nt_xent(z, 0.2).item());
}
BENCHMARK(BM_NtXent)->Arg(8)->Arg(32)->Arg(128);

}  // namespace
}  // namespace protonorm

// The packaged benchmark_main archive is LTO bytecode from another compiler
// release, so the entry point lives here.
BENCHMARK_MAIN();
