// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "protonorm/errors.hpp"
#include "protonorm/ops.hpp"
#include "protonorm/protonorm.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace protonorm {
namespace {

PrototypeBank make_bank(std::vector<double> rows, std::size_t n, std::size_t d, double alpha = 0.05) {
  PrototypeBank bank;
  bank.prototypes = Tensor({n, d}, std::move(rows), true);
  bank.ema_alpha = alpha;
  bank.assignment_counts.assign(n, 0);
  return bank;
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Tensor x({1, 3}, {2.0, 2.0, 2.0});
  const Tensor y = layer_norm(x, LayerNormParams::identity(3));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, StandardizesSmallRow) {
  const Tensor y = layer_norm(Tensor({1, 3}, {1.0, 2.0, 3.0}), LayerNormParams::identity(3));
  EXPECT_NEAR(y[0], -1.2247, 1e-3);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], 1.2247, 1e-3);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  LayerNormParams p{Tensor::zeros({3}), Tensor::full({3}, 5.0), 1e-5};
  const Tensor y = layer_norm(Tensor({1, 3}, {1.0, -4.0, 9.0}), p);
  for (double v : y.data()) EXPECT_EQ(v, 5.0);
}

TEST(LayerNorm, WidthMismatchIsShapeError) {
  EXPECT_THROW(layer_norm(Tensor::zeros({2, 4}), LayerNormParams::identity(3)), ShapeError);
}

TEST(LayerNorm, MatchesLoopReference) {
  Rng rng(3);
  std::vector<double> x(5 * 7), g(7), b(7);
  for (double& v : x) v = rng.normal(2.0, 3.0);
  for (double& v : g) v = rng.normal();
  for (double& v : b) v = rng.normal();
  LayerNormParams p{Tensor({7}, g), Tensor({7}, b), 1e-5};
  const Tensor y = layer_norm(Tensor({5, 7}, x), p);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto ref = testing::layer_norm_reference(std::span<const double>(x).subspan(r * 7, 7), g, b, 1e-5);
    for (std::size_t k = 0; k < 7; ++k) EXPECT_NEAR(y[r * 7 + k], ref[k], 1e-12);
  }
}

TEST(Gate, SinglePrototypeAlwaysZero) {
  const PrototypeBank bank = make_bank({3.0, -1.0}, 1, 2);
  const std::vector<double> f{100.0, 100.0};
  EXPECT_EQ(gate(f, bank), 0u);
}

TEST(Gate, PicksNearest) {
  const PrototypeBank bank = make_bank({1.0, 0.0, 0.0, 1.0}, 2, 2);
  EXPECT_EQ(gate(std::vector<double>{0.9, 0.1}, bank), 0u);
  EXPECT_EQ(gate(std::vector<double>{0.1, 0.9}, bank), 1u);
}

TEST(Gate, TieGoesToLowestIndex) {
  const PrototypeBank bank = make_bank({1.0, 0.0, 0.0, 1.0}, 2, 2);
  EXPECT_EQ(gate(std::vector<double>{0.5, 0.5}, bank), 0u);
}

TEST(Gate, NonFiniteFeatureRejected) {
  const PrototypeBank bank = make_bank({1.0, 0.0, 0.0, 1.0}, 2, 2);
  EXPECT_THROW(gate(std::vector<double>{std::nan(""), 0.0}, bank), InputError);
  EXPECT_THROW(gate(std::vector<double>{std::numeric_limits<double>::infinity(), 0.0}, bank), InputError);
}

TEST(Gate, InvariantUnderCommonTranslationAndScaling) {
  Rng rng(11);
  const std::size_t n = 6, d = 5;
  std::vector<double> protos(n * d);
  for (double& v : protos) v = rng.normal();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> f(d), shift(d);
    for (double& v : f) v = rng.normal();
    for (double& v : shift) v = rng.normal(0.0, 4.0);
    const double c = rng.uniform(0.1, 10.0);
    std::vector<double> p2(protos), f2(f);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) p2[i * d + k] = c * (protos[i * d + k] + shift[k]);
    for (std::size_t k = 0; k < d; ++k) f2[k] = c * (f[k] + shift[k]);
    EXPECT_EQ(gate(f, make_bank(protos, n, d)), gate(f2, make_bank(p2, n, d)));
    EXPECT_EQ(gate(f, make_bank(protos, n, d)), testing::nearest_prototype(f, protos, n));
  }
}

Tensor random_input(std::size_t b, std::size_t t, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(b * t * d);
  for (double& v : x) v = rng.normal();
  return Tensor({b, t, d}, std::move(x));
}

TEST(ProtoNormForward, PlainIgnoresBankContents) {
  Rng r1(5), r2(5);
  ProtoNormLayer a({.dim = 8, .n_prototypes = 4, .mode = NormMode::kPlain}, r1);
  ProtoNormLayer b({.dim = 8, .n_prototypes = 4, .mode = NormMode::kPlain}, r2);
  for (double& v : b.bank().prototypes.mutable_data()) v = 1e6;
  const Tensor x = random_input(3, 5, 8, 1);
  const Tensor ya = a.forward(x, false);
  const Tensor yb = b.forward(x, false);
  ASSERT_EQ(ya.numel(), yb.numel());
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(ya[i], yb[i]);
}

TEST(ProtoNormForward, SinglePrototypeEqualsPlain) {
  Rng r1(5), r2(5);
  ProtoNormLayer proto({.dim = 8, .n_prototypes = 1, .mode = NormMode::kProtoGated}, r1);
  ProtoNormLayer plain({.dim = 8, .n_prototypes = 1, .mode = NormMode::kPlain}, r2);
  Rng rng(9);
  for (double& v : proto.norms()[0].gamma.mutable_data()) v = rng.normal();
  for (double& v : proto.norms()[0].beta.mutable_data()) v = rng.normal();
  std::copy(proto.norms()[0].gamma.data().begin(), proto.norms()[0].gamma.data().end(),
            plain.norms()[0].gamma.mutable_data().begin());
  std::copy(proto.norms()[0].beta.data().begin(), proto.norms()[0].beta.data().end(),
            plain.norms()[0].beta.mutable_data().begin());
  const Tensor x = random_input(4, 6, 8, 2);
  const Tensor yp = proto.forward(x, true);
  const Tensor yq = plain.forward(x, true);
  for (std::size_t i = 0; i < yp.numel(); ++i) EXPECT_EQ(yp[i], yq[i]);
}

TEST(ProtoNormForward, SeparatedClustersRouteCleanly) {
  const std::size_t d = 4, T = 6, B = 20;
  Rng init(1);
  ProtoNormLayer layer({.dim = d, .n_prototypes = 2, .mode = NormMode::kProtoGated}, init);
  auto p = layer.bank().prototypes.mutable_data();
  for (std::size_t k = 0; k < d; ++k) {
    p[k] = 4.8;
    p[d + k] = -4.9;
  }
  Rng rng(2);
  std::vector<double> x(B * T * d);
  std::vector<std::size_t> truth(B);
  for (std::size_t b = 0; b < B; ++b) {
    truth[b] = b % 2;
    const double centre = truth[b] == 0 ? 5.0 : -5.0;
    for (std::size_t i = 0; i < T * d; ++i) x[b * T * d + i] = centre + rng.normal(0.0, 0.5);
  }
  const Tensor y = layer.forward(Tensor({B, T, d}, x), false);
  EXPECT_EQ(layer.last_assignments(), truth);
  // Every token of a sample shares its LayerNorm: rows are standardized with
  // the selected gamma/beta.
  for (std::size_t b = 0; b < B; ++b) {
    const auto& ln = layer.norms()[truth[b]];
    for (std::size_t t = 0; t < T; ++t) {
      const auto ref = testing::layer_norm_reference(std::span<const double>(x).subspan((b * T + t) * d, d),
                                                     ln.gamma.data(), ln.beta.data(), ln.epsilon);
      for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(y[(b * T + t) * d + k], ref[k], 1e-12);
    }
  }
}

TEST(ProtoNormForward, AllTokensUseTheSampleNorm) {
  const std::size_t d = 4, T = 5;
  Rng init(3);
  ProtoNormLayer layer({.dim = d, .n_prototypes = 3, .mode = NormMode::kProtoGated}, init);
  Rng rng(4);
  for (auto& ln : layer.norms()) {
    for (double& v : ln.gamma.mutable_data()) v = rng.normal();
    for (double& v : ln.beta.mutable_data()) v = rng.normal();
  }
  const Tensor x = random_input(6, T, d, 5);
  const Tensor y = layer.forward(x, false);
  for (std::size_t b = 0; b < 6; ++b) {
    const auto& ln = layer.norms()[layer.last_assignments()[b]];
    for (std::size_t t = 0; t < T; ++t) {
      const auto ref = testing::layer_norm_reference(x.data().subspan((b * T + t) * d, d), ln.gamma.data(),
                                                     ln.beta.data(), ln.epsilon);
      for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(y[(b * T + t) * d + k], ref[k], 1e-12);
    }
  }
}

TEST(ProtoNormForward, DatasetModeNeedsIds) {
  Rng init(1);
  ProtoNormLayer layer({.dim = 4, .n_prototypes = 2, .mode = NormMode::kDatasetIndexed}, init);
  const Tensor x = random_input(2, 3, 4, 1);
  EXPECT_THROW(layer.forward(x, false), ContractError);
  const std::vector<std::size_t> bad{0, 2};
  EXPECT_THROW(layer.forward(x, false, bad), ContractError);
  const std::vector<std::size_t> ids{1, 0};
  layer.forward(x, false, ids);
  EXPECT_EQ(layer.last_assignments(), ids);
}

TEST(ProtoNormForward, EvalModeLeavesBankAndCountsAlone) {
  Rng init(1);
  ProtoNormLayer layer({.dim = 4, .n_prototypes = 2, .mode = NormMode::kProtoGated}, init);
  const std::vector<double> before(layer.bank().prototypes.data().begin(), layer.bank().prototypes.data().end());
  layer.forward(random_input(5, 3, 4, 1), false);
  const EmaOutcome o = layer.commit_ema();
  EXPECT_EQ(o.updated, 0u);
  EXPECT_EQ(layer.bank().assignment_counts, (std::vector<std::uint64_t>{0, 0}));
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(layer.bank().prototypes[i], before[i]);
}

TEST(ProtoNormForward, TrainModeStagesMeansForCommit) {
  const std::size_t d = 3, T = 2;
  Rng init(1);
  ProtoNormLayer layer({.dim = d, .n_prototypes = 1, .mode = NormMode::kProtoGated, .ema_alpha = 1.0}, init);
  const Tensor x = random_input(4, T, d, 8);
  layer.forward(x, true);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < 4 * T; ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += x[i * d + k] / (4.0 * T);
  const EmaOutcome o = layer.commit_ema();
  EXPECT_EQ(o.updated, 1u);
  for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(layer.bank().prototypes[k], mean[k], 1e-14);
  EXPECT_EQ(layer.bank().assignment_counts[0], 4u);
}

TEST(EmaUpdate, AlphaOneReplaces) {
  PrototypeBank bank = make_bank({1.0, 2.0}, 1, 2, 1.0);
  const std::vector<AssignedMean> a{{0, {7.0, -3.0}}};
  ema_update(bank, a);
  EXPECT_EQ(bank.prototypes[0], 7.0);
  EXPECT_EQ(bank.prototypes[1], -3.0);
}

TEST(EmaUpdate, HalfStep) {
  PrototypeBank bank = make_bank({0.0, 1.0}, 1, 2, 0.5);
  const std::vector<AssignedMean> a{{0, {1.0, 0.0}}};
  ema_update(bank, a);
  EXPECT_EQ(bank.prototypes[0], 0.5);
  EXPECT_EQ(bank.prototypes[1], 0.5);
}

TEST(EmaUpdate, UnselectedPrototypeUntouched) {
  PrototypeBank bank = make_bank({0.3, -0.7, 1.1, 2.2}, 2, 2, 0.05);
  const double p10 = bank.prototypes[2], p11 = bank.prototypes[3];
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const std::vector<AssignedMean> a{{0, {rng.normal(), rng.normal()}}};
    ema_update(bank, a);
  }
  EXPECT_EQ(bank.prototypes[2], p10);
  EXPECT_EQ(bank.prototypes[3], p11);
}

TEST(EmaUpdate, FrozenBankIsNoOp) {
  PrototypeBank bank = make_bank({0.3, -0.7}, 1, 2, 0.5);
  bank.frozen = true;
  const std::vector<AssignedMean> a{{0, {9.0, 9.0}}};
  const EmaOutcome o = ema_update(bank, a);
  EXPECT_TRUE(o.skipped_frozen);
  EXPECT_EQ(o.updated, 0u);
  EXPECT_EQ(bank.prototypes[0], 0.3);
  EXPECT_EQ(bank.prototypes[1], -0.7);
}

TEST(EmaUpdate, GeometricContractionTowardFixedMean) {
  const double alpha = 0.05;
  PrototypeBank bank = make_bank({4.0, -2.0}, 1, 2, alpha);
  const std::vector<double> mu{1.0, 1.0};
  const std::vector<AssignedMean> a{{0, mu}};
  const double d0 = std::hypot(4.0 - 1.0, -2.0 - 1.0);
  for (int t = 1; t <= 50; ++t) {
    ema_update(bank, a);
    const double dist = std::hypot(bank.prototypes[0] - mu[0], bank.prototypes[1] - mu[1]);
    EXPECT_NEAR(dist, std::pow(1.0 - alpha, t) * d0, 1e-12);
  }
}

TEST(EmaUpdate, RejectsBadInput) {
  PrototypeBank bank = make_bank({0.0, 0.0}, 1, 2);
  EXPECT_THROW(ema_update(bank, std::vector<AssignedMean>{{1, {0.0, 0.0}}}), ContractError);
  EXPECT_THROW(ema_update(bank, std::vector<AssignedMean>{{0, {0.0}}}), ShapeError);
  EXPECT_THROW(ema_update(bank, std::vector<AssignedMean>{{0, {std::nan(""), 0.0}}}), InputError);
}

TEST(Orthogonality, IdentityRowsGiveZero) {
  EXPECT_EQ(orthogonality_loss(Tensor({2, 3}, {1, 0, 0, 0, 1, 0})).item(), 0.0);
}

TEST(Orthogonality, DuplicateRowsGiveTwo) {
  EXPECT_DOUBLE_EQ(orthogonality_loss(Tensor({2, 2}, {1, 0, 1, 0})).item(), 2.0);
}

TEST(Orthogonality, MatchesLoopFormulaAndIsNonNegative) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + trial % 5, d = 2 + trial % 7;
    std::vector<double> p(n * d);
    for (double& v : p) v = rng.normal(0.0, 2.0);
    long double ref = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        long double dot = 0;
        for (std::size_t k = 0; k < d; ++k) dot += static_cast<long double>(p[i * d + k]) * p[j * d + k];
        const long double r = dot - (i == j ? 1.0L : 0.0L);
        ref += r * r;
      }
    const double got = orthogonality_loss(Tensor({n, d}, p)).item();
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, static_cast<double>(ref), 1e-10 * std::max(1.0, static_cast<double>(ref)));
  }
}

TEST(Orthogonality, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  std::vector<double> p(4 * 8);
  for (double& v : p) v = rng.normal(0.0, 0.5);
  Tensor P({4, 8}, p, true);
  const auto r = testing::check_gradients({{"P", P, true}}, [&] { return orthogonality_loss(P); });
  EXPECT_LT(r.max_rel_err, 1e-6) << r.worst;
}

TEST(InitOrthogonal, SquareIsOrthonormal) {
  Rng rng(7);
  const Tensor P = init_orthogonal(16, 16, rng);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 16; ++k) dot += P[i * 16 + k] * P[j * 16 + k];
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-6);
    }
  EXPECT_LT(orthogonality_loss(P).item(), 1e-10);
}

TEST(InitOrthogonal, WideBankHasNegligibleLoss) {
  Rng rng(8);
  EXPECT_LT(orthogonality_loss(init_orthogonal(4, 64, rng)).item(), 1e-10);
}

TEST(InitOrthogonal, SeedReproducible) {
  Rng a(99), b(99);
  const Tensor pa = init_orthogonal(5, 9, a);
  const Tensor pb = init_orthogonal(5, 9, b);
  for (std::size_t i = 0; i < pa.numel(); ++i) EXPECT_EQ(pa[i], pb[i]);
}

TEST(InitOrthogonal, TooManyPrototypesIsConfigError) {
  Rng rng(1);
  EXPECT_THROW(init_orthogonal(5, 4, rng), ConfigError);
  EXPECT_THROW(ProtoNormLayer({.dim = 4, .n_prototypes = 5}, rng), ConfigError);
}

TEST(NormModeText, RoundTrips) {
  for (NormMode m : {NormMode::kProtoGated, NormMode::kDatasetIndexed, NormMode::kPlain}) {
    EXPECT_EQ(parse_norm_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_norm_mode("batch"), ConfigError);
}

}  // namespace
}  // namespace protonorm
