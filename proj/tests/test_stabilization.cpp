#include <gtest/gtest.h>

#include <algorithm>

#include "lst/factored_layer.hpp"
#include "lst/harness/synthetic.hpp"
#include "lst/stabilization.hpp"
#include "oracles.hpp"

using namespace lst;
using harness::Rng;

namespace {

// Layer with explicit V and U; U^{-T} and Q rebuilt from scratch.
FactoredOutputLayer layer_with(const DenseMat& v, const DenseMat& u) {
  auto layer = FactoredOutputLayer::zeros(static_cast<std::size_t>(v.rows()), static_cast<std::size_t>(v.cols()));
  detail::LayerAccess::V(layer) = v;
  detail::LayerAccess::U(layer) = u;
  const DenseMat w = v * u;
  detail::LayerAccess::Q(layer) = w.transpose() * w;
  layer.refresh_inverse_transpose();
  return layer;
}

std::vector<double> sorted_desc(std::vector<double> s) {
  std::sort(s.begin(), s.end(), std::greater<>());
  return s;
}

StabilizationConfig svd_config() {
  StabilizationConfig c;
  c.detector = SingularDetector::full_svd;
  return c;
}

StabilizationConfig power_config() {
  StabilizationConfig c;
  c.detector = SingularDetector::power_iteration;
  return c;
}

}  // namespace

TEST(StabilizationConfig, Validation) {
  EXPECT_NO_THROW(StabilizationConfig{}.validate());
  StabilizationConfig c;
  c.sigma_low = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.sigma_low = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.sigma_high = 0.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.n_check = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.power_iters = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(StabilizationConfig, DetectorCrossover) {
  const StabilizationConfig c;
  EXPECT_EQ(c.resolve_detector(64), SingularDetector::full_svd);
  EXPECT_EQ(c.resolve_detector(65), SingularDetector::power_iteration);
  EXPECT_EQ(power_config().resolve_detector(8), SingularDetector::power_iteration);
}

TEST(FixSingularValue, DiagonalCase) {
  Rng rng(1);
  const DenseMat v = harness::random_gaussian(rng, 5, 2, 1.0);
  DenseMat u(2, 2);
  u << 2, 0, 0, 1;
  auto layer = layer_with(v, u);
  const DenseMat before = layer.materialize();
  fix_singular_value(layer, 2.0, DenseVec{{1.0, 0.0}}, 1.0);
  EXPECT_LT((layer.U() - DenseMat::Identity(2, 2)).norm(), 1e-15);
  EXPECT_LT((layer.V().col(0) - 2.0 * v.col(0)).norm(), 1e-14);
  EXPECT_EQ(layer.V().col(1), v.col(1));
  EXPECT_LT(relative_frobenius(layer.materialize(), before), 1e-15);
  EXPECT_LT(layer.inverse_residual(), 1e-15);
}

TEST(FixSingularValue, SameSigmaIsNoOp) {
  Rng rng(2);
  auto layer = layer_with(harness::random_gaussian(rng, 10, 3, 1.0), oracle::with_spectrum(rng, {3.0, 2.0, 0.5}));
  const DenseMat v = layer.V(), u = layer.U();
  fix_singular_value(layer, 2.0, harness::random_hidden(rng, 3), 2.0);
  EXPECT_EQ(layer.V(), v);
  EXPECT_EQ(layer.U(), u);
}

TEST(FixSingularValue, ExactSpectrumSurgery) {
  Rng rng(3);
  const std::vector<double> planted{50.0, 7.0, 3.0, 2.0, 1.0, 0.5, 0.1, 1e-4};
  auto layer = layer_with(harness::random_gaussian(rng, 100, 8, 1.0), oracle::with_spectrum(rng, planted));
  const DenseMat before = layer.materialize();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(layer.U()), Eigen::ComputeFullU};
  for (int k : {0, 7}) {
    auto copy = layer;
    const double sigma = svd.singularValues()[k];
    fix_singular_value(copy, sigma, svd.matrixU().col(k), 1.0);
    std::vector<double> expected = oracle::singular_values(layer.U());
    expected[static_cast<std::size_t>(k)] = 1.0;
    expected = sorted_desc(expected);
    const auto got = oracle::singular_values(copy.U());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-9 * expected[i]) << i;
    EXPECT_LT(relative_frobenius(copy.materialize(), before), 1e-10);
    EXPECT_LT(copy.inverse_residual(), 1e-8);
  }
}

TEST(FixSingularValue, RejectsBadArguments) {
  auto layer = FactoredOutputLayer::zeros(4, 2);
  EXPECT_THROW(fix_singular_value(layer, 0.0, DenseVec{{1.0, 0.0}}, 1.0), Error);
  EXPECT_THROW(fix_singular_value(layer, 1.0, DenseVec{{1.0, 0.0}}, -1.0), Error);
  EXPECT_THROW(fix_singular_value(layer, 1.0, DenseVec{{0.0, 0.0}}, 2.0), Error);
  EXPECT_THROW(fix_singular_value(layer, 1.0, DenseVec::Ones(3), 2.0), DimensionMismatch);
}

TEST(PowerExtremeSingular, Diagonal) {
  DenseMat u(2, 2);
  u << 3, 0, 0, 1;
  const auto big = power_extreme_singular(u, ExtremeSingular::largest, 100);
  EXPECT_NEAR(big.sigma, 3.0, 1e-12);
  EXPECT_NEAR(std::abs(big.left_vector[0]), 1.0, 1e-12);
  const auto small = power_extreme_singular(u, ExtremeSingular::smallest, 100);
  EXPECT_NEAR(small.sigma, 1.0, 1e-12);
  EXPECT_NEAR(std::abs(small.left_vector[1]), 1.0, 1e-12);
}

TEST(PowerExtremeSingular, IdentityAcceptsAnyUnitVector) {
  const DenseMat u = DenseMat::Identity(5, 5);
  for (auto which : {ExtremeSingular::largest, ExtremeSingular::smallest}) {
    const auto t = power_extreme_singular(u, which, 100);
    EXPECT_NEAR(t.sigma, 1.0, 1e-12);
    EXPECT_NEAR(t.left_vector.norm(), 1.0, 1e-10);
  }
}

TEST(PowerExtremeSingular, PlantedSpectrum) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> planted(16);
    std::uniform_real_distribution<double> mid(0.5, 5.0);
    for (auto& s : planted) s = mid(rng);
    planted[0] = 20.0;  // gap >= 1.1 on both ends
    planted[1] = 8.0;
    planted[14] = 0.4;
    planted[15] = 0.01;
    const DenseMat u = oracle::with_spectrum(rng, planted);
    const auto big = power_extreme_singular(u, ExtremeSingular::largest, 100);
    const auto small = power_extreme_singular(u, ExtremeSingular::smallest, 100);
    EXPECT_NEAR(big.sigma, 20.0, 0.2);
    EXPECT_NEAR(small.sigma, 0.01, 1e-4);
    EXPECT_NEAR(big.left_vector.norm(), 1.0, 1e-10);
    EXPECT_NEAR(small.left_vector.norm(), 1.0, 1e-10);
    // Smallest of U is 1 / largest of U^{-1}.
    const DenseMat uinv = u.inverse();
    const auto inv_big = power_extreme_singular(uinv, ExtremeSingular::largest, 100);
    EXPECT_NEAR(small.sigma, 1.0 / inv_big.sigma, 1e-9 * small.sigma);
    // Validated against full SVD.
    const auto exact = oracle::singular_values(u);
    EXPECT_NEAR(big.sigma, exact.front(), 1e-9 * exact.front());
    EXPECT_NEAR(small.sigma, exact.back(), 1e-6 * exact.back());
  }
}

TEST(PowerExtremeSingular, SingularUOnSmallestPath) {
  DenseMat u = DenseMat::Identity(3, 3);
  u(2, 2) = 0.0;
  EXPECT_THROW(power_extreme_singular(u, ExtremeSingular::smallest, 10), SingularMatrix);
}

TEST(RecomputeInverse, TrivialCases) {
  auto layer = FactoredOutputLayer::zeros(3, 2);
  recompute_inverse_transpose(layer);
  EXPECT_TRUE(layer.inverse_transpose().isIdentity(0.0));
  DenseMat u(2, 2);
  u << 2, 0, 0, 4;
  auto diag = layer_with(DenseMat::Ones(3, 2), u);
  recompute_inverse_transpose(diag);
  EXPECT_DOUBLE_EQ(diag.inverse_transpose()(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(diag.inverse_transpose()(1, 1), 0.25);
}

TEST(RecomputeInverse, ClearsDriftAfterManyUpdates) {
  Rng rng(5);
  auto layer = FactoredOutputLayer::random(200, 8, {3, 0.1});
  for (int s = 0; s < 10000; ++s) {
    layer.step(harness::random_hidden(rng, 8), harness::random_sparse(rng, 200, 3), 1e-4);
  }
  const double drift = layer.inverse_residual();
  recompute_inverse_transpose(layer);
  EXPECT_LT(layer.inverse_residual(), 1e-10);
  EXPECT_LE(layer.inverse_residual(), drift);
}

TEST(SingularStabilize, IdentityIsNoOp) {
  Rng rng(6);
  for (const auto& cfg : {svd_config(), power_config()}) {
    auto layer = FactoredOutputLayer::random(20, 4, {1, 1.0});
    const DenseMat v = layer.V(), u = layer.U();
    const auto rep = singular_stabilize(layer, cfg);
    EXPECT_EQ(rep.fixes, 0u);
    EXPECT_EQ(layer.U(), u);
    EXPECT_EQ(layer.V(), v);
  }
}

TEST(SingularStabilize, DiagonalLargeSingularValue) {
  Rng rng(7);
  for (const auto& cfg : {svd_config(), power_config()}) {
    DenseMat u = DenseMat::Identity(4, 4);
    u(0, 0) = 5000.0;
    auto layer = layer_with(harness::random_gaussian(rng, 30, 4, 1.0), u);
    const DenseMat before = layer.materialize();
    std::vector<StabilizationEvent> events;
    const auto rep = singular_stabilize(layer, cfg, [&](const StabilizationEvent& e) { events.push_back(e); });
    EXPECT_EQ(rep.fixes, 1u);
    for (double s : oracle::singular_values(layer.U())) EXPECT_NEAR(s, 1.0, 1e-9);
    EXPECT_LT(relative_frobenius(layer.materialize(), before), 1e-10);
    ASSERT_EQ(events.size(), 2u);
    EXPECT_EQ(events[0].kind, StabilizationEvent::Kind::recompute_inverse);
    EXPECT_EQ(events[1].kind, StabilizationEvent::Kind::fix_singular_value);
    EXPECT_NEAR(events[1].sigma_before, 5000.0, 1e-6);
    EXPECT_EQ(events[1].sigma_after, 1.0);
  }
}

TEST(SingularStabilize, RandomIllConditioned) {
  Rng rng(8);
  for (const auto& cfg : {svd_config(), power_config()}) {
    for (int trial = 0; trial < 5; ++trial) {
      const std::vector<double> planted{1e4, 300.0, 20.0, 3.0, 1.0, 0.2, 1e-4, 1e-6};
      auto layer = layer_with(harness::random_gaussian(rng, 60, 8, 1.0), oracle::with_spectrum(rng, planted));
      const DenseMat before = layer.materialize();
      const auto rep = singular_stabilize(layer, cfg);
      EXPECT_EQ(rep.fixes, 4u);
      EXPECT_FALSE(rep.loop_cap_reached);
      const auto s = oracle::singular_values(layer.U());
      EXPECT_LE(s.front(), cfg.sigma_high * (1 + 1e-9));
      EXPECT_GE(s.back(), cfg.sigma_low * (1 - 1e-9));
      EXPECT_LE(s.front() / s.back(), cfg.sigma_high / cfg.sigma_low);
      EXPECT_LT(relative_frobenius(layer.materialize(), before), 1e-10);
      EXPECT_LT(layer.inverse_residual(), 1e-8);
    }
  }
}

TEST(MaybeStabilize, FollowsCadence) {
  Rng rng(9);
  StabilizationConfig cfg;
  cfg.n_check = 5;
  auto layer = FactoredOutputLayer::random(50, 4, {2, 0.1});
  int runs = 0;
  for (int s = 1; s <= 12; ++s) {
    layer.step(harness::random_hidden(rng, 4), harness::random_sparse(rng, 50, 3), 0.01);
    if (maybe_stabilize(layer, cfg)) {
      ++runs;
      EXPECT_TRUE(s == 5 || s == 10) << s;
      EXPECT_EQ(layer.steps_since_check(), 0u);
    }
  }
  EXPECT_EQ(runs, 2);
}

TEST(MaybeStabilize, RefreshesStaleInverse) {
  Rng rng(10);
  StabilizationConfig cfg;
  cfg.n_check = 3;
  auto layer = FactoredOutputLayer::random(50, 4, {2, 0.1});
  for (int s = 0; s < 3; ++s) {
    layer.step(harness::random_hidden(rng, 4), harness::random_sparse(rng, 50, 3), 0.01, true,
               InverseMode::solve_each_batch);
  }
  EXPECT_TRUE(layer.inverse_is_stale());
  ASSERT_TRUE(maybe_stabilize(layer, cfg).has_value());
  EXPECT_FALSE(layer.inverse_is_stale());
  EXPECT_LT(layer.inverse_residual(), 1e-10);
}

TEST(SingularRange, MatchesOracle) {
  Rng rng(11);
  const DenseMat u = oracle::with_spectrum(rng, {9.0, 4.0, 0.25});
  const auto [lo, hi] = singular_range(u);
  EXPECT_NEAR(lo, 0.25, 1e-12);
  EXPECT_NEAR(hi, 9.0, 1e-12);
}
