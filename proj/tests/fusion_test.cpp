#include <gtest/gtest.h>

#include <cmath>

#include "fedproxy/fusion.hpp"
#include "fedproxy/rng.hpp"
#include "test_support.hpp"

namespace fedproxy {
namespace {

// ---- plug-in fusion over correspondences ----

TEST(PlugInFuse, OverwritesMappedDimsOnly) {
  auto backbone_layout = ParamLayout::make({{"a", 2}, {"b", 2}});
  auto proxy_layout = ParamLayout::make({{"a", 2}});
  Correspondence corr;
  corr.pairs.push_back({"a", "a", 0, 0, 2});
  corr.proxy_dim = 2;
  corr.backbone_dim = 4;

  const FlatParams backbone(backbone_layout, {1, 2, 3, 4});
  const FlatParams proxy(proxy_layout, {9, 9});
  const FlatParams fused = plug_in_fuse(backbone, proxy, corr);
  EXPECT_EQ(fused.values(), (std::vector<double>{9, 9, 3, 4}));

  const FlatParams twice = plug_in_fuse(fused, proxy, corr);
  EXPECT_EQ(twice.values(), fused.values());
}

TEST(PlugInFuse, MismatchedCorrespondenceRejected) {
  auto backbone_layout = ParamLayout::make({{"a", 2}, {"b", 2}});
  auto proxy_layout = ParamLayout::make({{"a", 2}});
  Correspondence corr;
  corr.pairs.push_back({"a", "b", 0, 0, 2});  // wrong backbone offset for "b"
  corr.proxy_dim = 2;
  corr.backbone_dim = 4;
  const FlatParams backbone(backbone_layout, {1, 2, 3, 4});
  const FlatParams proxy(proxy_layout, {9, 9});
  EXPECT_THROW(plug_in_fuse(backbone, proxy, corr), DimError);
}

// ---- quadratic oracle ----

QuadraticLoss identity_loss(std::size_t d, double target) {
  QuadraticLoss q;
  q.A = Mat(d, d);
  for (std::size_t i = 0; i < d; ++i) q.A.at(i, i) = 1.0;
  q.b.assign(d, target);
  return q;
}

SubspaceMask first_k_mask(const LayoutPtr& layout, std::size_t k) {
  SubspaceMask m = SubspaceMask::all(layout, false);
  for (std::size_t i = 0; i < k; ++i) m.keep[i] = 1;
  return m;
}

TEST(QuadraticOracle, IdentityInstanceHandValues) {
  const QuadraticLoss q = identity_loss(4, 1.0);
  auto layout = flat_layout(4);
  const FlatParams theta0 = FlatParams::zeros(layout);
  const SubspaceMask mask = first_k_mask(layout, 2);
  const OracleResult res = quadratic_oracle(q, mask, theta0);
  for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(res.theta_opt[d], 1.0, 1e-12);
  EXPECT_NEAR(res.min_loss, 0.0, 1e-15);
  EXPECT_NEAR(res.phi_opt_full[0], 1.0, 1e-12);
  EXPECT_NEAR(res.phi_opt_full[1], 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(res.phi_opt_full[2], 0.0);
  EXPECT_DOUBLE_EQ(res.phi_opt_full[3], 0.0);
  EXPECT_NEAR(res.subspace_min_loss, 1.0, 1e-12);
}

TEST(QuadraticOracle, FullMaskMakesSubspaceOptimumGlobal) {
  Rng rng(3);
  QuadraticLoss q;
  q.A = Mat(6, 4);
  for (auto& v : q.A.a) v = rng.normal();
  q.b.resize(6);
  for (auto& v : q.b) v = rng.normal();
  auto layout = flat_layout(4);
  FlatParams theta0 = FlatParams::zeros(layout);
  for (std::size_t d = 0; d < 4; ++d) theta0[d] = rng.normal();
  const OracleResult res = quadratic_oracle(q, SubspaceMask::all(layout), theta0);
  for (std::size_t d = 0; d < 4; ++d)
    EXPECT_NEAR(res.phi_opt_full[d], res.theta_opt[d], 1e-9);
  EXPECT_NEAR(res.subspace_min_loss, res.min_loss, 1e-12);
}

TEST(QuadraticOracle, AlreadyOptimalStartingPoint) {
  Rng rng(4);
  QuadraticLoss q;
  q.A = Mat(5, 3);
  for (auto& v : q.A.a) v = rng.normal();
  auto layout = flat_layout(3);
  FlatParams theta0 = FlatParams::zeros(layout);
  for (std::size_t d = 0; d < 3; ++d) theta0[d] = rng.normal();
  q.b.assign(5, 0.0);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) q.b[r] += q.A.at(r, c) * theta0[c];

  const OracleResult res = quadratic_oracle(q, first_k_mask(layout, 2), theta0);
  EXPECT_NEAR(res.min_loss, 0.0, 1e-18);
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_NEAR(res.theta_opt[d], theta0[d], 1e-9);
    EXPECT_NEAR(res.phi_opt_full[d], theta0[d], 1e-9);
  }
}

TEST(QuadraticOracle, MatchesIndependentGaussianEliminationSolver) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t D = 3 + rng.below(6);
    const std::size_t m = D + 2 + rng.below(4);
    QuadraticLoss q;
    q.A = Mat(m, D);
    for (auto& v : q.A.a) v = rng.normal();
    q.b.resize(m);
    for (auto& v : q.b) v = rng.normal();
    auto layout = flat_layout(D);
    const FlatParams theta0 = FlatParams::zeros(layout);
    const OracleResult res = quadratic_oracle(q, SubspaceMask::all(layout), theta0);
    const auto oracle = test::least_squares_oracle(q.A, q.b);
    for (std::size_t d = 0; d < D; ++d) EXPECT_NEAR(res.theta_opt[d], oracle[d], 1e-8);
  }
}

TEST(QuadraticOracle, StationarityOfSubspaceOptimum) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t D = 4 + rng.below(5);
    QuadraticLoss q;
    q.A = Mat(D + 3, D);
    for (auto& v : q.A.a) v = rng.normal();
    q.b.resize(D + 3);
    for (auto& v : q.b) v = rng.normal();
    auto layout = flat_layout(D);
    FlatParams theta0 = FlatParams::zeros(layout);
    for (std::size_t d = 0; d < D; ++d) theta0[d] = rng.normal();
    SubspaceMask mask = SubspaceMask::all(layout, false);
    for (std::size_t d = 0; d < D; ++d) mask.keep[d] = rng.uniform01() < 0.5;
    mask.keep[0] = 1;  // at least one free dim
    const OracleResult res = quadratic_oracle(q, mask, theta0);
    const auto g = q.gradient(res.phi_opt_full.values());
    for (std::size_t d = 0; d < D; ++d) {
      if (mask.keep[d]) EXPECT_NEAR(g[d], 0.0, 1e-8);
      else EXPECT_DOUBLE_EQ(res.phi_opt_full[d], theta0[d]);
    }
    const auto gopt = q.gradient(res.theta_opt.values());
    for (std::size_t d = 0; d < D; ++d) EXPECT_NEAR(gopt[d], 0.0, 1e-8);
  }
}

// ---- fusion error and gap decomposition ----

BoundInstance identity_instance() {
  QuadraticLoss q = identity_loss(4, 1.0);
  auto layout = flat_layout(4);
  FlatParams theta0 = FlatParams::zeros(layout);
  SubspaceMask mask = first_k_mask(layout, 2);
  const OracleResult oracle = quadratic_oracle(q, mask, theta0);
  // phi* = subspace optimum, L_hat pinned to the hand value 2.0
  return make_bound_instance(std::move(q), std::move(mask), std::move(theta0),
                             oracle.phi_opt_full, 0.0, 2.0);
}

TEST(FusionError, ZeroAtOptimumAndHandValueOnIdentityInstance) {
  const BoundInstance inst = identity_instance();
  auto loss = [&](const FlatParams& t) { return inst.q.loss(t); };
  EXPECT_NEAR(fusion_error(loss, inst.oracle.theta_opt, inst.oracle.min_loss), 0.0, 1e-12);
  const FlatParams theta_new = fuse_masked(inst.theta0, inst.trained_phi, inst.mask);
  EXPECT_NEAR(fusion_error(loss, theta_new, inst.oracle.min_loss), 1.0, 1e-12);
}

TEST(FusionError, InvariantUnderConstantShiftOfBothEvaluations) {
  const BoundInstance inst = identity_instance();
  const FlatParams theta_new = fuse_masked(inst.theta0, inst.trained_phi, inst.mask);
  const double base =
      fusion_error([&](const FlatParams& t) { return inst.q.loss(t); }, theta_new,
                   inst.oracle.min_loss);
  const double shift = 17.25;
  const double shifted =
      fusion_error([&](const FlatParams& t) { return inst.q.loss(t) + shift; }, theta_new,
                   inst.oracle.min_loss + shift);
  EXPECT_NEAR(base, shifted, 1e-12);
}

TEST(FusionError, OracleInconsistencyThrows) {
  const BoundInstance inst = identity_instance();
  EXPECT_THROW(fusion_error([&](const FlatParams& t) { return inst.q.loss(t); },
                            inst.oracle.theta_opt, inst.oracle.min_loss + 1.0),
               Error);
}

TEST(GapDecomposition, IdentityInstanceComponents) {
  const BoundInstance inst = identity_instance();
  const FlatParams theta_new = fuse_masked(inst.theta0, inst.trained_phi, inst.mask);
  const GapDecomposition gap = gap_decomposition(inst, theta_new);
  EXPECT_NEAR(gap.t1, 0.0, 1e-15);
  EXPECT_NEAR(gap.t2, 0.0, 1e-15);
  EXPECT_NEAR(gap.t3, 1.0, 1e-12);
}

TEST(GapDecomposition, TelescopesExactlyOnRandomInstances) {
  for (std::size_t i = 0; i < 30; ++i) {
    const BoundInstance inst = random_bound_instance(6 + i % 8, 12 + i % 8, 0.5, 77, i, 64);
    const FlatParams theta_new = fuse_masked(inst.theta0, inst.trained_phi, inst.mask);
    const GapDecomposition gap = gap_decomposition(inst, theta_new);
    const double eps_fusion =
        fusion_error([&](const FlatParams& t) { return inst.q.loss(t); }, theta_new,
                     inst.oracle.min_loss);
    EXPECT_NEAR(gap.total(), eps_fusion, 1e-12 * std::max(1.0, std::fabs(eps_fusion)));
    EXPECT_GE(eps_fusion, -1e-12);
    EXPECT_GE(gap.t3, -1e-9);
    // under the embedding convention theta_new equals phi*, so t2 vanishes
    EXPECT_DOUBLE_EQ(gap.t2, 0.0);
  }
}

// ---- lemma 1 ----

TEST(Lemma1, ExtractionPipelineGivesZeroResidual) {
  const BoundInstance inst = identity_instance();
  const FlatParams theta_new = fuse_masked(inst.theta0, inst.trained_phi, inst.mask);
  const Lemma1Result r = lemma1_check(inst.theta0, theta_new, inst.trained_phi, inst.mask);
  EXPECT_DOUBLE_EQ(r.equality_residual, 0.0);
  EXPECT_DOUBLE_EQ(r.lhs, 0.0);
  EXPECT_TRUE(r.bound_holds);
}

TEST(Lemma1, FirstLineEqualityHoldsForSyntheticOffMaskPhi) {
  Rng rng(8);
  auto layout = flat_layout(10);
  for (int trial = 0; trial < 20; ++trial) {
    FlatParams theta0 = FlatParams::zeros(layout), phi = FlatParams::zeros(layout);
    for (std::size_t d = 0; d < 10; ++d) {
      theta0[d] = rng.normal();
      phi[d] = rng.normal();  // deliberately differs off-mask too
    }
    SubspaceMask mask = SubspaceMask::all(layout, false);
    for (auto& b : mask.keep) b = rng.uniform01() < 0.5;
    const FlatParams theta_new = fuse_masked(theta0, phi, mask);
    const Lemma1Result r = lemma1_check(theta0, theta_new, phi, mask);
    EXPECT_LE(r.equality_residual, 1e-12 * std::max(1.0, r.lhs));
  }
}

TEST(Lemma1, BoundSideDominatesUnderEmbeddingConvention) {
  Rng rng(9);
  auto layout = flat_layout(12);
  for (int trial = 0; trial < 100; ++trial) {
    FlatParams theta0 = FlatParams::zeros(layout);
    for (std::size_t d = 0; d < 12; ++d) theta0[d] = rng.normal();
    SubspaceMask mask = SubspaceMask::all(layout, false);
    for (auto& b : mask.keep) b = rng.uniform01() < 0.5;
    FlatParams phi = theta0;  // embedding: phi agrees off-mask
    for (std::size_t d = 0; d < 12; ++d)
      if (mask.keep[d]) phi[d] = rng.normal();
    const FlatParams theta_new = fuse_masked(theta0, phi, mask);
    const Lemma1Result r = lemma1_check(theta0, theta_new, phi, mask);
    EXPECT_TRUE(r.bound_holds);
    EXPECT_GE(r.bound_side, r.lhs - 1e-12);
  }
}

// ---- Lipschitz estimation ----

TEST(Lipschitz, ConstantLossHasZeroEstimate) {
  QuadraticLoss q;
  q.A = Mat(3, 2);  // all zeros
  q.b.assign(3, 1.0);
  ProbeBox box{{0.0, 0.0}, {1.0, 1.0}};
  const double l = lipschitz_estimate(
      [&](const std::vector<double>& t) { return q.grad_norm(t); }, box, 64, 5);
  EXPECT_DOUBLE_EQ(l, 0.0);
}

TEST(Lipschitz, ProbeEstimateBoundedByCornerOracle) {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t D = 2 + rng.below(6);  // corner enumeration up to 2^8
    QuadraticLoss q = identity_loss(D, 0.0);
    for (auto& v : q.b) v = rng.normal();
    ProbeBox box;
    box.lo.assign(D, 0.0);
    box.hi.assign(D, 1.0);
    const double est = lipschitz_estimate(
        [&](const std::vector<double>& t) { return q.grad_norm(t); }, box, 256,
        rng.next_u64());
    // for A = I the gradient norm is ||theta - b||, maximized at a corner
    double corner_max = 0.0;
    for (std::size_t bits = 0; bits < (1u << D); ++bits) {
      double acc = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        const double v = (bits >> d) & 1 ? 1.0 : 0.0;
        acc += (v - q.b[d]) * (v - q.b[d]);
      }
      corner_max = std::max(corner_max, std::sqrt(acc));
    }
    EXPECT_LE(est, corner_max + 1e-12);
    EXPECT_GT(est, 0.0);
  }
}

TEST(Lipschitz, MonotoneInProbeCountForNestedSets) {
  QuadraticLoss q = identity_loss(4, 0.3);
  ProbeBox box;
  box.lo.assign(4, -1.0);
  box.hi.assign(4, 1.0);
  auto gn = [&](const std::vector<double>& t) { return q.grad_norm(t); };
  double prev = 0.0;
  for (std::size_t n : {2u, 8u, 32u, 128u, 512u}) {
    const double est = lipschitz_estimate(gn, box, n, 42);
    EXPECT_GE(est, prev);
    prev = est;
  }
}

TEST(Lipschitz, TooFewProbesRejected) {
  QuadraticLoss q = identity_loss(2, 0.0);
  ProbeBox box{{0.0, 0.0}, {1.0, 1.0}};
  EXPECT_THROW(lipschitz_estimate(
                   [&](const std::vector<double>& t) { return q.grad_norm(t); }, box, 1, 1),
               ConfigError);
}

// ---- theorem bound ----

TEST(CheckBound, IdentityInstanceHandArithmetic) {
  const BoundInstance inst = identity_instance();
  EXPECT_DOUBLE_EQ(inst.alpha, 0.5);
  EXPECT_NEAR(inst.delta_sub, 0.0, 1e-15);
  const BoundCheck chk = check_bound(inst);
  EXPECT_NEAR(chk.lhs, 1.0, 1e-12);
  EXPECT_NEAR(chk.rhs, 2.0, 1e-12);  // 2 * ||theta0 - theta_opt|| * alpha = 2*2*0.5
  EXPECT_TRUE(chk.holds);
}

TEST(CheckBound, OptimalStartMakesBoundDeltaDriven) {
  Rng rng(11);
  QuadraticLoss q;
  q.A = Mat(8, 5);
  for (auto& v : q.A.a) v = rng.normal();
  auto layout = flat_layout(5);
  FlatParams theta0 = FlatParams::zeros(layout);
  for (std::size_t d = 0; d < 5; ++d) theta0[d] = rng.normal();
  q.b.assign(8, 0.0);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 5; ++c) q.b[r] += q.A.at(r, c) * theta0[c];

  SubspaceMask mask = first_k_mask(layout, 3);
  const OracleResult oracle = quadratic_oracle(q, mask, theta0);
  FlatParams phi = oracle.phi_opt_full;
  for (std::size_t d = 0; d < 3; ++d) phi[d] += 0.05 * rng.normal();  // on-mask perturbation

  const BoundInstance inst =
      make_bound_instance(std::move(q), std::move(mask), theta0, std::move(phi), 0.0, -1.0,
                          256, 7);
  const BoundCheck chk = check_bound(inst);
  // theta0 is the global optimum, so the third term contributes ~0 and the
  // bound reduces to the measured suboptimality delta
  EXPECT_NEAR(chk.rhs, inst.delta_sub, 1e-6);
  EXPECT_LE(chk.lhs, chk.rhs + 1e-9);
  EXPECT_TRUE(chk.holds);
}

TEST(CheckBound, RandomSweepHolds) {
  Rng rng(12);
  for (std::size_t i = 0; i < 100; ++i) {
    const std::size_t D = 2 + rng.below(15);  // up to 16
    const std::size_t m = D + 4;
    const double frac = 0.25 + 0.5 * rng.uniform01();
    const BoundInstance inst = random_bound_instance(D, m, frac, 2024, i, 256);
    const BoundCheck chk = check_bound(inst);
    EXPECT_TRUE(chk.holds) << "instance " << i << ": lhs=" << chk.lhs << " rhs=" << chk.rhs;
  }
}

TEST(MakeBoundInstance, RejectsEmbeddingViolation) {
  QuadraticLoss q = identity_loss(3, 1.0);
  auto layout = flat_layout(3);
  FlatParams theta0 = FlatParams::zeros(layout);
  SubspaceMask mask = first_k_mask(layout, 1);
  FlatParams phi = theta0;
  phi[2] = 0.5;  // off-mask disagreement
  EXPECT_THROW(
      make_bound_instance(std::move(q), std::move(mask), std::move(theta0), std::move(phi)),
      ConfigError);
}

}  // namespace
}  // namespace fedproxy
