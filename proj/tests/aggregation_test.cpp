#include <gtest/gtest.h>

#include <cmath>

#include "fedproxy/aggregation.hpp"
#include "fedproxy/rng.hpp"
#include "test_support.hpp"

namespace fedproxy {
namespace {

LayoutPtr layout_of(std::size_t d) { return ParamLayout::make({{"p", d}}); }

FlatParams fp(const LayoutPtr& l, std::vector<double> v) { return FlatParams(l, std::move(v)); }

TaskVector tv(const LayoutPtr& l, std::vector<double> v, int id = 0) {
  return TaskVector{fp(l, std::move(v)), id, 0};
}

// ---- analyze_round ----

TEST(AnalyzeRound, ConsensusPairHasZeroHeterogeneityAndUniformWeights) {
  auto l = layout_of(3);
  const std::vector<TaskVector> taus{tv(l, {1, 2, 3}, 0), tv(l, {1, 2, 3}, 1)};
  const auto a = analyze_round(taus, FlatParams::zeros(l));
  EXPECT_NEAR(a.S.at(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(a.h[0], 0.0, 1e-12);
  EXPECT_NEAR(a.h[1], 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(a.w[0], 0.5);
  EXPECT_DOUBLE_EQ(a.w[1], 0.5);
}

TEST(AnalyzeRound, OrthogonalPairIsMaximallyHeterogeneous) {
  auto l = layout_of(2);
  const std::vector<TaskVector> taus{tv(l, {1, 0}, 0), tv(l, {0, 1}, 1)};
  const auto a = analyze_round(taus, FlatParams::zeros(l));
  EXPECT_DOUBLE_EQ(a.h[0], 1.0);
  EXPECT_DOUBLE_EQ(a.h[1], 1.0);
}

TEST(AnalyzeRound, ConflictScoreHandEvaluation) {
  auto l = layout_of(4);
  // per-dimension signs across 4 clients:
  //   dim0 (+,+,+,-) -> 0.5   dim1 (+,+,+,+) -> 0
  //   dim2 (+,+,-,-) -> 1     dim3 all-zero  -> 0 (pinned)
  const std::vector<TaskVector> taus{
      tv(l, {1, 1, 1, 0}, 0),
      tv(l, {2, 1, 3, 0}, 1),
      tv(l, {1, 2, -1, 0}, 2),
      tv(l, {-3, 1, -2, 0}, 3),
  };
  const auto a = analyze_round(taus, FlatParams::zeros(l));
  EXPECT_DOUBLE_EQ(a.C[0], 0.5);
  EXPECT_DOUBLE_EQ(a.C[1], 0.0);
  EXPECT_DOUBLE_EQ(a.C[2], 1.0);
  EXPECT_DOUBLE_EQ(a.C[3], 0.0);
}

TEST(AnalyzeRound, InvariantsOnRandomVectors) {
  Rng rng(5);
  auto l = layout_of(20);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TaskVector> taus;
    const std::size_t K = 2 + rng.below(5);
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> v(20);
      for (auto& x : v) x = rng.normal();
      taus.push_back(tv(l, std::move(v), static_cast<int>(k)));
    }
    const auto a = analyze_round(taus, FlatParams::zeros(l));
    double wsum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      EXPECT_GE(a.h[k], 0.0);
      EXPECT_LE(a.h[k], 1.0);
      EXPECT_GE(a.h_norm[k], 0.0);
      EXPECT_LE(a.h_norm[k], 1.0);
      wsum += a.w[k];
      EXPECT_DOUBLE_EQ(a.S.at(k, k), 1.0);
      for (std::size_t j = 0; j < K; ++j) EXPECT_DOUBLE_EQ(a.S.at(k, j), a.S.at(j, k));
    }
    EXPECT_NEAR(wsum, 1.0, 1e-9);
    for (double c : a.C) {
      EXPECT_GE(c, 0.0);
      EXPECT_LE(c, 1.0);
    }
  }
}

TEST(AnalyzeRound, SingleClientRejected) {
  auto l = layout_of(2);
  const std::vector<TaskVector> taus{tv(l, {1, 0}, 0)};
  EXPECT_THROW(analyze_round(taus, FlatParams::zeros(l)), ConfigError);
}

// ---- regularizer gradients ----

TEST(PcrGrad, ZeroAtGlobalAndZeroConflict) {
  auto l = layout_of(3);
  const FlatParams g = fp(l, {1, 2, 3});
  EXPECT_EQ(pcr_grad(g, g, {0.5, 0.5, 0.5}, 1e-3).values(),
            (std::vector<double>{0, 0, 0}));
  const FlatParams far = fp(l, {5, -5, 9});
  EXPECT_EQ(pcr_grad(far, g, {0, 0, 0}, 1e-3).values(), (std::vector<double>{0, 0, 0}));
}

TEST(PcrGrad, DirectComponentValue) {
  auto l = layout_of(1);
  const auto g = pcr_grad(fp(l, {3.0}), fp(l, {1.0}), {0.5}, 1e-5);
  EXPECT_DOUBLE_EQ(g[0], 2.0 * 1e-5 * 0.5 * 2.0);
}

TEST(PcrGrad, MatchesFiniteDifferencesOfPenalty) {
  Rng rng(7);
  auto l = layout_of(10);
  FlatParams cur = FlatParams::zeros(l), glob = FlatParams::zeros(l);
  std::vector<double> conflict(10);
  for (std::size_t d = 0; d < 10; ++d) {
    cur[d] = rng.normal();
    glob[d] = rng.normal();
    conflict[d] = rng.uniform01();
  }
  const double lambda = 0.37;
  const FlatParams analytic = pcr_grad(cur, glob, conflict, lambda);
  const auto fd = test::central_diff_grad(
      [&](const FlatParams& p) {
        double acc = 0.0;
        for (std::size_t d = 0; d < p.dim(); ++d) {
          const double diff = p[d] - glob[d];
          acc += conflict[d] * diff * diff;
        }
        return lambda * acc;
      },
      cur);
  for (std::size_t d = 0; d < 10; ++d) EXPECT_LT(test::rel_err(analytic[d], fd[d]), 1e-6);
}

TEST(FedproxGrad, Examples) {
  auto l = layout_of(2);
  const FlatParams g = fp(l, {1, 1});
  EXPECT_EQ(fedprox_grad(g, g, 0.5).values(), (std::vector<double>{0, 0}));
  EXPECT_EQ(fedprox_grad(fp(l, {2, -1}), g, 0.0).values(), (std::vector<double>{0, 0}));
  const auto out = fedprox_grad(fp(l, {2, -1}), g, 0.1);
  EXPECT_DOUBLE_EQ(out[0], 0.1);
  EXPECT_DOUBLE_EQ(out[1], -0.2);
}

TEST(FedproxGrad, MatchesFiniteDifferencesOfProximalTerm) {
  Rng rng(8);
  auto l = layout_of(6);
  FlatParams cur = FlatParams::zeros(l), glob = FlatParams::zeros(l);
  for (std::size_t d = 0; d < 6; ++d) {
    cur[d] = rng.normal();
    glob[d] = rng.normal();
  }
  const double mu = 0.21;
  const FlatParams analytic = fedprox_grad(cur, glob, mu);
  const auto fd = test::central_diff_grad(
      [&](const FlatParams& p) {
        double acc = 0.0;
        for (std::size_t d = 0; d < p.dim(); ++d) {
          const double diff = p[d] - glob[d];
          acc += diff * diff;
        }
        return 0.5 * mu * acc;
      },
      cur);
  for (std::size_t d = 0; d < 6; ++d) EXPECT_LT(test::rel_err(analytic[d], fd[d]), 1e-6);
}

// ---- sparsification ----

TEST(HtiesSparsify, FullRetentionIsUnchanged) {
  auto l = layout_of(5);
  const TaskVector t = tv(l, {5, -4, 3, 2, 1});
  EXPECT_EQ(hties_sparsify(t, 1.0).delta.values(), t.delta.values());
}

TEST(HtiesSparsify, KeepsTopMagnitudes) {
  auto l = layout_of(5);
  const TaskVector t = tv(l, {5, -4, 3, 2, 1});
  EXPECT_EQ(hties_sparsify(t, 0.4).delta.values(), (std::vector<double>{5, -4, 0, 0, 0}));
}

TEST(HtiesSparsify, TiesKeepLowerIndex) {
  auto l = layout_of(4);
  const TaskVector t = tv(l, {1, -1, 1, -1});
  EXPECT_EQ(hties_sparsify(t, 0.5).delta.values(), (std::vector<double>{1, -1, 0, 0}));
}

TEST(HtiesSparsify, RetentionFormula) {
  AggConfig cfg;  // r0 = 1.0, delta_adapt = 0.2 defaults
  EXPECT_DOUBLE_EQ(retention_rate(cfg, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(retention_rate(cfg, 1.0), 0.8);
  cfg.delta_adapt = 2.0;
  EXPECT_DOUBLE_EQ(retention_rate(cfg, 1.0), 0.0);
}

TEST(HtiesSparsify, EightyPercentRetentionKeepsTopEighty) {
  auto l = layout_of(10);
  const TaskVector t = tv(l, {10, -9, 8, -7, 6, -5, 4, -3, 2, -1});
  const auto out = hties_sparsify(t, 0.8);
  EXPECT_EQ(out.delta.values(),
            (std::vector<double>{10, -9, 8, -7, 6, -5, 4, -3, 0, 0}));
}

// ---- H-TIES merge ----

TEST(HtiesMerge, WorkedTwoClientExample) {
  auto l = layout_of(3);
  const std::vector<TaskVector> sparsified{
      tv(l, {0.6, -0.5, 0.2}, 0),
      tv(l, {0.3, -0.3, -0.2}, 1),
  };
  const auto delta = hties_merge(sparsified, {0.5, 0.5}, 1.1, 1e-8);
  EXPECT_NEAR(delta[0], 0.45, 1e-12);
  EXPECT_NEAR(delta[1], -0.4, 1e-12);
  EXPECT_DOUBLE_EQ(delta[2], 0.0);
}

TEST(HtiesMerge, PerfectConflictCancels) {
  auto l = layout_of(4);
  const std::vector<TaskVector> sparsified{
      tv(l, {1, -2, 3, -4}, 0),
      tv(l, {-1, 2, -3, 4}, 1),
  };
  const auto delta = hties_merge(sparsified, {0.5, 0.5}, 1.1, 1e-8);
  for (std::size_t d = 0; d < 4; ++d) EXPECT_DOUBLE_EQ(delta[d], 0.0);
}

TEST(HtiesMerge, ConsensusIdempotenceUniformWeightsExact) {
  auto l = layout_of(5);
  const std::vector<double> base{0.5, -1.25, 0.0, 2.0, -0.125};
  std::vector<TaskVector> sparsified;
  for (int k = 0; k < 4; ++k) sparsified.push_back(tv(l, base, k));
  const auto delta = hties_merge(sparsified, {0.25, 0.25, 0.25, 0.25}, 1.1, 1e-8);
  EXPECT_EQ(delta.values(), base);
}

TEST(HtiesMerge, ConsensusIdempotenceArbitraryWeights) {
  Rng rng(10);
  auto l = layout_of(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> base(12);
    for (auto& v : base) v = rng.normal();
    const std::size_t K = 2 + rng.below(4);
    std::vector<double> w(K);
    double sum = 0.0;
    for (auto& x : w) {
      x = 0.1 + rng.uniform01();
      sum += x;
    }
    for (auto& x : w) x /= sum;
    std::vector<TaskVector> sparsified;
    for (std::size_t k = 0; k < K; ++k) sparsified.push_back(tv(l, base, static_cast<int>(k)));
    const auto delta = hties_merge(sparsified, w, 1.5, 1e-8);
    for (std::size_t d = 0; d < 12; ++d)
      EXPECT_NEAR(delta[d], base[d], 1e-12 * std::max(1.0, std::fabs(base[d])));
  }
}

TEST(HtiesMerge, DominanceBranchesAreMutuallyExclusive) {
  Rng rng(11);
  const double rhos[] = {1.0, 1.1, 2.0};
  for (double rho : rhos) {
    for (int i = 0; i < 100000; ++i) {
      const double P = std::fabs(rng.normal());
      const double N = std::fabs(rng.normal()) * (i % 7 == 0 ? 0.0 : 1.0);
      const Dominance d = dominance(P, N, rho, 1e-8);
      ASSERT_FALSE(d.positive && d.negative) << "P=" << P << " N=" << N << " rho=" << rho;
    }
  }
}

TEST(HtiesMerge, MergedSignIsZeroOrDominant) {
  Rng rng(12);
  auto l = layout_of(40);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t K = 3 + rng.below(3);
    std::vector<TaskVector> sparsified;
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> v(40);
      for (auto& x : v) x = rng.normal();
      sparsified.push_back(tv(l, std::move(v), static_cast<int>(k)));
    }
    const std::vector<double> w(K, 1.0 / static_cast<double>(K));
    const auto delta = hties_merge(sparsified, w, 1.1, 1e-8);
    for (std::size_t d = 0; d < 40; ++d) {
      double P = 0.0, N = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double v = w[k] * sparsified[k].delta[d];
        if (v > 0.0) P += v;
        else N += -v;
      }
      if (delta[d] > 0.0) EXPECT_GE(P / (N + 1e-8), 1.1);
      if (delta[d] < 0.0) EXPECT_GE(N / (P + 1e-8), 1.1);
    }
  }
}

TEST(HtiesMerge, RejectsBadWeightSumAndEmptyList) {
  auto l = layout_of(2);
  const std::vector<TaskVector> one{tv(l, {1, 2}, 0)};
  EXPECT_THROW(hties_merge({}, {}, 1.1, 1e-8), ConfigError);
  EXPECT_THROW(hties_merge(one, {0.8}, 1.1, 1e-8), ConfigError);
}

// ---- TIES baseline ----

TEST(TiesBaseline, IdenticalClientsReturnTrimmedVector) {
  auto l = layout_of(5);
  std::vector<TaskVector> taus;
  for (int k = 0; k < 3; ++k) taus.push_back(tv(l, {5, -4, 3, 2, 1}, k));
  const auto delta = ties_merge_baseline(taus, 0.4, 1.0);
  EXPECT_EQ(delta.values(), (std::vector<double>{5, -4, 0, 0, 0}));
}

TEST(TiesBaseline, OppositeEqualMagnitudeElectsPositive) {
  auto l = layout_of(2);
  const std::vector<TaskVector> taus{tv(l, {2, -3}, 0), tv(l, {-2, 3}, 1)};
  const auto delta = ties_merge_baseline(taus, 1.0, 1.0);
  // tie in summed magnitude; + elected; mean over the single conforming entry
  EXPECT_DOUBLE_EQ(delta[0], 2.0);
  EXPECT_DOUBLE_EQ(delta[1], 3.0);
}

TEST(TiesBaseline, DensityOneSameSignIsPlainMean) {
  auto l = layout_of(3);
  const std::vector<TaskVector> taus{tv(l, {1, 2, 3}, 0), tv(l, {3, 4, 5}, 1)};
  const auto delta = ties_merge_baseline(taus, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(delta[0], 2.0);
  EXPECT_DOUBLE_EQ(delta[1], 3.0);
  EXPECT_DOUBLE_EQ(delta[2], 4.0);
}

TEST(TiesBaseline, LambdaScalesResult) {
  auto l = layout_of(2);
  const std::vector<TaskVector> taus{tv(l, {2, -2}, 0)};
  const auto delta = ties_merge_baseline(taus, 1.0, 0.5);
  EXPECT_DOUBLE_EQ(delta[0], 1.0);
  EXPECT_DOUBLE_EQ(delta[1], -1.0);
}

// ---- FedAvg and update application ----

TEST(FedavgMerge, Examples) {
  auto l = layout_of(2);
  const std::vector<FlatParams> identical{fp(l, {3, 4}), fp(l, {3, 4})};
  EXPECT_EQ(fedavg_merge(identical, {0.5, 0.5}).values(), (std::vector<double>{3, 4}));
  const std::vector<FlatParams> pair{fp(l, {0, 0}), fp(l, {2, 2})};
  EXPECT_EQ(fedavg_merge(pair, {0.5, 0.5}).values(), (std::vector<double>{1, 1}));
  EXPECT_EQ(fedavg_merge(pair, {1.0, 0.0}).values(), (std::vector<double>{0, 0}));
}

TEST(ApplyUpdate, ExamplesAndAdditivity) {
  auto l = layout_of(2);
  EXPECT_EQ(apply_update(fp(l, {1, 1}), fp(l, {0, 0})).values(), (std::vector<double>{1, 1}));
  EXPECT_EQ(apply_update(fp(l, {1, 1}), fp(l, {0.5, -0.5})).values(),
            (std::vector<double>{1.5, 0.5}));
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    FlatParams g = FlatParams::zeros(l), d1 = FlatParams::zeros(l), d2 = FlatParams::zeros(l);
    for (std::size_t i = 0; i < 2; ++i) {
      g[i] = rng.normal();
      d1[i] = rng.normal();
      d2[i] = rng.normal();
    }
    const auto chained = apply_update(apply_update(g, d1), d2);
    const auto summed = apply_update(g, add(d1, d2));
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(chained[i], summed[i], 1e-12);
  }
}

// ---- run_round ----

struct RoundFixture {
  ResidualStack proxy = ResidualStack::init_random(3, 4, 1, 2, 97);
  ClientConfig ccfg;
  AggConfig agg;

  RoundFixture() {
    ccfg.lr = 0.05;
    ccfg.epochs = 1;
    ccfg.batch_size = 16;
    ccfg.seed = 123;
  }

  TaskSpec task(std::uint64_t own, double sign, std::uint32_t shard = 0) const {
    TaskSpec t;
    t.input_dim = 3;
    t.shared_seed = 1000;
    t.own_seed = own;
    t.own_sign = sign;
    t.noise_sd = 0.05;
    t.seed = 2000 + own;
    t.shard = shard;
    t.train_samples = 64;
    return t;
  }
};

TEST(RunRound, SingleClientFedavgAdoptsClientParams) {
  RoundFixture f;
  f.agg.method = AggMethod::fedavg;
  const std::vector<TaskSpec> tasks{f.task(1, 1.0)};
  RoundState state = RoundState::initial(f.proxy.flatten());
  const FlatParams global0 = state.global;
  run_round(state, f.proxy, tasks, f.agg, f.ccfg, 32);

  // reproduce the client locally
  ResidualStack m = f.proxy;
  m.load(global0);
  const Batch data =
      shuffle_rows(train_set(tasks[0]), round_shuffle_seed(f.ccfg.seed, tasks[0], 0));
  const std::size_t nb = (data.size() + f.ccfg.batch_size - 1) / f.ccfg.batch_size;
  const TrainResult tr = local_sgd_on(m, data, tasks[0].kind,
                                      f.ccfg.epochs * static_cast<long>(nb), f.ccfg.lr,
                                      f.ccfg.batch_size);
  EXPECT_EQ(state.global.values(), tr.params.values());
}

TEST(RunRound, IdenticalClientsMakeFedproxyIdempotent) {
  RoundFixture f;
  f.agg.method = AggMethod::fedproxy;
  // same task, same shard, same data: all clients produce the same update
  std::vector<TaskSpec> tasks(3, f.task(2, 1.0));
  RoundState state = RoundState::initial(f.proxy.flatten());
  const FlatParams global0 = state.global;
  run_round(state, f.proxy, tasks, f.agg, f.ccfg, 32);

  ResidualStack m = f.proxy;
  m.load(global0);
  const Batch data =
      shuffle_rows(train_set(tasks[0]), round_shuffle_seed(f.ccfg.seed, tasks[0], 0));
  const std::size_t nb = (data.size() + f.ccfg.batch_size - 1) / f.ccfg.batch_size;
  const TrainResult tr = local_sgd_on(m, data, tasks[0].kind,
                                      f.ccfg.epochs * static_cast<long>(nb), f.ccfg.lr,
                                      f.ccfg.batch_size);
  for (std::size_t d = 0; d < state.global.dim(); ++d)
    EXPECT_NEAR(state.global[d], tr.params[d], 1e-12);
}

TEST(RunRound, RoundZeroPcrTermVanishes) {
  // C starts at zero, so fedproxy and fedproxy_no_pcr coincide on round 0
  RoundFixture f;
  std::vector<TaskSpec> tasks{f.task(3, 1.0, 0), f.task(3, -1.0, 1)};

  f.agg.method = AggMethod::fedproxy;
  f.ccfg.lambda_reg = 0.05;
  RoundState s1 = RoundState::initial(f.proxy.flatten());
  run_round(s1, f.proxy, tasks, f.agg, f.ccfg, 32);

  f.agg.method = AggMethod::fedproxy_no_pcr;
  RoundState s2 = RoundState::initial(f.proxy.flatten());
  run_round(s2, f.proxy, tasks, f.agg, f.ccfg, 32);

  EXPECT_EQ(s1.global.values(), s2.global.values());
}

TEST(RunRound, LambdaZeroMakesPcrAblationBitIdentical) {
  RoundFixture f;
  f.ccfg.lambda_reg = 0.0;
  std::vector<TaskSpec> tasks{f.task(4, 1.0, 0), f.task(4, -1.0, 1), f.task(5, 1.0, 2)};

  f.agg.method = AggMethod::fedproxy;
  RoundState s1 = RoundState::initial(f.proxy.flatten());
  for (int t = 0; t < 2; ++t) run_round(s1, f.proxy, tasks, f.agg, f.ccfg, 32);

  f.agg.method = AggMethod::fedproxy_no_pcr;
  RoundState s2 = RoundState::initial(f.proxy.flatten());
  for (int t = 0; t < 2; ++t) run_round(s2, f.proxy, tasks, f.agg, f.ccfg, 32);

  EXPECT_EQ(s1.global.values(), s2.global.values());
  EXPECT_EQ(s1.conflict, s2.conflict);
}

TEST(RunRound, NoHtiesEqualsFedavgOverPcrClients) {
  RoundFixture f;
  f.agg.method = AggMethod::fedproxy_no_hties;
  f.ccfg.lambda_reg = 0.01;
  std::vector<TaskSpec> tasks{f.task(6, 1.0, 0), f.task(6, -1.0, 1)};
  RoundState state = RoundState::initial(f.proxy.flatten());
  const FlatParams global0 = state.global;

  // independently train both PCR clients (conflict is all-zero on round 0)
  std::vector<FlatParams> clients;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    ResidualStack m = f.proxy;
    m.load(global0);
    const Batch data = shuffle_rows(train_set(tasks[k]),
                                    round_shuffle_seed(f.ccfg.seed, tasks[k], 0));
    const std::size_t nb = (data.size() + f.ccfg.batch_size - 1) / f.ccfg.batch_size;
    std::vector<double> conflict(global0.dim(), 0.0);
    const double lambda = f.ccfg.lambda_reg;
    ExtraGrad extra = [&](const FlatParams& cur, FlatParams& g) {
      for (std::size_t d = 0; d < g.dim(); ++d)
        g[d] += 2.0 * lambda * conflict[d] * (cur[d] - global0[d]);
    };
    clients.push_back(local_sgd_on(m, data, tasks[k].kind,
                                   f.ccfg.epochs * static_cast<long>(nb), f.ccfg.lr,
                                   f.ccfg.batch_size, extra)
                          .params);
  }
  run_round(state, f.proxy, tasks, f.agg, f.ccfg, 32);

  // mean computed in a different summation order than fedavg_merge
  for (std::size_t d = 0; d < global0.dim(); ++d) {
    const double mean = (clients[0][d] + clients[1][d]) / 2.0;
    EXPECT_NEAR(state.global[d], mean, 1e-12);
  }
}

TEST(RunRound, DivergencePropagatesWithClientContext) {
  RoundFixture f;
  f.ccfg.lr = 1e7;
  std::vector<TaskSpec> tasks{f.task(7, 1.0, 0), f.task(7, -1.0, 1)};
  RoundState state = RoundState::initial(f.proxy.flatten());
  try {
    run_round(state, f.proxy, tasks, f.agg, f.ccfg, 32);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("client"), std::string::npos);
  }
}

TEST(ConfigDefaults, ShipReferenceValues) {
  const AggConfig agg;
  EXPECT_DOUBLE_EQ(agg.r0, 1.0);
  EXPECT_DOUBLE_EQ(agg.delta_adapt, 0.2);
  EXPECT_DOUBLE_EQ(agg.rho, 1.1);
  const ClientConfig ccfg;
  EXPECT_DOUBLE_EQ(ccfg.lambda_reg, 1e-5);
}

}  // namespace
}  // namespace fedproxy
