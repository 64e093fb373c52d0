#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fedproxy/errors.hpp"
#include "fedproxy/flat_params.hpp"
#include "fedproxy/mat.hpp"
#include "fedproxy/model.hpp"
#include "fedproxy/tasks.hpp"
#include "fedproxy/train.hpp"

namespace fedproxy {

enum class AggMethod {
  fedproxy,
  fedavg,
  fedprox,
  ties,
  fedproxy_no_pcr,
  fedproxy_no_hties,
};

inline const char* agg_method_name(AggMethod m) {
  switch (m) {
    case AggMethod::fedproxy: return "fedproxy";
    case AggMethod::fedavg: return "fedavg";
    case AggMethod::fedprox: return "fedprox";
    case AggMethod::ties: return "ties";
    case AggMethod::fedproxy_no_pcr: return "fedproxy_no_pcr";
    case AggMethod::fedproxy_no_hties: return "fedproxy_no_hties";
  }
  return "?";
}

inline AggMethod parse_agg_method(const std::string& s) {
  if (s == "fedproxy") return AggMethod::fedproxy;
  if (s == "fedavg") return AggMethod::fedavg;
  if (s == "fedprox") return AggMethod::fedprox;
  if (s == "ties") return AggMethod::ties;
  if (s == "fedproxy_no_pcr") return AggMethod::fedproxy_no_pcr;
  if (s == "fedproxy_no_hties") return AggMethod::fedproxy_no_hties;
  throw ConfigError("unknown aggregation method '" + s + "'");
}

// Merge knobs. Defaults r0/delta_adapt/rho/lambda_reg ship as the reference
// configuration; eps stabilizes the dominance ratio.
struct AggConfig {
  double r0 = 1.0;           // base retention rate
  double delta_adapt = 0.2;  // heterogeneity penalty on retention
  double rho = 1.1;          // dominance threshold (>= 1)
  double eps = 1e-8;         // stability constant (> 0)
  AggMethod method = AggMethod::fedproxy;
  double ties_density = 0.2;  // ties baseline trim density
  double ties_lambda = 1.0;   // ties baseline merged-delta scale

  void validate() const {
    if (!(r0 >= 0.0 && r0 <= 1.0)) throw ConfigError("agg.r0 must be in [0,1]");
    if (!(delta_adapt >= 0.0)) throw ConfigError("agg.delta_adapt must be >= 0");
    if (!(rho >= 1.0)) throw ConfigError("agg.rho must be >= 1");
    if (!(eps > 0.0)) throw ConfigError("agg.eps must be > 0");
    if (!(ties_density > 0.0 && ties_density <= 1.0))
      throw ConfigError("agg.ties_density must be in (0,1]");
  }
};

struct ClientConfig {
  double lambda_reg = 1e-5;  // conflict-aware regularization coefficient
  double mu_prox = 0.1;      // proximal coefficient for the fedprox baseline
  double lr = 0.05;
  long epochs = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda_reg >= 0.0)) throw ConfigError("client.lambda_reg must be >= 0");
    if (!(mu_prox >= 0.0)) throw ConfigError("client.mu_prox must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("client.lr must be > 0");
    if (epochs < 0) throw ConfigError("client.epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("client.batch_size must be >= 1");
  }
};

// Per-round server-side analysis of client task vectors.
struct ServerAnalysis {
  Mat S;                        // K x K pairwise cosine similarity, unit diagonal
  std::vector<double> h;        // heterogeneity coefficient per client, [0,1]
  std::vector<double> h_norm;   // min-max normalized h
  std::vector<double> w;        // consensus softmax weights, sum 1
  std::vector<double> C;        // per-dimension conflict score, [0,1]
  int round = 0;
};

// Eqs: S from pairwise cosines; h_k = 1 - mean of positive similarities to
// peers; w = softmax of summed absolute similarities; C_d = 1 - |sum of
// update signs|/K with unanimously-zero dimensions pinned to 0.
inline ServerAnalysis analyze_round(const std::vector<TaskVector>& task_vectors,
                                    const FlatParams& prev_global) {
  const std::size_t K = task_vectors.size();
  if (K < 2) throw ConfigError("analyze_round: need at least 2 clients");
  for (const auto& tv : task_vectors)
    if (!same_layout(tv.delta.layout(), prev_global.layout()))
      throw DimError("analyze_round: task vector layout mismatch");

  ServerAnalysis a;
  a.round = task_vectors.front().round;
  a.S = Mat(K, K);
  for (std::size_t k = 0; k < K; ++k) a.S.at(k, k) = 1.0;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = k + 1; j < K; ++j) {
      const double s = cosine_similarity(task_vectors[k].delta, task_vectors[j].delta);
      a.S.at(k, j) = s;
      a.S.at(j, k) = s;
    }

  a.h.resize(K);
  std::vector<double> score(K);
  for (std::size_t k = 0; k < K; ++k) {
    double pos = 0.0, abs_sum = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      if (j == k) continue;
      pos += std::max(0.0, a.S.at(k, j));
      abs_sum += std::fabs(a.S.at(k, j));
    }
    a.h[k] = std::clamp(1.0 - pos / static_cast<double>(K - 1), 0.0, 1.0);
    score[k] = abs_sum;
  }

  // stable softmax
  const double mx = *std::max_element(score.begin(), score.end());
  double z = 0.0;
  a.w.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    a.w[k] = std::exp(score[k] - mx);
    z += a.w[k];
  }
  for (auto& v : a.w) v /= z;

  const double hmin = *std::min_element(a.h.begin(), a.h.end());
  const double hmax = *std::max_element(a.h.begin(), a.h.end());
  a.h_norm.assign(K, 0.0);
  if (hmax > hmin)
    for (std::size_t k = 0; k < K; ++k) a.h_norm[k] = (a.h[k] - hmin) / (hmax - hmin);

  const std::size_t D = prev_global.dim();
  a.C.assign(D, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    int sum = 0;
    bool any_nonzero = false;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = task_vectors[k].delta[d];
      if (v > 0.0) {
        ++sum;
        any_nonzero = true;
      } else if (v < 0.0) {
        --sum;
        any_nonzero = true;
      }
    }
    if (!any_nonzero) {
      a.C[d] = 0.0;  // unanimously untouched dimension: no disagreement
    } else {
      a.C[d] = std::clamp(
          1.0 - std::fabs(static_cast<double>(sum)) / static_cast<double>(K), 0.0, 1.0);
    }
  }
  return a;
}

// Gradient of lambda * sum_d C_d * (phi[d] - phi_prev[d])^2.
inline FlatParams pcr_grad(const FlatParams& current, const FlatParams& global_prev,
                           const std::vector<double>& conflict, double lambda_reg) {
  check_same_layout(current, global_prev, "pcr_grad");
  if (conflict.size() != current.dim())
    throw DimError("pcr_grad: conflict vector length mismatch");
  FlatParams g = FlatParams::zeros(current.layout());
  for (std::size_t d = 0; d < g.dim(); ++d)
    g[d] = 2.0 * lambda_reg * conflict[d] * (current[d] - global_prev[d]);
  return g;
}

// Gradient of (mu/2) * ||phi - phi_prev||^2.
inline FlatParams fedprox_grad(const FlatParams& current, const FlatParams& global_prev,
                               double mu) {
  check_same_layout(current, global_prev, "fedprox_grad");
  FlatParams g = FlatParams::zeros(current.layout());
  for (std::size_t d = 0; d < g.dim(); ++d) g[d] = mu * (current[d] - global_prev[d]);
  return g;
}

// r_k = clamp(r0 - delta_adapt * h_norm_k, 0, 1)
inline double retention_rate(const AggConfig& cfg, double h_norm_k) {
  return std::clamp(cfg.r0 - cfg.delta_adapt * h_norm_k, 0.0, 1.0);
}

namespace detail_agg {

// Indices of the ceil(r * D) largest-magnitude entries; ties keep the lower
// dimension index.
inline std::vector<std::size_t> top_magnitude(const std::vector<double>& v, double r) {
  const std::size_t D = v.size();
  std::size_t k = static_cast<std::size_t>(
      std::ceil(r * static_cast<double>(D) - 1e-9));
  if (k > D) k = D;
  std::vector<std::size_t> order(D);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ma = std::fabs(v[a]);
    const double mb = std::fabs(v[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  order.resize(k);
  return order;
}

}  // namespace detail_agg

// Magnitude trimming: keeps the ceil(r_k * D) largest-|.| entries.
inline TaskVector hties_sparsify(const TaskVector& tau, double r_k) {
  if (!(r_k >= 0.0 && r_k <= 1.0))
    throw ConfigError("hties_sparsify: retention must be in [0,1]");
  TaskVector out = tau;
  if (r_k >= 1.0) return out;
  const auto kept = detail_agg::top_magnitude(tau.delta.values(), r_k);
  FlatParams sparse = FlatParams::zeros(tau.delta.layout());
  for (std::size_t idx : kept) sparse[idx] = tau.delta[idx];
  out.delta = std::move(sparse);
  return out;
}

struct Dominance {
  bool positive = false;
  bool negative = false;
};

// Dominant-sign test for one dimension. For rho >= 1 and eps > 0 the two
// branches cannot fire together (P >= rho*N + rho*eps and N >= rho*P +
// rho*eps contradict).
inline Dominance dominance(double P, double N, double rho, double eps) {
  Dominance d;
  d.positive = P / (N + eps) >= rho;
  d.negative = N / (P + eps) >= rho;
  return d;
}

// Weighted conflict resolution: scale sparsified updates by w_k, find the
// dominant sign per dimension, and average the conforming updates,
// normalizing by the conforming clients' weight mass.
inline FlatParams hties_merge(const std::vector<TaskVector>& sparsified,
                              const std::vector<double>& w, double rho, double eps) {
  if (sparsified.empty()) throw ConfigError("hties_merge: empty client list");
  if (w.size() != sparsified.size()) throw ConfigError("hties_merge: weight count mismatch");
  double wsum = 0.0;
  for (double v : w) wsum += v;
  if (std::fabs(wsum - 1.0) > 1e-6)
    throw ConfigError("hties_merge: weights must sum to 1 (got " + std::to_string(wsum) + ")");
  if (rho < 1.0) throw ConfigError("hties_merge: rho must be >= 1");
  if (!(eps > 0.0)) throw ConfigError("hties_merge: eps must be > 0");
  const LayoutPtr& layout = sparsified.front().delta.layout();
  for (const auto& tv : sparsified)
    if (!same_layout(tv.delta.layout(), layout))
      throw DimError("hties_merge: task vector layout mismatch");

  const std::size_t K = sparsified.size();
  const std::size_t D = layout->total_dim();
  FlatParams delta = FlatParams::zeros(layout);
  for (std::size_t d = 0; d < D; ++d) {
    double P = 0.0, N = 0.0;
    double pos_sum = 0.0, neg_sum = 0.0, w_pos = 0.0, w_neg = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = w[k] * sparsified[k].delta[d];
      if (v > 0.0) {
        P += v;
        pos_sum += v;
        w_pos += w[k];
      } else if (v < 0.0) {
        N += -v;
        neg_sum += v;
        w_neg += w[k];
      }
    }
    const Dominance dom = dominance(P, N, rho, eps);
    if (dom.positive && dom.negative)
      throw Error("hties_merge: dominance branches co-fired (internal invariant violated)");
    if (dom.positive) {
      delta[d] = pos_sum / w_pos;
    } else if (dom.negative) {
      delta[d] = neg_sum / w_neg;
    }
    // else: contested dimension, leave 0
  }
  return delta;
}

// Classic trim-elect-disjoint-mean merge, unweighted; sign ties elect +.
inline FlatParams ties_merge_baseline(const std::vector<TaskVector>& task_vectors,
                                      double density, double lam) {
  if (task_vectors.empty()) throw ConfigError("ties_merge_baseline: empty client list");
  if (!(density > 0.0 && density <= 1.0))
    throw ConfigError("ties_merge_baseline: density must be in (0,1]");
  const LayoutPtr& layout = task_vectors.front().delta.layout();
  const std::size_t K = task_vectors.size();
  const std::size_t D = layout->total_dim();

  std::vector<FlatParams> trimmed;
  trimmed.reserve(K);
  for (const auto& tv : task_vectors) {
    if (!same_layout(tv.delta.layout(), layout))
      throw DimError("ties_merge_baseline: task vector layout mismatch");
    trimmed.push_back(hties_sparsify(tv, density).delta);
  }

  FlatParams delta = FlatParams::zeros(layout);
  for (std::size_t d = 0; d < D; ++d) {
    double pos_mag = 0.0, neg_mag = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = trimmed[k][d];
      if (v > 0.0) pos_mag += v;
      else if (v < 0.0) neg_mag += -v;
    }
    if (pos_mag == 0.0 && neg_mag == 0.0) continue;
    const int elected = pos_mag >= neg_mag ? 1 : -1;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = trimmed[k][d];
      if ((elected > 0 && v > 0.0) || (elected < 0 && v < 0.0)) {
        sum += v;
        ++count;
      }
    }
    if (count > 0) delta[d] = lam * sum / static_cast<double>(count);
  }
  return delta;
}

inline FlatParams fedavg_merge(const std::vector<FlatParams>& client_params,
                               const std::vector<double>& weights) {
  if (client_params.empty()) throw ConfigError("fedavg_merge: empty client list");
  if (weights.size() != client_params.size())
    throw ConfigError("fedavg_merge: weight count mismatch");
  double wsum = 0.0;
  for (double v : weights) wsum += v;
  if (std::fabs(wsum - 1.0) > 1e-6) throw ConfigError("fedavg_merge: weights must sum to 1");
  FlatParams out = FlatParams::zeros(client_params.front().layout());
  for (std::size_t k = 0; k < client_params.size(); ++k) {
    check_same_layout(client_params[k], out, "fedavg_merge");
    for (std::size_t d = 0; d < out.dim(); ++d) out[d] += weights[k] * client_params[k][d];
  }
  return out;
}

inline FlatParams apply_update(const FlatParams& global_prev, const FlatParams& delta) {
  return add(global_prev, delta);
}

// ---- round orchestration ----

struct RoundState {
  FlatParams global;
  std::vector<double> conflict;  // C from the previous round's analysis
  int round = 0;

  static RoundState initial(FlatParams global_params) {
    RoundState s;
    s.conflict.assign(global_params.dim(), 0.0);
    s.global = std::move(global_params);
    return s;
  }
};

struct RoundMetrics {
  struct ClientRow {
    int client_id = 0;
    double task_loss = 0.0;   // loss over the local train set after training
    double eval_loss = 0.0;   // trained client model on its held-out set
    double h = 0.0;
    double h_norm = 0.0;
    double weight = 0.0;
    double retention = 1.0;
    bool sparsified = false;  // whether retention applied (fedproxy family)
  };

  int round = 0;
  std::vector<ClientRow> clients;
  double mean_conflict = 0.0;     // mean of the newly computed C
  double delta_norm = 0.0;        // l2 norm of the applied global update
  double global_eval_loss = 0.0;  // new global model, unweighted mean over client eval sets
};

// Per-round batch order. Keyed by the task's data stream (seed + shard),
// not the client index, so clients holding identical data shuffle
// identically and the consensus-idempotence contract survives.
inline std::uint64_t round_shuffle_seed(std::uint64_t client_seed, const TaskSpec& task,
                                        int round) {
  const std::uint64_t stream = derive_seed(task.seed, "shuffle-stream", task.shard);
  return derive_seed(derive_seed(stream, "client-seed", client_seed), "round",
                     static_cast<std::uint64_t>(round));
}

namespace detail_agg {

inline ServerAnalysis degenerate_single_client(const TaskVector& tv) {
  ServerAnalysis a;
  a.round = tv.round;
  a.S = Mat(1, 1);
  a.S.at(0, 0) = 1.0;
  a.h = {0.0};
  a.h_norm = {0.0};
  a.w = {1.0};
  a.C.assign(tv.delta.dim(), 0.0);
  return a;
}

}  // namespace detail_agg

// One synchronous communication round: distribute (global, C), train each
// client with the method's regularizer, analyze task vectors, merge, apply.
// Clients are pure functions of the round-start state, run sequentially in
// client order so results never depend on scheduling.
inline RoundMetrics run_round(RoundState& state, const ResidualStack& proxy_arch,
                              const std::vector<TaskSpec>& tasks, const AggConfig& agg,
                              const ClientConfig& ccfg, std::size_t eval_samples = 256) {
  agg.validate();
  ccfg.validate();
  const std::size_t K = tasks.size();
  if (K < 1) throw ConfigError("run_round: need at least one client");

  const bool use_pcr = (agg.method == AggMethod::fedproxy ||
                        agg.method == AggMethod::fedproxy_no_hties) &&
                       ccfg.lambda_reg > 0.0;
  const bool use_prox = agg.method == AggMethod::fedprox && ccfg.mu_prox > 0.0;

  std::vector<FlatParams> client_params;
  std::vector<TaskVector> taus;
  RoundMetrics metrics;
  metrics.round = state.round;

  for (std::size_t k = 0; k < K; ++k) {
    ResidualStack model = proxy_arch;
    model.load(state.global);

    ExtraGrad extra;
    if (use_pcr) {
      const FlatParams& global_ref = state.global;
      const std::vector<double>& conflict_ref = state.conflict;
      const double lambda = ccfg.lambda_reg;
      extra = [&global_ref, &conflict_ref, lambda](const FlatParams& cur, FlatParams& g) {
        for (std::size_t d = 0; d < g.dim(); ++d)
          g[d] += 2.0 * lambda * conflict_ref[d] * (cur[d] - global_ref[d]);
      };
    } else if (use_prox) {
      const FlatParams& global_ref = state.global;
      const double mu = ccfg.mu_prox;
      extra = [&global_ref, mu](const FlatParams& cur, FlatParams& g) {
        for (std::size_t d = 0; d < g.dim(); ++d) g[d] += mu * (cur[d] - global_ref[d]);
      };
    }

    const Batch data =
        shuffle_rows(train_set(tasks[k]), round_shuffle_seed(ccfg.seed, tasks[k], state.round));
    const std::size_t nbatches = (data.size() + ccfg.batch_size - 1) / ccfg.batch_size;
    const long steps = ccfg.epochs * static_cast<long>(nbatches);
    TrainResult tr;
    try {
      tr = local_sgd_on(model, data, tasks[k].kind, steps, ccfg.lr, ccfg.batch_size, extra);
    } catch (const DivergenceError& e) {
      throw DivergenceError("round " + std::to_string(state.round) + ", client " +
                                std::to_string(k) + ": " + e.what(),
                            e.step());
    }

    RoundMetrics::ClientRow row;
    row.client_id = static_cast<int>(k);
    row.task_loss = task_loss(model, data, tasks[k].kind);
    row.eval_loss = task_loss(model, eval_set(tasks[k], eval_samples), tasks[k].kind);
    metrics.clients.push_back(row);

    taus.push_back(TaskVector{sub(tr.params, state.global), static_cast<int>(k), state.round});
    client_params.push_back(std::move(tr.params));
  }

  const ServerAnalysis analysis =
      K >= 2 ? analyze_round(taus, state.global) : detail_agg::degenerate_single_client(taus[0]);
  for (std::size_t k = 0; k < K; ++k) {
    metrics.clients[k].h = analysis.h[k];
    metrics.clients[k].h_norm = analysis.h_norm[k];
    metrics.clients[k].weight = analysis.w[k];
  }

  FlatParams new_global = state.global;
  const std::vector<double> uniform(K, 1.0 / static_cast<double>(K));
  switch (agg.method) {
    case AggMethod::fedproxy:
    case AggMethod::fedproxy_no_pcr: {
      std::vector<TaskVector> sparsified;
      sparsified.reserve(K);
      for (std::size_t k = 0; k < K; ++k) {
        const double r = retention_rate(agg, analysis.h_norm[k]);
        metrics.clients[k].retention = r;
        metrics.clients[k].sparsified = true;
        sparsified.push_back(hties_sparsify(taus[k], r));
      }
      const FlatParams delta = hties_merge(sparsified, analysis.w, agg.rho, agg.eps);
      metrics.delta_norm = norm2(delta);
      new_global = apply_update(state.global, delta);
      break;
    }
    case AggMethod::fedproxy_no_hties:
    case AggMethod::fedavg:
    case AggMethod::fedprox: {
      new_global = fedavg_merge(client_params, uniform);
      metrics.delta_norm = norm2(sub(new_global, state.global));
      break;
    }
    case AggMethod::ties: {
      const FlatParams delta = ties_merge_baseline(taus, agg.ties_density, agg.ties_lambda);
      metrics.delta_norm = norm2(delta);
      new_global = apply_update(state.global, delta);
      break;
    }
  }

  double csum = 0.0;
  for (double c : analysis.C) csum += c;
  metrics.mean_conflict = analysis.C.empty() ? 0.0 : csum / static_cast<double>(analysis.C.size());

  ResidualStack gmodel = proxy_arch;
  gmodel.load(new_global);
  double geval = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    geval += task_loss(gmodel, eval_set(tasks[k], eval_samples), tasks[k].kind);
  metrics.global_eval_loss = geval / static_cast<double>(K);

  state.global = std::move(new_global);
  state.conflict = analysis.C;
  state.round += 1;
  return metrics;
}

}  // namespace fedproxy
