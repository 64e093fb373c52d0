#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fedproxy/compression.hpp"
#include "fedproxy/errors.hpp"
#include "fedproxy/flat_params.hpp"
#include "fedproxy/mat.hpp"
#include "fedproxy/rng.hpp"

namespace fedproxy {

// Training-free plug-in fusion: overwrite the backbone dimensions named by
// the correspondence with the proxy's values; every other dimension is
// bit-identical to the input. Idempotent.
inline FlatParams plug_in_fuse(const FlatParams& backbone, const FlatParams& proxy,
                               const Correspondence& corr) {
  check_correspondence(corr, backbone.layout(), proxy.layout());
  FlatParams out = backbone;
  for (const auto& p : corr.pairs)
    for (std::size_t i = 0; i < p.length; ++i)
      out[p.backbone_offset + i] = proxy[p.proxy_offset + i];
  return out;
}

// Mask-level fusion used by the theory validator, where proxy-side vectors
// live in full space (embedding convention).
inline FlatParams fuse_masked(const FlatParams& theta0, const FlatParams& phi_full,
                              const SubspaceMask& mask) {
  check_same_layout(theta0, phi_full, "fuse_masked");
  if (!same_layout(theta0.layout(), mask.layout))
    throw DimError("fuse_masked: mask layout mismatch");
  FlatParams out = theta0;
  for (std::size_t d = 0; d < out.dim(); ++d)
    if (mask.keep[d]) out[d] = phi_full[d];
  return out;
}

inline LayoutPtr flat_layout(std::size_t dim, const std::string& name = "theta") {
  return ParamLayout::make({{name, dim}});
}

// L(theta) = 0.5 * ||A theta - b||^2 with analytic gradient A^T(A theta - b).
struct QuadraticLoss {
  Mat A;                  // m x D
  std::vector<double> b;  // m

  std::size_t dim() const { return A.cols; }

  double loss(const std::vector<double>& theta) const {
    double acc = 0.0;
    for (std::size_t r = 0; r < A.rows; ++r) {
      double v = -b[r];
      for (std::size_t c = 0; c < A.cols; ++c) v += A.at(r, c) * theta[c];
      acc += v * v;
    }
    return 0.5 * acc;
  }

  double loss(const FlatParams& theta) const { return loss(theta.values()); }

  std::vector<double> gradient(const std::vector<double>& theta) const {
    std::vector<double> resid(A.rows);
    for (std::size_t r = 0; r < A.rows; ++r) {
      double v = -b[r];
      for (std::size_t c = 0; c < A.cols; ++c) v += A.at(r, c) * theta[c];
      resid[r] = v;
    }
    std::vector<double> g(A.cols, 0.0);
    for (std::size_t c = 0; c < A.cols; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < A.rows; ++r) acc += A.at(r, c) * resid[r];
      g[c] = acc;
    }
    return g;
  }

  double grad_norm(const std::vector<double>& theta) const {
    double acc = 0.0;
    for (double v : gradient(theta)) acc += v * v;
    return std::sqrt(acc);
  }
};

namespace detail_fusion {

// Cholesky solve of an SPD system; returns false if the factorization hits
// a non-positive pivot.
inline bool cholesky_solve(Mat M, std::vector<double> rhs, std::vector<double>& out) {
  const std::size_t n = M.rows;
  for (std::size_t j = 0; j < n; ++j) {
    double d = M.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= M.at(j, k) * M.at(j, k);
    if (d <= 0.0) return false;
    const double ljj = std::sqrt(d);
    M.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = M.at(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= M.at(i, k) * M.at(j, k);
      M.at(i, j) = v / ljj;
    }
  }
  // forward then backward substitution
  for (std::size_t i = 0; i < n; ++i) {
    double v = rhs[i];
    for (std::size_t k = 0; k < i; ++k) v -= M.at(i, k) * rhs[k];
    rhs[i] = v / M.at(i, i);
  }
  out.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double v = rhs[i];
    for (std::size_t k = i + 1; k < n; ++k) v -= M.at(k, i) * out[k];
    out[i] = v / M.at(i, i);
  }
  return true;
}

// Normal-equations solve for min ||A_sub x - rhs|| over the columns listed
// in cols. Regularizes by 1e-10 I on a failed factorization.
struct SolveInfo {
  std::vector<double> x;
  bool regularized = false;
};

inline SolveInfo least_squares(const Mat& A, const std::vector<double>& target,
                               const std::vector<std::size_t>& cols) {
  const std::size_t n = cols.size();
  Mat M(n, n);
  std::vector<double> rhs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < A.rows; ++r) acc += A.at(r, cols[i]) * A.at(r, cols[j]);
      M.at(i, j) = acc;
      M.at(j, i) = acc;
    }
    double acc = 0.0;
    for (std::size_t r = 0; r < A.rows; ++r) acc += A.at(r, cols[i]) * target[r];
    rhs[i] = acc;
  }
  SolveInfo info;
  if (cholesky_solve(M, rhs, info.x)) return info;
  info.regularized = true;
  for (std::size_t i = 0; i < n; ++i) M.at(i, i) += 1e-10;
  if (!cholesky_solve(M, rhs, info.x))
    throw Error("quadratic_oracle: normal equations rank-deficient even after regularization");
  return info;
}

}  // namespace detail_fusion

struct OracleResult {
  FlatParams theta_opt;      // unconstrained least-squares optimum
  FlatParams phi_opt_full;   // subspace optimum, off-mask dims frozen at theta0
  double min_loss = 0.0;
  double subspace_min_loss = 0.0;
  bool regularized = false;  // any solve needed the 1e-10 ridge
};

// theta_opt by full normal equations; phi_opt by reduced normal equations
// over the masked (proxy) dimensions with the rest frozen at theta0.
inline OracleResult quadratic_oracle(const QuadraticLoss& q, const SubspaceMask& mask,
                                     const FlatParams& theta0) {
  const std::size_t D = q.dim();
  if (theta0.dim() != D || mask.keep.size() != D)
    throw DimError("quadratic_oracle: dimension mismatch");

  std::vector<std::size_t> all(D);
  std::iota(all.begin(), all.end(), 0);
  auto full = detail_fusion::least_squares(q.A, q.b, all);

  std::vector<std::size_t> free_cols;
  for (std::size_t d = 0; d < D; ++d)
    if (mask.keep[d]) free_cols.push_back(d);
  if (free_cols.empty()) throw ConfigError("quadratic_oracle: mask keeps no dimensions");

  // residual target once frozen dims contribute
  std::vector<double> target = q.b;
  for (std::size_t r = 0; r < q.A.rows; ++r) {
    double acc = 0.0;
    for (std::size_t d = 0; d < D; ++d)
      if (!mask.keep[d]) acc += q.A.at(r, d) * theta0[d];
    target[r] -= acc;
  }
  auto reduced = detail_fusion::least_squares(q.A, target, free_cols);

  OracleResult res;
  res.theta_opt = FlatParams(theta0.layout(), full.x);
  FlatParams phi = theta0;
  for (std::size_t i = 0; i < free_cols.size(); ++i) phi[free_cols[i]] = reduced.x[i];
  res.phi_opt_full = std::move(phi);
  res.min_loss = q.loss(res.theta_opt);
  res.subspace_min_loss = q.loss(res.phi_opt_full);
  res.regularized = full.regularized || reduced.regularized;
  return res;
}

// L(theta_new) - min_loss. A value below -1e-9 means the "optimum" used as
// the reference was not actually optimal.
inline double fusion_error(const std::function<double(const FlatParams&)>& loss_fn,
                           const FlatParams& theta_new, double min_loss) {
  const double err = loss_fn(theta_new) - min_loss;
  if (err < -1e-9)
    throw Error("fusion_error: negative gap " + std::to_string(err) +
                " (oracle inconsistency)");
  return err;
}

// Quadratic-oracle bundle for the fusion-error bound.
struct BoundInstance {
  QuadraticLoss q;
  SubspaceMask mask;       // proxy (kept) dimensions
  FlatParams theta0;       // original backbone parameters
  FlatParams trained_phi;  // full-space phi*, equal to theta0 off-mask
  double L_hat = 0.0;
  double delta_sub = 0.0;
  double eta_hat = 0.0;
  double alpha = 0.0;  // fraction of dimensions outside the mask
  OracleResult oracle;
};

struct GapDecomposition {
  double t1 = 0.0;  // proxy suboptimality:      L(phi*) - L(phi_opt)
  double t2 = 0.0;  // fusion vs proxy:          L(theta_new) - L(phi*)
  double t3 = 0.0;  // subspace approximation:   L(phi_opt) - L(theta_opt)
  double total() const { return t1 + t2 + t3; }
};

inline GapDecomposition gap_decomposition(const BoundInstance& inst,
                                          const FlatParams& theta_new) {
  GapDecomposition g;
  const double l_phi_star = inst.q.loss(inst.trained_phi);
  g.t1 = l_phi_star - inst.oracle.subspace_min_loss;
  g.t2 = inst.q.loss(theta_new) - l_phi_star;
  g.t3 = inst.oracle.subspace_min_loss - inst.oracle.min_loss;
  return g;
}

struct Lemma1Result {
  double equality_residual = 0.0;  // | ||theta_new - phi*||^2 - off-mask sum |
  double lhs = 0.0;                // ||theta_new - phi*||^2
  double bound_side = 0.0;         // ||theta0|off||^2 + ||phi*|off||^2
  bool bound_holds = false;
};

// First line of the parameter-distance decomposition holds for any phi*;
// the bound side is only guaranteed under the embedding convention (phi*
// equal to theta0 off-mask), where both sides vanish.
inline Lemma1Result lemma1_check(const FlatParams& theta0, const FlatParams& theta_new,
                                 const FlatParams& phi_star_full, const SubspaceMask& mask) {
  check_same_layout(theta0, theta_new, "lemma1_check");
  check_same_layout(theta0, phi_star_full, "lemma1_check");
  Lemma1Result r;
  double off_sum = 0.0, theta0_off = 0.0, phi_off = 0.0;
  for (std::size_t d = 0; d < theta0.dim(); ++d) {
    const double dn = theta_new[d] - phi_star_full[d];
    r.lhs += dn * dn;
    if (!mask.keep[d]) {
      const double dd = theta0[d] - phi_star_full[d];
      off_sum += dd * dd;
      theta0_off += theta0[d] * theta0[d];
      phi_off += phi_star_full[d] * phi_star_full[d];
    }
  }
  r.equality_residual = std::fabs(r.lhs - off_sum);
  r.bound_side = theta0_off + phi_off;
  r.bound_holds = r.bound_side >= r.lhs - 1e-12;
  return r;
}

// Bounding box of a point set, each dimension widened by `inflation` of its
// width (split evenly on both sides).
struct ProbeBox {
  std::vector<double> lo;
  std::vector<double> hi;
};

inline ProbeBox make_probe_box(const std::vector<const FlatParams*>& points,
                               double inflation = 0.1) {
  if (points.empty()) throw ConfigError("make_probe_box: no points");
  const std::size_t D = points.front()->dim();
  ProbeBox box;
  box.lo.assign(D, 0.0);
  box.hi.assign(D, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    double lo = (*points[0])[d], hi = lo;
    for (const FlatParams* p : points) {
      lo = std::min(lo, (*p)[d]);
      hi = std::max(hi, (*p)[d]);
    }
    const double pad = 0.5 * inflation * (hi - lo);
    box.lo[d] = lo - pad;
    box.hi[d] = hi + pad;
  }
  return box;
}

// Max gradient norm over uniform probes in the box. Probe i is a pure
// function of (seed, i), so estimates are nondecreasing in n_probes.
inline double lipschitz_estimate(const std::function<double(const std::vector<double>&)>& grad_norm,
                                 const ProbeBox& box, std::size_t n_probes,
                                 std::uint64_t seed) {
  if (n_probes < 2) throw ConfigError("lipschitz_estimate: n_probes must be >= 2");
  Rng rng(derive_seed(seed, "lipschitz-probes"));
  const std::size_t D = box.lo.size();
  std::vector<double> theta(D);
  double best = 0.0;
  for (std::size_t i = 0; i < n_probes; ++i) {
    for (std::size_t d = 0; d < D; ++d)
      theta[d] = box.lo[d] + (box.hi[d] - box.lo[d]) * rng.uniform01();
    best = std::max(best, grad_norm(theta));
  }
  return best;
}

// Assembles a BoundInstance: validates the embedding convention, runs the
// oracle, measures delta_sub, alpha and (unless provided) L_hat.
inline BoundInstance make_bound_instance(QuadraticLoss q, SubspaceMask mask,
                                         FlatParams theta0, FlatParams trained_phi,
                                         double eta_hat = 0.0, double l_hat_override = -1.0,
                                         std::size_t n_probes = 256,
                                         std::uint64_t probe_seed = 0) {
  const std::size_t D = q.dim();
  if (theta0.dim() != D || trained_phi.dim() != D || mask.keep.size() != D)
    throw DimError("make_bound_instance: dimension mismatch");
  std::size_t off = 0;
  for (std::size_t d = 0; d < D; ++d) {
    if (!mask.keep[d]) {
      ++off;
      if (trained_phi[d] != theta0[d])
        throw ConfigError(
            "make_bound_instance: trained_phi must equal theta0 on masked-out dims");
    }
  }

  BoundInstance inst;
  inst.oracle = quadratic_oracle(q, mask, theta0);
  inst.alpha = static_cast<double>(off) / static_cast<double>(D);
  inst.delta_sub = std::max(0.0, q.loss(trained_phi) - inst.oracle.subspace_min_loss);
  inst.eta_hat = eta_hat;

  const FlatParams theta_new = fuse_masked(theta0, trained_phi, mask);
  if (l_hat_override >= 0.0) {
    inst.L_hat = l_hat_override;
  } else {
    const ProbeBox box =
        make_probe_box({&theta0, &inst.oracle.theta_opt, &theta_new});
    inst.L_hat = lipschitz_estimate(
        [&q](const std::vector<double>& t) { return q.grad_norm(t); }, box, n_probes,
        probe_seed);
  }

  inst.q = std::move(q);
  inst.mask = std::move(mask);
  inst.theta0 = std::move(theta0);
  inst.trained_phi = std::move(trained_phi);
  return inst;
}

struct BoundCheck {
  double lhs = 0.0;  // measured fusion error
  double rhs = 0.0;  // delta + L*eta*||theta0|| + L*||theta0 - theta_opt||*alpha
  bool holds = false;
  double slack = 0.0;
  GapDecomposition gap;
};

inline BoundCheck check_bound(const BoundInstance& inst) {
  const FlatParams theta_new = fuse_masked(inst.theta0, inst.trained_phi, inst.mask);
  BoundCheck out;
  out.lhs = fusion_error([&](const FlatParams& t) { return inst.q.loss(t); }, theta_new,
                         inst.oracle.min_loss);
  const double dist = norm2(sub(inst.theta0, inst.oracle.theta_opt));
  out.rhs = inst.delta_sub + inst.L_hat * inst.eta_hat * norm2(inst.theta0) +
            inst.L_hat * dist * inst.alpha;
  out.holds = out.lhs <= out.rhs + 1e-9;
  out.slack = out.rhs - out.lhs;
  out.gap = gap_decomposition(inst, theta_new);
  return out;
}

// ---- randomized instance generation for the verification sweep ----

namespace detail_fusion {

// Orthonormalizes the columns of a Gaussian matrix (modified Gram-Schmidt).
inline Mat random_orthonormal_cols(std::size_t rows, std::size_t cols, Rng& rng) {
  Mat m(rows, cols);
  for (auto& v : m.a) v = rng.normal();
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double d = 0.0;
      for (std::size_t r = 0; r < rows; ++r) d += m.at(r, c) * m.at(r, p);
      for (std::size_t r = 0; r < rows; ++r) m.at(r, c) -= d * m.at(r, p);
    }
    double nrm = 0.0;
    for (std::size_t r = 0; r < rows; ++r) nrm += m.at(r, c) * m.at(r, c);
    nrm = std::sqrt(nrm);
    if (nrm < 1e-12) {
      // degenerate draw; replace with a unit basis vector and restart column
      for (std::size_t r = 0; r < rows; ++r) m.at(r, c) = (r == c % rows) ? 1.0 : 0.0;
      c -= 1;
      continue;
    }
    for (std::size_t r = 0; r < rows; ++r) m.at(r, c) /= nrm;
  }
  return m;
}

}  // namespace detail_fusion

// Mildly conditioned random PD instance: A = Q1 diag(sigma) Q2^T with
// singular values in [0.9, 1.2], b with an off-range residual so min_loss >
// 0, theta0 displaced from theta_opt, random mask at the requested
// fraction. Off-mask displacement is damped so the probe-based Lipschitz
// estimate stays on the conservative side of the alpha-scaled term. Odd
// indices get a phi* perturbed on-mask so delta_sub is exercised.
inline BoundInstance random_bound_instance(std::size_t D, std::size_t m,
                                           double mask_fraction, std::uint64_t seed,
                                           std::size_t index, std::size_t n_probes = 256) {
  if (D < 2) throw ConfigError("random_bound_instance: D must be >= 2");
  if (m < D) throw ConfigError("random_bound_instance: m must be >= D");
  Rng rng(derive_seed(seed, "bound-instance", index));

  Mat q1 = detail_fusion::random_orthonormal_cols(m, D, rng);
  Mat q2 = detail_fusion::random_orthonormal_cols(D, D, rng);
  std::vector<double> sigma(D);
  for (auto& s : sigma) s = rng.uniform(0.9, 1.2);

  QuadraticLoss q;
  q.A = Mat(m, D);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < D; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < D; ++k) acc += q1.at(r, k) * sigma[k] * q2.at(c, k);
      q.A.at(r, c) = acc;
    }

  const LayoutPtr layout = flat_layout(D);
  FlatParams theta_star = FlatParams::zeros(layout);
  for (std::size_t d = 0; d < D; ++d) theta_star[d] = rng.normal();

  q.b.assign(m, 0.0);
  std::vector<double> z(m);
  for (auto& v : z) v = 0.3 * rng.normal();
  // remove the range(A) component of z so theta_star stays optimal
  for (std::size_t c = 0; c < D; ++c) {
    double d = 0.0;
    for (std::size_t r = 0; r < m; ++r) d += z[r] * q1.at(r, c);
    for (std::size_t r = 0; r < m; ++r) z[r] -= d * q1.at(r, c);
  }
  for (std::size_t r = 0; r < m; ++r) {
    double acc = z[r];
    for (std::size_t c = 0; c < D; ++c) acc += q.A.at(r, c) * theta_star[c];
    q.b[r] = acc;
  }

  std::size_t nkeep = static_cast<std::size_t>(
      std::llround(mask_fraction * static_cast<double>(D)));
  nkeep = std::clamp<std::size_t>(nkeep, 1, D - 1);
  std::vector<std::size_t> order(D);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = D; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
  SubspaceMask mask = SubspaceMask::all(layout, false);
  for (std::size_t i = 0; i < nkeep; ++i) mask.keep[order[i]] = 1;

  FlatParams theta0 = theta_star;
  for (std::size_t d = 0; d < D; ++d) {
    const double mag = rng.uniform(0.5, 1.0);
    const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
    theta0[d] += sign * mag * (mask.keep[d] ? 1.0 : 0.5);
  }

  OracleResult oracle = quadratic_oracle(q, mask, theta0);
  FlatParams phi = oracle.phi_opt_full;
  if (index % 2 == 1) {
    for (std::size_t d = 0; d < D; ++d)
      if (mask.keep[d]) phi[d] += 0.05 * rng.normal();
  }

  return make_bound_instance(std::move(q), std::move(mask), std::move(theta0), std::move(phi),
                             /*eta_hat=*/0.0, /*l_hat_override=*/-1.0, n_probes,
                             derive_seed(seed, "probes", index));
}

}  // namespace fedproxy
