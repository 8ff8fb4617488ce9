#pragma once

// Column-wise mean-field variational inference for Bayesian matrix completion
// with row/column graph priors:
//
//   q(Theta) = prod_i q(u_i) prod_i q(v_i) q(lambda) q(tau)
//
// Each q(u_i), q(v_i) is a full-covariance Gaussian, q(lambda_r) and q(tau)
// are Gamma. Updates are exact coordinate-ascent steps on the ELBO, so the
// bound is non-decreasing between prune events.

#include "graphmc/common.hpp"
#include "graphmc/graph.hpp"
#include "graphmc/model.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace graphmc {

/// Upper bound on <lambda_r>; columns on their way to being pruned would
/// otherwise make the next solve badly conditioned.
inline constexpr double kLambdaClamp = 1e12;

struct InferenceConfig {
  Index initial_rank = 100;
  int max_iters = 200;
  double tol = 1e-5;            // relative change of the fit on observed cells
  double prune_rel_tol = 1e-6;  // energy ratio below which a column is dropped
  std::uint64_t seed = 0;
  PriorConfig prior;
  bool track_elbo = true;
  bool predictive_variance = false;

  void validate() const {
    detail::require(initial_rank >= 1, "config: initial_rank must be >= 1");
    detail::require(max_iters >= 1, "config: max_iters must be >= 1");
    detail::require(tol > 0, "config: tol must be positive");
    detail::require(prune_rel_tol > 0, "config: prune_rel_tol must be positive");
    prior.validate(initial_rank);
  }
};

/// One line of the per-iteration diagnostics stream.
struct TraceRecord {
  int iteration = 0;
  double elbo = 0.0;
  Index rank = 0;
  double tau_mean = 0.0;
  double residual = 0.0;  // ||Omega o (M - <U><V>')||_F
  double wall_ms = 0.0;
};

struct Diagnostics {
  bool rank_exceeds_dims = false;
  bool lambda_clamped = false;
};

struct InferenceState {
  std::shared_ptr<const GraphLaplacian> row_graph;
  std::shared_ptr<const GraphLaplacian> col_graph;
  double log_det_row = 0.0;
  double log_det_col = 0.0;
  PriorConfig prior;
  FactorPosterior u;
  FactorPosterior v;
  HyperPosterior hyper;
  Vector residual;  // M_e - <u_row><v_col>' for every observed entry e, in data order
  int iteration = 0;
  std::vector<TraceRecord> trace;
  Diagnostics diagnostics;

  Index rank() const { return u.rank(); }
};

struct CompletionResult {
  Matrix xhat;
  Index rank = 0;
  std::optional<Matrix> predictive_variance;
  std::vector<TraceRecord> trace;
  Diagnostics diagnostics;
  bool converged = false;
  int iterations = 0;
  Vector lambda_mean;
  double tau_mean = 0.0;
};

// ---------------------------------------------------------------------------
// Expectations

/// <w' L w> = tr[(cov + mean mean') L].
inline double expected_quadratic_form(const Vector& mean, const Matrix& cov, const Matrix& lap) {
  detail::require(mean.size() == cov.rows() && cov.rows() == cov.cols() &&
                      lap.rows() == cov.rows() && lap.cols() == cov.cols(),
                  "expected_quadratic_form: shape mismatch");
  return cov.cwiseProduct(lap.transpose()).sum() + mean.dot(lap * mean);
}

inline double expected_quadratic_form(const Vector& mean, const Matrix& cov,
                                      const GraphLaplacian& lap) {
  return expected_quadratic_form(mean, cov, lap.matrix());
}

/// Plug-in masked residual of the current posterior means, recomputed from scratch.
inline Vector fresh_residual(const InferenceState& s, const ObservedMatrix& data) {
  Vector r(data.size());
  const auto& es = data.entries();
  for (Index e = 0; e < data.size(); ++e) {
    const Entry& x = es[static_cast<std::size_t>(e)];
    r(e) = x.value - s.u.means().row(x.row).dot(s.v.means().row(x.col));
  }
  return r;
}

/// Largest absolute gap between the cached residual and a fresh recomputation.
inline double residual_drift(const InferenceState& s, const ObservedMatrix& data) {
  return (fresh_residual(s, data) - s.residual).cwiseAbs().maxCoeff();
}

namespace detail {

inline Matrix covariance_diagonals(const FactorPosterior& f) {
  Matrix d(f.dim(), f.rank());
  for (Index r = 0; r < f.rank(); ++r) d.col(r) = f.covariance(r).diagonal();
  return d;
}

inline double gamma_entropy(double shape, double rate) {
  return shape - std::log(rate) + std::lgamma(shape) +
         (1.0 - shape) * boost::math::digamma(shape);
}

inline double gaussian_entropy(Index dim, double log_det_cov) {
  return 0.5 * static_cast<double>(dim) * (1.0 + kLog2Pi) + 0.5 * log_det_cov;
}

}  // namespace detail

/// <||Omega o (M - U V')||_F^2> under the column-wise mean field: the plug-in
/// residual plus, per observed cell and component,
///   <u^2><v^2> - <u>^2<v>^2 = <u>^2 s_v + s_u <v>^2 + s_u s_v.
inline double expected_residual(const InferenceState& s, const ObservedMatrix& data) {
  const Matrix su = detail::covariance_diagonals(s.u);
  const Matrix sv = detail::covariance_diagonals(s.v);
  const Matrix& mu = s.u.means();
  const Matrix& mv = s.v.means();
  double total = s.residual.squaredNorm();
  for (const Entry& e : data.entries()) {
    const auto a = mu.row(e.row).array();
    const auto b = mv.row(e.col).array();
    const auto sa = su.row(e.row).array();
    const auto sb = sv.row(e.col).array();
    total += (a.square() * sb + sa * b.square() + sa * sb).sum();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Initialization

/// SVD start: <U> = U_k sqrt(S_k), <V> = V_k sqrt(S_k) of the zero-filled data,
/// identity covariances, <lambda> = 1, <tau> = 1 / var(observed values).
inline InferenceState init_state(const ObservedMatrix& data, GraphLaplacian row_graph,
                                 GraphLaplacian col_graph, const InferenceConfig& cfg) {
  cfg.validate();
  const Index m = data.rows();
  const Index n = data.cols();
  detail::require(row_graph.size() == m, "row graph has " + std::to_string(row_graph.size()) +
                                             " vertices but data has " + std::to_string(m) +
                                             " rows");
  detail::require(col_graph.size() == n, "column graph has " + std::to_string(col_graph.size()) +
                                             " vertices but data has " + std::to_string(n) +
                                             " columns");
  const Index k = cfg.initial_rank;

  InferenceState s;
  s.log_det_row = row_graph.log_det();
  s.log_det_col = col_graph.log_det();
  s.row_graph = std::make_shared<const GraphLaplacian>(std::move(row_graph));
  s.col_graph = std::make_shared<const GraphLaplacian>(std::move(col_graph));
  s.prior = cfg.prior;
  s.u = FactorPosterior(Side::row, m, k);
  s.v = FactorPosterior(Side::col, n, k);

  const Index full = std::min(m, n);
  const Index from_svd = std::min(k, full);
  Eigen::BDCSVD<Matrix> svd(data.zero_filled(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  for (Index r = 0; r < from_svd; ++r) {
    const double root = std::sqrt(svd.singularValues()(r));
    s.u.set_mean(r, svd.matrixU().col(r) * root);
    s.v.set_mean(r, svd.matrixV().col(r) * root);
  }
  if (k > full) {
    s.diagnostics.rank_exceeds_dims = true;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 0.1);
    for (Index r = full; r < k; ++r) {
      Vector a(m), b(n);
      for (Index i = 0; i < m; ++i) a(i) = normal(rng);
      for (Index j = 0; j < n; ++j) b(j) = normal(rng);
      s.u.set_mean(r, a);
      s.v.set_mean(r, b);
    }
  }

  s.hyper.lambda_shape.resize(k);
  for (Index r = 0; r < k; ++r)
    s.hyper.lambda_shape(r) = s.prior.c0_at(r) + 0.5 * static_cast<double>(m + n);
  s.hyper.lambda_rate = s.hyper.lambda_shape;

  const Vector vals = data.values();
  const double var = (vals.array() - vals.mean()).square().mean();
  const double tau0 = var > 0.0 ? 1.0 / var : 1.0;
  s.hyper.tau_shape = cfg.prior.a0 + 0.5 * static_cast<double>(data.size());
  s.hyper.tau_rate = s.hyper.tau_shape / tau0;

  s.residual = fresh_residual(s, data);
  return s;
}

// ---------------------------------------------------------------------------
// Coordinate updates

/// Posterior-moment coefficients of the expected masked residual as a
/// quadratic in column i of `side`: precision_diag = Omega <w_other o w_other>,
/// linear = (Omega o (M - sum_{r != i} <u_r><v_r>')) <w_other>.
inline QuadraticCoefficients conditional_quadratic_coefficients(const ObservedMatrix& data,
                                                                const InferenceState& s,
                                                                Side side, Index i) {
  detail::require(i >= 0 && i < s.rank(), "conditional_quadratic_coefficients: i out of range");
  const FactorPosterior& self = side == Side::row ? s.u : s.v;
  const FactorPosterior& other = side == Side::row ? s.v : s.u;
  const Vector self_mean = self.mean(i);
  const Vector other_mean = other.mean(i);
  const Vector other_m2 = other.second_moment(i);
  QuadraticCoefficients q{Vector::Zero(self.dim()), Vector::Zero(self.dim())};
  const auto& es = data.entries();
  for (Index e = 0; e < data.size(); ++e) {
    const Entry& x = es[static_cast<std::size_t>(e)];
    const Index a = side == Side::row ? x.row : x.col;
    const Index b = side == Side::row ? x.col : x.row;
    q.precision_diag(a) += other_m2(b);
    q.linear(a) += (s.residual(e) + self_mean(a) * other_mean(b)) * other_mean(b);
  }
  return q;
}

/// Exact update of q(w_i) for one factor column:
///   cov  = (<tau> diag(Omega <w_other o w_other>) + <lambda_i> L)^-1
///   mean = <tau> cov (Omega o (M - sum_{r != i} <u_r><v_r>')) <w_other>
/// The cached residual is corrected for the change of mean.
inline void update_factor_column(InferenceState& s, const ObservedMatrix& data, Side side,
                                 Index i) {
  const QuadraticCoefficients q = conditional_quadratic_coefficients(data, s, side, i);
  FactorPosterior& self = side == Side::row ? s.u : s.v;
  const FactorPosterior& other = side == Side::row ? s.v : s.u;
  const GraphLaplacian& lap = side == Side::row ? *s.row_graph : *s.col_graph;
  const double tau = s.hyper.tau_mean();

  Matrix precision = s.hyper.lambda_mean(i) * lap.matrix();
  precision.diagonal() += tau * q.precision_diag;
  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string("update of ") + to_string(side) + " column " +
                         std::to_string(i) + ": precision matrix is not positive definite");

  Matrix cov = llt.solve(Matrix::Identity(self.dim(), self.dim()));
  cov = 0.5 * (cov + cov.transpose()).eval();
  const Vector mean = tau * llt.solve(q.linear);
  const double log_det = -2.0 * llt.matrixLLT().diagonal().array().log().sum();

  const Vector delta = mean - self.mean(i);
  const Vector other_mean = other.mean(i);
  const auto& es = data.entries();
  for (Index e = 0; e < data.size(); ++e) {
    const Entry& x = es[static_cast<std::size_t>(e)];
    s.residual(e) -= side == Side::row ? delta(x.row) * other_mean(x.col)
                                       : delta(x.col) * other_mean(x.row);
  }
  self.set_column(i, mean, std::move(cov), log_det);
}

/// q(lambda_r): shape c0 + (m+n)/2, rate d0 + (<u'Lr u> + <v'Lc v>)/2.
inline void update_lambda(InferenceState& s) {
  const double half_dims = 0.5 * static_cast<double>(s.u.dim() + s.v.dim());
  for (Index r = 0; r < s.rank(); ++r) {
    const double qu = expected_quadratic_form(s.u.mean(r), s.u.covariance(r), *s.row_graph);
    const double qv = expected_quadratic_form(s.v.mean(r), s.v.covariance(r), *s.col_graph);
    const double shape = s.prior.c0_at(r) + half_dims;
    double rate = s.prior.d0_at(r) + 0.5 * (qu + qv);
    if (shape / rate > kLambdaClamp) {
      rate = shape / kLambdaClamp;
      s.diagnostics.lambda_clamped = true;
    }
    s.hyper.lambda_shape(r) = shape;
    s.hyper.lambda_rate(r) = rate;
  }
}

/// q(tau): shape a0 + |Omega|/2, rate b0 + <residual>/2.
inline void update_tau(InferenceState& s, const ObservedMatrix& data) {
  s.hyper.tau_shape = s.prior.a0 + 0.5 * static_cast<double>(data.size());
  s.hyper.tau_rate = s.prior.b0 + 0.5 * expected_residual(s, data);
}

// ---------------------------------------------------------------------------
// Objective

/// Evidence lower bound <ln p(M, Theta)>_q + H[q].
inline double elbo(const InferenceState& s, const ObservedMatrix& data) {
  const Index m = s.u.dim();
  const Index n = s.v.dim();
  const double nobs = static_cast<double>(data.size());
  const PriorConfig& p = s.prior;

  const double e_tau = s.hyper.tau_mean();
  const double e_ln_tau = s.hyper.expected_log_tau();
  double bound = 0.5 * nobs * (e_ln_tau - kLog2Pi) - 0.5 * e_tau * expected_residual(s, data);
  bound += p.a0 * std::log(p.b0) - std::lgamma(p.a0) + (p.a0 - 1.0) * e_ln_tau - p.b0 * e_tau;
  bound += detail::gamma_entropy(s.hyper.tau_shape, s.hyper.tau_rate);

  for (Index r = 0; r < s.rank(); ++r) {
    const double e_lam = s.hyper.lambda_mean(r);
    const double e_ln_lam = s.hyper.expected_log_lambda(r);
    const double qu = expected_quadratic_form(s.u.mean(r), s.u.covariance(r), *s.row_graph);
    const double qv = expected_quadratic_form(s.v.mean(r), s.v.covariance(r), *s.col_graph);
    bound += 0.5 * static_cast<double>(m) * (e_ln_lam - kLog2Pi) + 0.5 * s.log_det_row -
             0.5 * e_lam * qu;
    bound += 0.5 * static_cast<double>(n) * (e_ln_lam - kLog2Pi) + 0.5 * s.log_det_col -
             0.5 * e_lam * qv;
    const double c0 = p.c0_at(r);
    const double d0 = p.d0_at(r);
    bound += c0 * std::log(d0) - std::lgamma(c0) + (c0 - 1.0) * e_ln_lam - d0 * e_lam;
    bound += detail::gaussian_entropy(m, s.u.log_det_covariance(r));
    bound += detail::gaussian_entropy(n, s.v.log_det_covariance(r));
    bound += detail::gamma_entropy(s.hyper.lambda_shape(r), s.hyper.lambda_rate(r));
  }
  return bound;
}

/// Log joint density at the posterior means.
inline LogJointTerms log_joint(const InferenceState& s, const ObservedMatrix& data) {
  detail::require(s.u.dim() == data.rows() && s.v.dim() == data.cols(),
                  "log_joint: state dimensions do not match data");
  return detail::log_joint_terms(data, s.u.means(), s.v.means(), s.hyper.lambda_means(),
                                 s.hyper.tau_mean(), *s.row_graph, *s.col_graph, s.log_det_row,
                                 s.log_det_col, s.prior);
}

// ---------------------------------------------------------------------------
// Pruning

/// Indices of components whose energy is at least `rel_tol` times the largest
/// energy. Zero-energy components never survive; if nothing survives, the
/// first maximal component is kept.
inline std::vector<Index> columns_to_keep(const Vector& energies, double rel_tol) {
  std::vector<Index> keep;
  if (energies.size() == 0) return keep;
  Index best = 0;
  const double top = energies.maxCoeff(&best);
  for (Index r = 0; r < energies.size(); ++r)
    if (energies(r) > 0.0 && energies(r) >= rel_tol * top) keep.push_back(r);
  if (keep.empty()) keep.push_back(best);
  return keep;
}

/// Energies ||<u_i>||^2 + ||<v_i>||^2 of every component.
inline Vector component_energies(const InferenceState& s) {
  return s.u.means().colwise().squaredNorm().transpose() +
         s.v.means().colwise().squaredNorm().transpose();
}

/// Drops low-energy components from both factors and q(lambda). Returns the
/// number of components removed.
inline Index prune_columns(InferenceState& s, const ObservedMatrix& data, double rel_tol) {
  const std::vector<Index> keep = columns_to_keep(component_energies(s), rel_tol);
  const Index removed = s.rank() - static_cast<Index>(keep.size());
  if (removed == 0) return 0;
  std::vector<bool> kept(static_cast<std::size_t>(s.rank()), false);
  for (Index r : keep) kept[static_cast<std::size_t>(r)] = true;
  const auto& es = data.entries();
  for (Index r = 0; r < s.rank(); ++r) {
    if (kept[static_cast<std::size_t>(r)]) continue;
    for (Index e = 0; e < data.size(); ++e) {
      const Entry& x = es[static_cast<std::size_t>(e)];
      s.residual(e) += s.u.means()(x.row, r) * s.v.means()(x.col, r);
    }
  }
  s.u.keep_columns(keep);
  s.v.keep_columns(keep);
  s.hyper.keep_components(keep);
  s.prior.keep_components(keep);
  return removed;
}

// ---------------------------------------------------------------------------
// Driver

/// One pass in the fixed order: every u_i, every v_i, lambda, tau, then prune.
inline void sweep(InferenceState& s, const ObservedMatrix& data, double prune_rel_tol) {
  for (Index i = 0; i < s.rank(); ++i) update_factor_column(s, data, Side::row, i);
  for (Index i = 0; i < s.rank(); ++i) update_factor_column(s, data, Side::col, i);
  update_lambda(s);
  update_tau(s, data);
  prune_columns(s, data, prune_rel_tol);
}

inline CompletionResult run_vi(const ObservedMatrix& data, GraphLaplacian row_graph,
                               GraphLaplacian col_graph, const InferenceConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  InferenceState s = init_state(data, std::move(row_graph), std::move(col_graph), cfg);

  const Vector observed = data.values();
  Vector prev_fit = observed - s.residual;
  CompletionResult out;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    try {
      sweep(s, data, cfg.prune_rel_tol);
    } catch (const NumericalError& err) {
      throw NumericalError("iteration " + std::to_string(it) + ": " + err.what());
    }
    s.iteration = it;

    const Vector fit = observed - s.residual;
    const double base = prev_fit.norm();
    const double diff = (fit - prev_fit).norm();
    const double change = base > 0.0 ? diff / base : (diff > 0.0 ? HUGE_VAL : 0.0);
    prev_fit = fit;

    TraceRecord rec;
    rec.iteration = it;
    rec.elbo = cfg.track_elbo ? elbo(s, data) : std::nan("");
    rec.rank = s.rank();
    rec.tau_mean = s.hyper.tau_mean();
    rec.residual = s.residual.norm();
    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    s.trace.push_back(rec);

    if (change < cfg.tol) {
      out.converged = true;
      break;
    }
  }

  out.iterations = s.iteration;
  out.rank = s.rank();
  out.xhat = s.u.means() * s.v.means().transpose();
  if (cfg.predictive_variance) {
    const Matrix su = detail::covariance_diagonals(s.u);
    const Matrix sv = detail::covariance_diagonals(s.v);
    const Matrix u2 = s.u.means().array().square().matrix();
    const Matrix v2 = s.v.means().array().square().matrix();
    Matrix var = u2 * sv.transpose() + su * v2.transpose() + su * sv.transpose();
    var.array() += 1.0 / s.hyper.tau_mean();
    out.predictive_variance = std::move(var);
  }
  out.lambda_mean = s.hyper.lambda_means();
  out.tau_mean = s.hyper.tau_mean();
  out.diagnostics = s.diagnostics;
  out.trace = std::move(s.trace);
  return out;
}

}  // namespace graphmc
