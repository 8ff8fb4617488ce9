#pragma once

#include "graphmc/common.hpp"
#include "graphmc/graph.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace graphmc {

/// One observed cell M_ij.
struct Entry {
  Index row = 0;
  Index col = 0;
  double value = 0.0;

  friend bool operator==(const Entry&, const Entry&) = default;
};

/// Partially observed m x n matrix in coordinate form, sorted row-major.
class ObservedMatrix {
 public:
  ObservedMatrix() = default;

  ObservedMatrix(Index m, Index n, std::vector<Entry> entries)
      : m_(m), n_(n), entries_(std::move(entries)) {
    detail::require(m_ >= 1 && n_ >= 1, "observed matrix dimensions must be positive");
    detail::require(!entries_.empty(), "observed matrix has no observed entries");
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    for (std::size_t e = 0; e < entries_.size(); ++e) {
      const Entry& x = entries_[e];
      detail::require(x.row >= 0 && x.row < m_ && x.col >= 0 && x.col < n_,
                      "observed entry (" + std::to_string(x.row) + "," +
                          std::to_string(x.col) + ") out of range");
      detail::require(std::isfinite(x.value), "observed entry is not finite");
      if (e > 0) {
        const Entry& p = entries_[e - 1];
        detail::require(p.row != x.row || p.col != x.col,
                        "duplicate observed entry (" + std::to_string(x.row) + "," +
                            std::to_string(x.col) + ")");
      }
    }
  }

  /// Every cell of `full` where `mask` is nonzero.
  static ObservedMatrix from_dense(const Matrix& full, const Matrix& mask) {
    detail::require(full.rows() == mask.rows() && full.cols() == mask.cols(),
                    "mask shape differs from matrix shape");
    std::vector<Entry> e;
    for (Index i = 0; i < full.rows(); ++i)
      for (Index j = 0; j < full.cols(); ++j)
        if (mask(i, j) != 0.0) e.push_back({i, j, full(i, j)});
    return ObservedMatrix(full.rows(), full.cols(), std::move(e));
  }

  Index rows() const { return m_; }
  Index cols() const { return n_; }
  Index size() const { return static_cast<Index>(entries_.size()); }
  const std::vector<Entry>& entries() const { return entries_; }

  bool observed(Index i, Index j) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), Entry{i, j, 0.0},
                               [](const Entry& a, const Entry& b) {
                                 return a.row != b.row ? a.row < b.row : a.col < b.col;
                               });
    return it != entries_.end() && it->row == i && it->col == j;
  }

  Vector values() const {
    Vector v(size());
    for (Index e = 0; e < size(); ++e) v(e) = entries_[e].value;
    return v;
  }

  Matrix zero_filled() const {
    Matrix x = Matrix::Zero(m_, n_);
    for (const Entry& e : entries_) x(e.row, e.col) = e.value;
    return x;
  }

  Matrix mask() const {
    Matrix x = Matrix::Zero(m_, n_);
    for (const Entry& e : entries_) x(e.row, e.col) = 1.0;
    return x;
  }

 private:
  Index m_ = 0;
  Index n_ = 0;
  std::vector<Entry> entries_;
};

/// Gamma hyperprior parameters (shape, rate). c0/d0 hold one value per
/// component or a single value broadcast to all components.
struct PriorConfig {
  double a0 = 1e-6;
  double b0 = 1e-6;
  Vector c0 = Vector::Constant(1, 1e-6);
  Vector d0 = Vector::Constant(1, 1e-6);

  double c0_at(Index r) const { return c0.size() == 1 ? c0(0) : c0(r); }
  double d0_at(Index r) const { return d0.size() == 1 ? d0(0) : d0(r); }

  void validate(Index k) const {
    detail::require(a0 > 0 && b0 > 0, "prior: a0 and b0 must be positive");
    detail::require(c0.size() == 1 || c0.size() == k, "prior: c0 length must be 1 or k");
    detail::require(d0.size() == 1 || d0.size() == k, "prior: d0 length must be 1 or k");
    detail::require((c0.array() > 0).all() && (d0.array() > 0).all(),
                    "prior: c0 and d0 must be positive");
  }

  void keep_components(const std::vector<Index>& keep) {
    auto pick = [&](Vector& v) {
      if (v.size() == 1) return;
      Vector out(static_cast<Index>(keep.size()));
      for (std::size_t t = 0; t < keep.size(); ++t) out(static_cast<Index>(t)) = v(keep[t]);
      v = std::move(out);
    };
    pick(c0);
    pick(d0);
  }
};

/// Column-wise Gaussian posteriors q(w_i) = N(mean_i, cov_i) for one factor.
class FactorPosterior {
 public:
  FactorPosterior() = default;

  /// Zero means, identity covariances.
  FactorPosterior(Side side, Index dim, Index k)
      : side_(side), means_(Matrix::Zero(dim, k)),
        covs_(static_cast<std::size_t>(k), Matrix::Identity(dim, dim)),
        log_dets_(static_cast<std::size_t>(k), 0.0) {}

  Side side() const { return side_; }
  Index dim() const { return means_.rows(); }
  Index rank() const { return means_.cols(); }

  const Matrix& means() const { return means_; }
  auto mean(Index i) const { return means_.col(i); }
  const Matrix& covariance(Index i) const { return covs_[static_cast<std::size_t>(i)]; }
  double log_det_covariance(Index i) const { return log_dets_[static_cast<std::size_t>(i)]; }

  /// <w_i o w_i> = mean^2 + diag(cov).
  Vector second_moment(Index i) const {
    return means_.col(i).array().square() + covariance(i).diagonal().array();
  }

  /// Sets a column after checking the covariance is symmetric positive definite.
  void set_column(Index i, const Vector& mean, const Matrix& cov) {
    detail::require(mean.size() == dim() && cov.rows() == dim() && cov.cols() == dim(),
                    "factor column shape mismatch");
    detail::require(detail::is_symmetric(cov, 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff())),
                    "factor covariance is not symmetric");
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
      throw NumericalError("factor covariance is not positive definite");
    const double ld = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    set_column(i, mean, cov, ld);
  }

  /// Trusted variant for callers that already know ln det cov.
  void set_column(Index i, const Vector& mean, Matrix cov, double log_det) {
    means_.col(i) = mean;
    covs_[static_cast<std::size_t>(i)] = std::move(cov);
    log_dets_[static_cast<std::size_t>(i)] = log_det;
  }

  void set_mean(Index i, const Vector& mean) { means_.col(i) = mean; }

  void keep_columns(const std::vector<Index>& keep) {
    Matrix m(dim(), static_cast<Index>(keep.size()));
    std::vector<Matrix> c;
    std::vector<double> d;
    for (std::size_t t = 0; t < keep.size(); ++t) {
      m.col(static_cast<Index>(t)) = means_.col(keep[t]);
      c.push_back(std::move(covs_[static_cast<std::size_t>(keep[t])]));
      d.push_back(log_dets_[static_cast<std::size_t>(keep[t])]);
    }
    means_ = std::move(m);
    covs_ = std::move(c);
    log_dets_ = std::move(d);
  }

 private:
  Side side_ = Side::row;
  Matrix means_;
  std::vector<Matrix> covs_;
  std::vector<double> log_dets_;
};

/// Gamma posteriors q(lambda_r) = Ga(lambda_shape_r, lambda_rate_r) and
/// q(tau) = Ga(tau_shape, tau_rate).
struct HyperPosterior {
  Vector lambda_shape;
  Vector lambda_rate;
  double tau_shape = 1.0;
  double tau_rate = 1.0;

  Index rank() const { return lambda_shape.size(); }
  double lambda_mean(Index r) const { return lambda_shape(r) / lambda_rate(r); }
  Vector lambda_means() const { return lambda_shape.cwiseQuotient(lambda_rate); }
  double tau_mean() const { return tau_shape / tau_rate; }

  double expected_log_lambda(Index r) const {
    return boost::math::digamma(lambda_shape(r)) - std::log(lambda_rate(r));
  }
  double expected_log_tau() const {
    return boost::math::digamma(tau_shape) - std::log(tau_rate);
  }

  void keep_components(const std::vector<Index>& keep) {
    Vector s(static_cast<Index>(keep.size())), r(static_cast<Index>(keep.size()));
    for (std::size_t t = 0; t < keep.size(); ++t) {
      s(static_cast<Index>(t)) = lambda_shape(keep[t]);
      r(static_cast<Index>(t)) = lambda_rate(keep[t]);
    }
    lambda_shape = std::move(s);
    lambda_rate = std::move(r);
  }
};

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Per-column marginal prior with lambda integrated out:
///   ln p(w) = c0 ln d0 + 1/2 ln det L + lnG(c0 + 1/2) - (d/2) ln 2pi - lnG(c0)
///             - (c0 + 1/2) ln(d0 + w'Lw / 2)
inline double log_marginal_prior_column(const Vector& w, const GraphLaplacian& lap, double c0,
                                        double d0) {
  detail::require(w.size() == lap.size(), "log_marginal_prior_column: dimension mismatch");
  detail::require(c0 > 0 && d0 > 0, "log_marginal_prior_column: c0, d0 must be positive");
  const double quad = w.dot(lap.matrix() * w);
  const double d = static_cast<double>(w.size());
  return c0 * std::log(d0) + 0.5 * lap.log_det() + std::lgamma(c0 + 0.5) -
         0.5 * d * kLog2Pi - std::lgamma(c0) - (c0 + 0.5) * std::log(d0 + 0.5 * quad);
}

/// Terms of ln p(M, U, V, lambda, tau) at a point, each a normalized log density.
struct LogJointTerms {
  double likelihood = 0.0;
  double prior_u = 0.0;
  double prior_v = 0.0;
  double prior_lambda = 0.0;
  double prior_tau = 0.0;

  double total() const { return likelihood + prior_u + prior_v + prior_lambda + prior_tau; }
};

namespace detail {

inline double log_gamma_density(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

inline LogJointTerms log_joint_terms(const ObservedMatrix& data, const Matrix& u, const Matrix& v,
                                     const Vector& lambda, double tau, const GraphLaplacian& lr,
                                     const GraphLaplacian& lc, double log_det_lr,
                                     double log_det_lc, const PriorConfig& prior) {
  const Index k = u.cols();
  const double m = static_cast<double>(u.rows());
  const double n = static_cast<double>(v.rows());
  LogJointTerms t;
  double sq = 0.0;
  for (const Entry& e : data.entries()) {
    const double r = e.value - u.row(e.row).dot(v.row(e.col));
    sq += r * r;
  }
  const double nobs = static_cast<double>(data.size());
  t.likelihood = 0.5 * nobs * (std::log(tau) - kLog2Pi) - 0.5 * tau * sq;
  for (Index r = 0; r < k; ++r) {
    const double lam = lambda(r);
    t.prior_u += 0.5 * m * (std::log(lam) - kLog2Pi) + 0.5 * log_det_lr -
                 0.5 * lam * u.col(r).dot(lr.matrix() * u.col(r));
    t.prior_v += 0.5 * n * (std::log(lam) - kLog2Pi) + 0.5 * log_det_lc -
                 0.5 * lam * v.col(r).dot(lc.matrix() * v.col(r));
    t.prior_lambda += log_gamma_density(lam, prior.c0_at(r), prior.d0_at(r));
  }
  t.prior_tau = log_gamma_density(tau, prior.a0, prior.b0);
  return t;
}

}  // namespace detail

/// Full log joint density evaluated at a point (U, V, lambda, tau).
inline LogJointTerms log_joint_terms(const ObservedMatrix& data, const Matrix& u, const Matrix& v,
                                     const Vector& lambda, double tau, const GraphLaplacian& lr,
                                     const GraphLaplacian& lc, const PriorConfig& prior) {
  detail::require(u.rows() == data.rows() && v.rows() == data.cols(),
                  "log_joint: factor rows do not match data dimensions");
  detail::require(u.cols() == v.cols() && lambda.size() == u.cols(),
                  "log_joint: rank mismatch between U, V and lambda");
  detail::require(lr.size() == data.rows() && lc.size() == data.cols(),
                  "log_joint: laplacian dimension mismatch");
  detail::require(tau > 0 && (lambda.array() > 0).all(), "log_joint: precisions must be positive");
  return detail::log_joint_terms(data, u, v, lambda, tau, lr, lc, lr.log_det(), lc.log_det(),
                                 prior);
}

/// Coefficients of ||Omega o (M - U V')||_F^2 as a quadratic in one factor
/// column w: w' diag(precision_diag) w - 2 w' linear + const.
struct QuadraticCoefficients {
  Vector precision_diag;
  Vector linear;
};

/// Plug-in version: the other factor is treated as fixed at the given values.
inline QuadraticCoefficients conditional_quadratic_coefficients(const ObservedMatrix& data,
                                                                const Matrix& u, const Matrix& v,
                                                                Side side, Index i) {
  detail::require(u.cols() == v.cols(), "conditional_quadratic_coefficients: rank mismatch");
  detail::require(i >= 0 && i < u.cols(), "conditional_quadratic_coefficients: i out of range");
  const Index dim = side == Side::row ? data.rows() : data.cols();
  QuadraticCoefficients q{Vector::Zero(dim), Vector::Zero(dim)};
  for (const Entry& e : data.entries()) {
    const double partial = e.value - u.row(e.row).dot(v.row(e.col)) + u(e.row, i) * v(e.col, i);
    if (side == Side::row) {
      const double other = v(e.col, i);
      q.precision_diag(e.row) += other * other;
      q.linear(e.row) += partial * other;
    } else {
      const double other = u(e.row, i);
      q.precision_diag(e.col) += other * other;
      q.linear(e.col) += partial * other;
    }
  }
  return q;
}

}  // namespace graphmc
