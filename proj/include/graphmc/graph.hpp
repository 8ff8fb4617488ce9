#pragma once

#include "graphmc/common.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <span>
#include <utility>
#include <vector>

namespace graphmc {

/// Weighted undirected graph as a dense symmetric weight matrix with zero
/// diagonal and nonnegative entries.
class Adjacency {
 public:
  Adjacency() = default;

  /// Validates and wraps a weight matrix.
  explicit Adjacency(Matrix weights) : weights_(std::move(weights)) {
    detail::require(weights_.rows() == weights_.cols(), "adjacency must be square");
    detail::require(weights_.rows() >= 1, "adjacency must have at least one vertex");
    detail::require(weights_.allFinite(), "adjacency has non-finite weights");
    detail::require(detail::is_symmetric(weights_), "adjacency is not symmetric");
    detail::require((weights_.array() >= 0.0).all(), "adjacency has negative weights");
    detail::require((weights_.diagonal().array() == 0.0).all(),
                    "adjacency diagonal must be zero");
  }

  Index size() const { return weights_.rows(); }
  const Matrix& weights() const { return weights_; }
  double operator()(Index i, Index j) const { return weights_(i, j); }

 private:
  Matrix weights_;
};

/// Symmetric graph Laplacian L = D - A + jitter * I.
///
/// The jitter makes L invertible; a Laplacian built with zero jitter is only
/// positive semidefinite and cannot be used for inference directly.
class GraphLaplacian {
 public:
  GraphLaplacian() = default;

  GraphLaplacian(Matrix matrix, double jitter) : matrix_(std::move(matrix)), jitter_(jitter) {
    detail::require(matrix_.rows() == matrix_.cols(), "laplacian must be square");
    detail::require(matrix_.rows() >= 1, "laplacian must have at least one vertex");
    detail::require(matrix_.allFinite(), "laplacian has non-finite entries");
    detail::require(jitter_ >= 0.0, "jitter must be nonnegative");
    const double scale = std::max(1.0, matrix_.cwiseAbs().maxCoeff());
    detail::require(detail::is_symmetric(matrix_, 1e-12 * scale), "laplacian is not symmetric");
  }

  Index size() const { return matrix_.rows(); }
  const Matrix& matrix() const { return matrix_; }
  double jitter() const { return jitter_; }

  bool is_positive_definite() const {
    Eigen::LLT<Matrix> llt(matrix_);
    return llt.info() == Eigen::Success;
  }

  /// ln det L via Cholesky; throws NumericalError when L is not PD.
  double log_det() const {
    Eigen::LLT<Matrix> llt(matrix_);
    if (llt.info() != Eigen::Success)
      throw NumericalError("laplacian is not positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

 private:
  Matrix matrix_;
  double jitter_ = 0.0;
};

inline constexpr double kDefaultJitter = 1e-6;

/// Binary k-nearest-neighbour graph under Euclidean distance, symmetrized by
/// edge union. Distance ties go to the lower vertex index.
inline Adjacency knn_adjacency(std::span<const std::vector<double>> features, Index k) {
  const Index n = static_cast<Index>(features.size());
  detail::require(n > 0, "knn_adjacency: empty feature list");
  detail::require(k >= 1 && k < n, "knn_adjacency: k must satisfy 1 <= k < number of vertices");
  const std::size_t dim = features.front().size();
  for (const auto& f : features) {
    detail::require(f.size() == dim, "knn_adjacency: features differ in dimension");
    for (double x : f) detail::require(!std::isnan(x), "knn_adjacency: NaN in features");
  }

  auto dist2 = [&](Index a, Index b) {
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double t = features[a][d] - features[b][d];
      s += t * t;
    }
    return s;
  };

  Matrix w = Matrix::Zero(n, n);
  using Cand = std::pair<double, Index>;  // lexicographic: distance, then index
  for (Index i = 0; i < n; ++i) {
    std::priority_queue<Cand> best;  // max-heap holding the k best so far
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      Cand c{dist2(i, j), j};
      if (static_cast<Index>(best.size()) < k) {
        best.push(c);
      } else if (c < best.top()) {
        best.pop();
        best.push(c);
      }
    }
    for (; !best.empty(); best.pop()) {
      const Index j = best.top().second;
      w(i, j) = 1.0;
      w(j, i) = 1.0;
    }
  }
  return Adjacency(std::move(w));
}

/// Index-distance kernel A_ij = exp(-(i-j)^2 / theta^2), zero diagonal.
inline Adjacency gaussian_kernel_adjacency(Index n, double theta) {
  detail::require(n >= 2, "gaussian_kernel_adjacency: n must be >= 2");
  detail::require(theta > 0.0, "gaussian_kernel_adjacency: theta must be positive");
  const double inv_t2 = 1.0 / (theta * theta);
  Matrix w = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      const double d = static_cast<double>(j - i);
      w(i, j) = w(j, i) = std::exp(-d * d * inv_t2);
    }
  return Adjacency(std::move(w));
}

inline GraphLaplacian laplacian(const Adjacency& adj, double jitter = kDefaultJitter) {
  detail::require(jitter >= 0.0, "laplacian: jitter must be nonnegative");
  const Matrix& a = adj.weights();
  Matrix l = -a;
  l.diagonal() = a.rowwise().sum().array() + jitter;
  return GraphLaplacian(std::move(l), jitter);
}

/// Identity stand-in for a side without graph information.
inline GraphLaplacian identity_laplacian(Index n) {
  detail::require(n >= 1, "identity_laplacian: n must be >= 1");
  return GraphLaplacian(Matrix::Identity(n, n), 0.0);
}

/// Makes a user-supplied Laplacian usable for inference: if its rows sum to a
/// common value below `jitter` (a plain D - A, or one carrying less jitter),
/// the difference is added to the diagonal. Matrices that already carry at
/// least `jitter` on every row sum are returned unchanged.
inline GraphLaplacian ensure_jitter(const GraphLaplacian& lap, double jitter = kDefaultJitter) {
  const Vector sums = lap.matrix().rowwise().sum();
  const double lo = sums.minCoeff();
  const double hi = sums.maxCoeff();
  const double scale = std::max(1.0, lap.matrix().diagonal().cwiseAbs().maxCoeff());
  const double tol = 1e-9 * scale;
  const bool uniform = (hi - lo) <= tol;
  const double existing = uniform ? std::max(0.0, 0.5 * (lo + hi)) : lap.jitter();
  // Rounding in D - A leaves row sums a few ulps away from the jitter.
  if (existing >= jitter - tol) return lap;
  Matrix l = lap.matrix();
  l.diagonal().array() += jitter - existing;
  return GraphLaplacian(std::move(l), jitter);
}

}  // namespace graphmc
