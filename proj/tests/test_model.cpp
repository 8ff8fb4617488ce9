#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace graphmc;
using graphmc::testing::Rng;
using graphmc::testing::random_matrix;

namespace {

GraphLaplacian fig4_laplacian() {
  Matrix l(2, 2);
  l << 1.0, -0.8, -0.8, 1.0;
  return GraphLaplacian(l + 1e-6 * Matrix::Identity(2, 2), 1e-6);
}

double masked_sq(const ObservedMatrix& d, const Matrix& u, const Matrix& v) {
  const Matrix x = u * v.transpose();
  double s = 0.0;
  for (const Entry& e : d.entries()) s += (e.value - x(e.row, e.col)) * (e.value - x(e.row, e.col));
  return s;
}

}  // namespace

// --- ObservedMatrix -------------------------------------------------------

TEST(ObservedMatrix, SortsRowMajorAndAnswersMaskQueries) {
  ObservedMatrix d(3, 3, {{2, 0, 1.0}, {0, 2, 2.0}, {0, 1, 3.0}});
  ASSERT_EQ(d.size(), 3);
  EXPECT_EQ(d.entries()[0], (Entry{0, 1, 3.0}));
  EXPECT_EQ(d.entries()[2], (Entry{2, 0, 1.0}));
  EXPECT_TRUE(d.observed(0, 2));
  EXPECT_FALSE(d.observed(1, 1));
  EXPECT_EQ(d.mask().sum(), 3.0);
  EXPECT_EQ(d.zero_filled()(0, 1), 3.0);
}

TEST(ObservedMatrix, RejectsInvalidEntries) {
  EXPECT_THROW(ObservedMatrix(2, 2, {}), std::invalid_argument);
  EXPECT_THROW(ObservedMatrix(2, 2, {{2, 0, 1.0}}), std::invalid_argument);
  EXPECT_THROW(ObservedMatrix(2, 2, {{0, -1, 1.0}}), std::invalid_argument);
  EXPECT_THROW(ObservedMatrix(2, 2, {{0, 0, 1.0}, {0, 0, 2.0}}), std::invalid_argument);
  EXPECT_THROW(ObservedMatrix(2, 2, {{0, 0, std::nan("")}}), std::invalid_argument);
}

TEST(ObservedMatrix, FromDenseKeepsMaskedCells) {
  Matrix x(2, 2), mask(2, 2);
  x << 1, 2, 3, 4;
  mask << 1, 0, 0, 1;
  const ObservedMatrix d = ObservedMatrix::from_dense(x, mask);
  EXPECT_EQ(d.size(), 2);
  EXPECT_EQ(d.values(), (Vector(2) << 1, 4).finished());
}

TEST(PriorConfig, DefaultsAndValidation) {
  PriorConfig p;
  EXPECT_EQ(p.a0, 1e-6);
  EXPECT_EQ(p.b0, 1e-6);
  EXPECT_EQ(p.c0_at(7), 1e-6);
  EXPECT_EQ(p.d0_at(0), 1e-6);
  EXPECT_NO_THROW(p.validate(5));
  p.c0 = Vector::Constant(3, 1.0);
  EXPECT_THROW(p.validate(5), std::invalid_argument);
  EXPECT_NO_THROW(p.validate(3));
  p.a0 = 0.0;
  EXPECT_THROW(p.validate(3), std::invalid_argument);
}

TEST(FactorPosterior, CheckedSetColumnRejectsBadCovariance) {
  FactorPosterior f(Side::row, 2, 1);
  Matrix asym(2, 2);
  asym << 1, 0.5, 0, 1;
  EXPECT_THROW(f.set_column(0, Vector::Zero(2), asym), std::invalid_argument);
  Matrix indefinite(2, 2);
  indefinite << 1, 2, 2, 1;
  EXPECT_THROW(f.set_column(0, Vector::Zero(2), indefinite), NumericalError);
  Matrix ok(2, 2);
  ok << 2, 0, 0, 3;
  f.set_column(0, Vector::Ones(2), ok);
  EXPECT_NEAR(f.log_det_covariance(0), std::log(6.0), 1e-14);
  EXPECT_EQ(f.second_moment(0), (Vector(2) << 3, 4).finished());
}

// --- Marginal prior --------------------------------------------------------

TEST(MarginalPrior, HalvingRatioInTheLimit) {
  Rng rng(31);
  for (int t = 0; t < 10; ++t) {
    const GraphLaplacian l = graphmc::testing::random_laplacian(rng, 4, 0.2);
    const Vector w = random_matrix(rng, 4, 1);
    const double diff = log_marginal_prior_column(w, l, 1e-12, 1e-12) -
                        log_marginal_prior_column(2.0 * w, l, 1e-12, 1e-12);
    EXPECT_NEAR(diff, std::log(2.0), 1e-9);
  }
}

TEST(MarginalPrior, ZeroVectorGivesConstantTerm) {
  const GraphLaplacian l = fig4_laplacian();
  const double c0 = 0.7;
  const double constant = 0.5 * std::log(l.matrix().determinant()) + std::lgamma(c0 + 0.5) -
                          std::log(2.0 * M_PI) - std::lgamma(c0);
  EXPECT_NEAR(log_marginal_prior_column(Vector::Zero(2), l, c0, 1.0), constant, 1e-12);
}

TEST(MarginalPrior, IdentityLaplacianHandValue) {
  const Vector w = Vector::Ones(2);
  const double constant = std::lgamma(1.5) - std::log(2.0 * M_PI);
  EXPECT_NEAR(log_marginal_prior_column(w, identity_laplacian(2), 1.0, 1.0),
              constant - 1.5 * std::log(2.0), 1e-12);
}

TEST(MarginalPrior, GraphDirectionIsFavoured) {
  const GraphLaplacian l = fig4_laplacian();
  for (double t : {1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 10.0, -3.0}) {
    const double along = log_marginal_prior_column((Vector(2) << t, t).finished(), l, 1e-12, 1e-12);
    const double across =
        log_marginal_prior_column((Vector(2) << t, -t).finished(), l, 1e-12, 1e-12);
    EXPECT_GT(along, across) << "t=" << t;
  }
}

TEST(MarginalPrior, PeakedAtZero) {
  const GraphLaplacian l = fig4_laplacian();
  for (double angle : {0.0, 0.7, 1.5, 2.9}) {
    const Vector dir = (Vector(2) << std::cos(angle), std::sin(angle)).finished();
    EXPECT_GT(log_marginal_prior_column(1e-3 * dir, l, 1e-12, 1e-12),
              log_marginal_prior_column(dir, l, 1e-12, 1e-12));
  }
}

TEST(MarginalPrior, RejectsMismatch) {
  EXPECT_THROW(log_marginal_prior_column(Vector::Zero(3), identity_laplacian(2), 1.0, 1.0),
               std::invalid_argument);
  EXPECT_THROW(log_marginal_prior_column(Vector::Zero(2), identity_laplacian(2), 0.0, 1.0),
               std::invalid_argument);
}

// --- Log joint -------------------------------------------------------------

TEST(LogJoint, ZeroResidualLeavesOnlyTauTerms) {
  const ObservedMatrix d(1, 1, {{0, 0, 0.0}});
  const double tau = 3.0;
  const LogJointTerms t =
      log_joint_terms(d, Matrix::Zero(1, 1), Matrix::Zero(1, 1), Vector::Ones(1), tau,
                      identity_laplacian(1), identity_laplacian(1), PriorConfig{});
  EXPECT_NEAR(t.likelihood, 0.5 * (std::log(tau) - std::log(2.0 * M_PI)), 1e-14);
}

TEST(LogJoint, SingleEntryHandExpansion) {
  const ObservedMatrix d(1, 1, {{0, 0, 1.7}});
  const double u = 0.4, v = -1.1, lam = 2.5, tau = 0.8, lr = 1.3, lc = 0.6;
  PriorConfig p;
  p.a0 = 2.0;
  p.b0 = 0.5;
  p.c0 = Vector::Constant(1, 1.5);
  p.d0 = Vector::Constant(1, 0.25);
  const double ln2pi = std::log(2.0 * M_PI);
  auto log_gamma_pdf = [](double x, double a, double b) {
    return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(x) - b * x;
  };
  const double r = 1.7 - u * v;
  const double expect = 0.5 * std::log(tau) - 0.5 * ln2pi - 0.5 * tau * r * r +
                        0.5 * std::log(lam * lr) - 0.5 * ln2pi - 0.5 * lam * lr * u * u +
                        0.5 * std::log(lam * lc) - 0.5 * ln2pi - 0.5 * lam * lc * v * v +
                        log_gamma_pdf(lam, 1.5, 0.25) + log_gamma_pdf(tau, 2.0, 0.5);
  const LogJointTerms t = log_joint_terms(
      d, Matrix::Constant(1, 1, u), Matrix::Constant(1, 1, v), Vector::Constant(1, lam), tau,
      GraphLaplacian(Matrix::Constant(1, 1, lr), 0.0),
      GraphLaplacian(Matrix::Constant(1, 1, lc), 0.0), p);
  EXPECT_NEAR(t.total(), expect, 1e-12);
}

TEST(LogJoint, DoublingLambdaChangesPriorTermsAnalytically) {
  Rng rng(32);
  const Index m = 5, n = 4, k = 3;
  const ObservedMatrix d = graphmc::testing::random_observed(rng, m, n, 0.5);
  const GraphLaplacian lr = graphmc::testing::random_laplacian(rng, m);
  const GraphLaplacian lc = graphmc::testing::random_laplacian(rng, n);
  const Matrix u = random_matrix(rng, m, k), v = random_matrix(rng, n, k);
  const Vector lam = (Vector(3) << 0.5, 2.0, 7.0).finished();
  const PriorConfig p;
  for (Index r = 0; r < k; ++r) {
    Vector lam2 = lam;
    lam2(r) *= 2.0;
    const LogJointTerms a = log_joint_terms(d, u, v, lam, 1.0, lr, lc, p);
    const LogJointTerms b = log_joint_terms(d, u, v, lam2, 1.0, lr, lc, p);
    const double quad =
        u.col(r).dot(lr.matrix() * u.col(r)) + v.col(r).dot(lc.matrix() * v.col(r));
    const double expect = 0.5 * (m + n) * std::log(2.0) - 0.5 * lam(r) * quad;
    EXPECT_NEAR((b.prior_u + b.prior_v) - (a.prior_u + a.prior_v), expect, 1e-10);
    EXPECT_EQ(a.likelihood, b.likelihood);
  }
}

TEST(LogJoint, PriorGradientMatchesFiniteDifference) {
  Rng rng(33);
  const Index m = 6, n = 5, k = 2;
  const ObservedMatrix d = graphmc::testing::random_observed(rng, m, n, 0.6);
  const GraphLaplacian lr = graphmc::testing::random_laplacian(rng, m);
  const GraphLaplacian lc = graphmc::testing::random_laplacian(rng, n);
  Matrix u = random_matrix(rng, m, k);
  const Matrix v = random_matrix(rng, n, k);
  const Vector lam = (Vector(2) << 1.5, 0.3).finished();
  const double h = 1e-5;
  for (Index r = 0; r < k; ++r) {
    const Vector grad = -lam(r) * (lr.matrix() * u.col(r));
    for (Index i = 0; i < m; ++i) {
      Matrix up = u, dn = u;
      up(i, r) += h;
      dn(i, r) -= h;
      const double fd = (log_joint_terms(d, up, v, lam, 1.0, lr, lc, PriorConfig{}).prior_u -
                         log_joint_terms(d, dn, v, lam, 1.0, lr, lc, PriorConfig{}).prior_u) /
                        (2.0 * h);
      EXPECT_NEAR(fd, grad(i), 1e-6);
    }
  }
}

TEST(LogJoint, RejectsMismatchedShapes) {
  const ObservedMatrix d(2, 2, {{0, 0, 1.0}});
  EXPECT_THROW(log_joint_terms(d, Matrix::Zero(3, 1), Matrix::Zero(2, 1), Vector::Ones(1), 1.0,
                               identity_laplacian(2), identity_laplacian(2), PriorConfig{}),
               std::invalid_argument);
}

// --- Conditional quadratic -------------------------------------------------

TEST(ConditionalQuadratic, FullyObservedTwoByTwo) {
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  const ObservedMatrix d = ObservedMatrix::from_dense(x, Matrix::Ones(2, 2));
  const QuadraticCoefficients q =
      conditional_quadratic_coefficients(d, Matrix::Ones(2, 1), Matrix::Ones(2, 1), Side::row, 0);
  EXPECT_EQ(q.precision_diag, Vector::Constant(2, 2.0));
}

TEST(ConditionalQuadratic, EmptyRowHasZeroPrecision) {
  const ObservedMatrix d(3, 2, {{0, 0, 1.0}, {2, 1, 2.0}});
  const QuadraticCoefficients q = conditional_quadratic_coefficients(
      d, Matrix::Ones(3, 1), Matrix::Constant(2, 1, 2.0), Side::row, 0);
  EXPECT_EQ(q.precision_diag(1), 0.0);
  EXPECT_EQ(q.linear(1), 0.0);
  EXPECT_GT(q.precision_diag(0), 0.0);
}

TEST(ConditionalQuadratic, ReproducesExactQuadraticOnRandomInstances) {
  Rng rng(34);
  for (int trial = 0; trial < 20; ++trial) {
    const Index m = 3, n = 3, k = 2;
    const ObservedMatrix d = graphmc::testing::random_observed(rng, m, n, 0.7);
    Matrix u = random_matrix(rng, m, k), v = random_matrix(rng, n, k);
    for (Side side : {Side::row, Side::col}) {
      for (Index i = 0; i < k; ++i) {
        const QuadraticCoefficients q = conditional_quadratic_coefficients(d, u, v, side, i);
        EXPECT_TRUE((q.precision_diag.array() >= 0.0).all());
        double first = 0.0;
        for (int t = 0; t < 5; ++t) {
          Matrix& self = side == Side::row ? u : v;
          self.col(i) = random_matrix(rng, self.rows(), 1);
          const Vector w = self.col(i);
          const double rest = masked_sq(d, u, v) -
                              (w.dot(q.precision_diag.asDiagonal() * w) - 2.0 * w.dot(q.linear));
          if (t == 0) first = rest;
          EXPECT_NEAR(rest, first, 1e-10);
        }
      }
    }
  }
}

TEST(ConditionalQuadratic, RejectsOutOfRangeColumn) {
  const ObservedMatrix d(2, 2, {{0, 0, 1.0}});
  EXPECT_THROW(
      conditional_quadratic_coefficients(d, Matrix::Ones(2, 1), Matrix::Ones(2, 1), Side::row, 1),
      std::invalid_argument);
}
