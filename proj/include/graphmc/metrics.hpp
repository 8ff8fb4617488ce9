#pragma once

#include "graphmc/common.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace graphmc {

/// Reported when two images are identical.
inline constexpr double kPsnrCapDb = 99.0;

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* who) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), std::string(who) + ": shape mismatch");
}

}  // namespace detail

/// Root-mean-square error over the cells where `mask` is nonzero.
inline double rmse(const Matrix& pred, const Matrix& truth, const Matrix& mask) {
  detail::require_same_shape(pred, truth, "rmse");
  detail::require_same_shape(pred, mask, "rmse");
  double sum = 0.0;
  Index count = 0;
  for (Index j = 0; j < pred.cols(); ++j)
    for (Index i = 0; i < pred.rows(); ++i)
      if (mask(i, j) != 0.0) {
        const double d = pred(i, j) - truth(i, j);
        sum += d * d;
        ++count;
      }
  detail::require(count > 0, "rmse: empty evaluation mask");
  return std::sqrt(sum / static_cast<double>(count));
}

inline double rmse(const Matrix& pred, const Matrix& truth) {
  return rmse(pred, truth, Matrix::Ones(pred.rows(), pred.cols()));
}

/// Nearest alphabet value; ties resolve to the smaller value.
inline double round_to_alphabet(double x, std::span<const double> alphabet) {
  detail::require(!alphabet.empty(), "alphabet is empty");
  double best = alphabet.front();
  for (double a : alphabet) {
    const double da = std::abs(x - a);
    const double db = std::abs(x - best);
    if (da < db || (da == db && a < best)) best = a;
  }
  return best;
}

/// Fraction of masked cells whose prediction, rounded to the alphabet,
/// differs from the truth.
inline double error_rate(const Matrix& pred, const Matrix& truth, const Matrix& mask,
                         std::span<const double> alphabet) {
  detail::require_same_shape(pred, truth, "error_rate");
  detail::require_same_shape(pred, mask, "error_rate");
  detail::require(!alphabet.empty(), "error_rate: alphabet is empty");
  Index wrong = 0;
  Index count = 0;
  for (Index j = 0; j < pred.cols(); ++j)
    for (Index i = 0; i < pred.rows(); ++i)
      if (mask(i, j) != 0.0) {
        ++count;
        if (round_to_alphabet(pred(i, j), alphabet) != truth(i, j)) ++wrong;
      }
  detail::require(count > 0, "error_rate: empty evaluation mask");
  return static_cast<double>(wrong) / static_cast<double>(count);
}

/// 10 log10(peak^2 / MSE), capped at kPsnrCapDb for identical inputs.
inline double psnr(const Matrix& pred, const Matrix& truth, double peak = 255.0) {
  detail::require_same_shape(pred, truth, "psnr");
  detail::require(pred.size() > 0, "psnr: empty image");
  const double mse = (pred - truth).squaredNorm() / static_cast<double>(pred.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

namespace detail {

inline Vector gaussian_window(int size, double sigma) {
  Vector w(size);
  const double c = 0.5 * (size - 1);
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    w(i) = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  return w / w.sum();
}

/// Separable 'valid' filtering with a symmetric 1-D kernel.
inline Matrix filter_valid(const Matrix& img, const Vector& w) {
  const Index k = w.size();
  const Index rows = img.rows() - k + 1;
  const Index cols = img.cols() - k + 1;
  Matrix tmp(rows, img.cols());
  for (Index j = 0; j < img.cols(); ++j)
    for (Index i = 0; i < rows; ++i) tmp(i, j) = w.dot(img.col(j).segment(i, k));
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = w.dot(tmp.row(i).segment(j, k).transpose());
  return out;
}

}  // namespace detail

/// Structural similarity: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, mean of the SSIM map over all fully contained windows.
inline double ssim(const Matrix& a, const Matrix& b, double dynamic_range = 255.0) {
  detail::require_same_shape(a, b, "ssim");
  constexpr int kWin = 11;
  detail::require(a.rows() >= kWin && a.cols() >= kWin, "ssim: image smaller than 11x11");
  const Vector w = detail::gaussian_window(kWin, 1.5);
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);

  const Matrix mu_a = detail::filter_valid(a, w);
  const Matrix mu_b = detail::filter_valid(b, w);
  const Matrix aa = detail::filter_valid(a.cwiseProduct(a), w);
  const Matrix bb = detail::filter_valid(b.cwiseProduct(b), w);
  const Matrix ab = detail::filter_valid(a.cwiseProduct(b), w);

  double total = 0.0;
  for (Index j = 0; j < mu_a.cols(); ++j)
    for (Index i = 0; i < mu_a.rows(); ++i) {
      const double ma = mu_a(i, j);
      const double mb = mu_b(i, j);
      const double va = aa(i, j) - ma * ma;
      const double vb = bb(i, j) - mb * mb;
      const double cov = ab(i, j) - ma * mb;
      const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
      total += num / den;
    }
  return total / static_cast<double>(mu_a.size());
}

struct EvalReport {
  double rmse = 0.0;
  std::optional<double> error_rate;
  std::optional<double> psnr_db;
  std::optional<double> ssim;
  Index n_evaluated = 0;

  /// Flat "key=value" lines; absent optional fields are omitted.
  std::string to_record() const {
    std::ostringstream os;
    os << "rmse=" << format_double(rmse) << '\n';
    if (error_rate) os << "error_rate=" << format_double(*error_rate) << '\n';
    if (psnr_db) os << "psnr_db=" << format_double(*psnr_db) << '\n';
    if (ssim) os << "ssim=" << format_double(*ssim) << '\n';
    os << "n_evaluated=" << n_evaluated << '\n';
    return os.str();
  }

  static EvalReport from_record(const std::string& text) {
    EvalReport r;
    std::istringstream is(text);
    std::string line;
    long no = 0;
    bool have_rmse = false;
    while (std::getline(is, line)) {
      ++no;
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("expected key=value", no);
      const std::string key = line.substr(0, eq);
      const std::string_view val = std::string_view(line).substr(eq + 1);
      if (key == "rmse") {
        r.rmse = parse_double(val, no);
        have_rmse = true;
      } else if (key == "error_rate") {
        r.error_rate = parse_double(val, no);
      } else if (key == "psnr_db") {
        r.psnr_db = parse_double(val, no);
      } else if (key == "ssim") {
        r.ssim = parse_double(val, no);
      } else if (key == "n_evaluated") {
        r.n_evaluated = static_cast<Index>(parse_integer(val, no));
      } else {
        throw ParseError("unknown key '" + key + "'", no);
      }
    }
    if (!have_rmse) throw ParseError("record has no rmse");
    return r;
  }
};

}  // namespace graphmc
