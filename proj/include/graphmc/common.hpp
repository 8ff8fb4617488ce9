#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace graphmc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Which factor a column belongs to: U (rows of X) or V (columns of X).
enum class Side { row, col };

inline const char* to_string(Side s) { return s == Side::row ? "row" : "col"; }

/// Raised when a system matrix that should be positive definite is not.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by file readers; carries the 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what
                                    : what),
        line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

inline bool is_symmetric(const Matrix& a, double tol = 0.0) {
  if (a.rows() != a.cols()) return false;
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = j + 1; i < a.rows(); ++i)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

}  // namespace detail

/// Shortest decimal text that parses back to exactly `x`; '.' separator
/// regardless of locale.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// Locale-independent parse of a whole token; throws ParseError.
inline double parse_double(std::string_view tok, long line = 0) {
  double x = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto res = std::from_chars(first, last, x);
  if (res.ec != std::errc() || res.ptr != last)
    throw ParseError("malformed number '" + std::string(tok) + "'", line);
  return x;
}

inline long long parse_integer(std::string_view tok, long line = 0) {
  long long x = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), x);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw ParseError("malformed integer '" + std::string(tok) + "'", line);
  return x;
}

}  // namespace graphmc
