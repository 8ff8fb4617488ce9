#pragma once

// File formats:
//   triplets   first line "m n", then "row<TAB>col<TAB>value" (0-based)
//   dense CSV  first line "m,n", then m lines of n comma-separated decimals;
//              "nan" marks a missing cell
//   graph      first line "n=<count>", then "i j value" per nonzero (0-based)
//   image      binary PGM (P5), maxval 255
//   trace      one JSON object per line: iteration, elbo, rank, tau_mean,
//              residual, wall_ms
// Numbers are written in shortest round-trip form with '.' as separator.

#include "graphmc/common.hpp"
#include "graphmc/graph.hpp"
#include "graphmc/inference.hpp"
#include "graphmc/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace graphmc::io {

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, std::string_view seps) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    const std::size_t start = line.find_first_not_of(seps, pos);
    if (start == std::string_view::npos) break;
    std::size_t end = line.find_first_of(seps, start);
    if (end == std::string_view::npos) end = line.size();
    out.push_back(line.substr(start, end - start));
    pos = end;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw ParseError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Triplets

inline ObservedMatrix read_triplets(std::istream& in) {
  std::string line;
  long no = 0;
  Index m = 0, n = 0;
  bool header = false;
  std::vector<Entry> entries;
  std::set<std::pair<Index, Index>> seen;
  while (std::getline(in, line)) {
    ++no;
    const std::string_view t = detail::trim(line);
    if (t.empty()) continue;
    const auto tok = detail::split(t, " \t,");
    if (!header) {
      if (tok.size() != 2) throw ParseError("header must be 'm n'", no);
      m = static_cast<Index>(parse_integer(tok[0], no));
      n = static_cast<Index>(parse_integer(tok[1], no));
      if (m < 1 || n < 1) throw ParseError("dimensions must be positive", no);
      header = true;
      continue;
    }
    if (tok.size() != 3) throw ParseError("expected 'row col value'", no);
    const Index i = static_cast<Index>(parse_integer(tok[0], no));
    const Index j = static_cast<Index>(parse_integer(tok[1], no));
    const double v = parse_double(tok[2], no);
    if (i < 0 || i >= m || j < 0 || j >= n)
      throw ParseError("index (" + std::to_string(i) + "," + std::to_string(j) + ") out of range",
                       no);
    if (!std::isfinite(v)) throw ParseError("value is not finite", no);
    if (!seen.emplace(i, j).second)
      throw ParseError("duplicate cell (" + std::to_string(i) + "," + std::to_string(j) + ")",
                       no);
    entries.push_back({i, j, v});
  }
  if (!header) throw ParseError("missing 'm n' header");
  if (entries.empty()) throw ParseError("no observed entries");
  return ObservedMatrix(m, n, std::move(entries));
}

inline ObservedMatrix load_triplets(const std::string& path) {
  auto in = detail::open_in(path);
  try {
    return read_triplets(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_triplets(std::ostream& out, const ObservedMatrix& data) {
  out << data.rows() << ' ' << data.cols() << '\n';
  for (const Entry& e : data.entries())
    out << e.row << '\t' << e.col << '\t' << format_double(e.value) << '\n';
}

inline void save_triplets(const std::string& path, const ObservedMatrix& data) {
  auto out = detail::open_out(path);
  write_triplets(out, data);
}

// ---------------------------------------------------------------------------
// Dense CSV

inline Matrix read_dense_csv(std::istream& in) {
  std::string line;
  long no = 0;
  Index m = -1, n = -1, row = 0;
  Matrix x;
  while (std::getline(in, line)) {
    ++no;
    const std::string_view t = detail::trim(line);
    if (t.empty()) continue;
    const auto tok = detail::split(t, ",");
    if (m < 0) {
      if (tok.size() != 2) throw ParseError("header must be 'm,n'", no);
      m = static_cast<Index>(parse_integer(detail::trim(tok[0]), no));
      n = static_cast<Index>(parse_integer(detail::trim(tok[1]), no));
      if (m < 1 || n < 1) throw ParseError("dimensions must be positive", no);
      x.resize(m, n);
      continue;
    }
    if (row >= m) throw ParseError("more than " + std::to_string(m) + " rows", no);
    if (static_cast<Index>(tok.size()) != n)
      throw ParseError("expected " + std::to_string(n) + " values", no);
    for (Index j = 0; j < n; ++j)
      x(row, j) = parse_double(detail::trim(tok[static_cast<std::size_t>(j)]), no);
    ++row;
  }
  if (m < 0) throw ParseError("missing 'm,n' header");
  if (row != m) throw ParseError("expected " + std::to_string(m) + " rows, got " +
                                 std::to_string(row));
  return x;
}

inline Matrix load_dense_csv(const std::string& path) {
  auto in = detail::open_in(path);
  try {
    return read_dense_csv(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_dense_csv(std::ostream& out, const Matrix& x) {
  out << x.rows() << ',' << x.cols() << '\n';
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      if (j) out << ',';
      out << format_double(x(i, j));
    }
    out << '\n';
  }
}

inline void save_dense_csv(const std::string& path, const Matrix& x) {
  auto out = detail::open_out(path);
  write_dense_csv(out, x);
}

/// Every finite cell of a dense matrix; NaN cells are treated as missing.
inline ObservedMatrix dense_to_observed(const Matrix& x) {
  Matrix mask(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) mask(i, j) = std::isfinite(x(i, j)) ? 1.0 : 0.0;
  return ObservedMatrix::from_dense(x, mask);
}

// ---------------------------------------------------------------------------
// Graph triplets

inline Matrix read_graph(std::istream& in) {
  std::string line;
  long no = 0;
  Index n = -1;
  Matrix w;
  std::set<std::pair<Index, Index>> seen;
  while (std::getline(in, line)) {
    ++no;
    const std::string_view t = detail::trim(line);
    if (t.empty()) continue;
    if (n < 0) {
      if (t.substr(0, 2) != "n=") throw ParseError("header must be 'n=<count>'", no);
      n = static_cast<Index>(parse_integer(t.substr(2), no));
      if (n < 1) throw ParseError("vertex count must be positive", no);
      w = Matrix::Zero(n, n);
      continue;
    }
    const auto tok = detail::split(t, " \t");
    if (tok.size() != 3) throw ParseError("expected 'i j value'", no);
    const Index i = static_cast<Index>(parse_integer(tok[0], no));
    const Index j = static_cast<Index>(parse_integer(tok[1], no));
    if (i < 0 || i >= n || j < 0 || j >= n) throw ParseError("vertex index out of range", no);
    if (!seen.emplace(i, j).second) throw ParseError("duplicate entry", no);
    w(i, j) = parse_double(tok[2], no);
  }
  if (n < 0) throw ParseError("missing 'n=<count>' header");
  return w;
}

inline Matrix load_graph(const std::string& path) {
  auto in = detail::open_in(path);
  try {
    return read_graph(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// Writes every nonzero entry (both triangles, diagonal included).
inline void write_graph(std::ostream& out, const Matrix& w) {
  out << "n=" << w.rows() << '\n';
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j)
      if (w(i, j) != 0.0) out << i << ' ' << j << ' ' << format_double(w(i, j)) << '\n';
}

inline void save_graph(const std::string& path, const Matrix& w) {
  auto out = detail::open_out(path);
  write_graph(out, w);
}

/// A graph file holding either an adjacency (zero diagonal, nonnegative
/// weights) or a Laplacian, returned as a Laplacian ready for inference.
inline GraphLaplacian load_laplacian(const std::string& path, double jitter = kDefaultJitter) {
  Matrix w = load_graph(path);
  const bool adjacency_like =
      (w.diagonal().array() == 0.0).all() && (w.array() >= 0.0).all();
  if (adjacency_like) return laplacian(Adjacency(std::move(w)), jitter);
  return ensure_jitter(GraphLaplacian(std::move(w), 0.0), jitter);
}

// ---------------------------------------------------------------------------
// Images

inline Matrix read_pgm(std::istream& in) {
  auto next_token = [&in]() {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    return tok;
  };
  if (next_token() != "P5") throw ParseError("not a binary PGM (P5) file");
  const long long w = parse_integer(next_token());
  const long long h = parse_integer(next_token());
  const long long maxval = parse_integer(next_token());
  if (w < 1 || h < 1) throw ParseError("image dimensions must be positive");
  if (maxval != 255) throw ParseError("PGM maxval must be 255, got " + std::to_string(maxval));
  std::vector<unsigned char> buf(static_cast<std::size_t>(w * h));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw ParseError("PGM payload is shorter than width*height");
  if (in.peek() != EOF) throw ParseError("PGM payload is longer than width*height");
  Matrix img(h, w);
  for (long long i = 0; i < h; ++i)
    for (long long j = 0; j < w; ++j) img(i, j) = buf[static_cast<std::size_t>(i * w + j)];
  return img;
}

inline Matrix load_image(const std::string& path) {
  auto in = detail::open_in(path, true);
  try {
    return read_pgm(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// Values are clamped to [0, 255] and rounded to the nearest integer.
inline void write_pgm(std::ostream& out, const Matrix& img) {
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(img.size()));
  for (Index i = 0; i < img.rows(); ++i)
    for (Index j = 0; j < img.cols(); ++j) {
      const double v = std::isnan(img(i, j)) ? 0.0 : std::clamp(img(i, j), 0.0, 255.0);
      buf[static_cast<std::size_t>(i * img.cols() + j)] =
          static_cast<unsigned char>(std::lround(v));
    }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void save_image(const std::string& path, const Matrix& img) {
  auto out = detail::open_out(path, true);
  write_pgm(out, img);
}

inline constexpr double kPixelScale = 255.0;

/// Masked pixels scaled to [0, 1].
inline ObservedMatrix image_to_observed(const Matrix& img, const Matrix& mask) {
  return ObservedMatrix::from_dense(img / kPixelScale, mask);
}

/// Inverse of the pixel scaling applied by image_to_observed.
inline Matrix unit_to_pixels(const Matrix& x) { return x * kPixelScale; }

// ---------------------------------------------------------------------------
// Diagnostics trace

inline std::string trace_to_line(const TraceRecord& r) {
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  // JSON has no NaN; an untracked ELBO is written as null.
  j["elbo"] = std::isfinite(r.elbo) ? nlohmann::ordered_json(r.elbo) : nlohmann::ordered_json();
  j["rank"] = r.rank;
  j["tau_mean"] = r.tau_mean;
  j["residual"] = r.residual;
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

inline TraceRecord trace_from_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    TraceRecord r;
    r.iteration = j.at("iteration").get<int>();
    r.elbo = j.at("elbo").is_null() ? std::nan("") : j.at("elbo").get<double>();
    r.rank = j.at("rank").get<Index>();
    r.tau_mean = j.at("tau_mean").get<double>();
    r.residual = j.at("residual").get<double>();
    r.wall_ms = j.at("wall_ms").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad trace record: ") + e.what());
  }
}

inline void write_trace(std::ostream& out, const std::vector<TraceRecord>& trace) {
  for (const TraceRecord& r : trace) out << trace_to_line(r) << '\n';
}

inline std::vector<TraceRecord> read_trace(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string line;
  long no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(trace_from_line(line));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), no);
    }
  }
  return out;
}

}  // namespace graphmc::io
