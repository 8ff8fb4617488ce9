#pragma once

// Random instance generators shared by the unit and acceptance suites.

#include "graphmc/graphmc.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace graphmc::testing {

using Rng = std::mt19937_64;

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix x(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) x(i, j) = normal(rng);
  return x;
}

/// Symmetric nonnegative weights, zero diagonal, each edge present with probability `density`.
inline Adjacency random_adjacency(Rng& rng, Index n, double density = 0.5) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (unit(rng) < density) a(i, j) = a(j, i) = unit(rng);
  return Adjacency(a);
}

inline GraphLaplacian random_laplacian(Rng& rng, Index n, double jitter = 0.1) {
  return laplacian(random_adjacency(rng, n), jitter);
}

inline Matrix random_spd(Rng& rng, Index n, double floor = 0.1) {
  const Matrix b = random_matrix(rng, n, n);
  Matrix s = b * b.transpose() / static_cast<double>(n);
  s.diagonal().array() += floor;
  return s;
}

/// Each cell observed with probability `ratio`; at least one cell always is.
inline ObservedMatrix random_observed(Rng& rng, Index m, Index n, double ratio, double sd = 1.0) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, sd);
  std::vector<Entry> e;
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      if (unit(rng) < ratio) e.push_back({i, j, normal(rng)});
  if (e.empty()) e.push_back({0, 0, normal(rng)});
  return ObservedMatrix(m, n, std::move(e));
}

/// Low-rank signal plus noise, partially observed.
inline ObservedMatrix random_lowrank_observed(Rng& rng, Index m, Index n, Index rank, double ratio,
                                              double noise_sd = 0.1) {
  const Matrix x = random_matrix(rng, m, rank) * random_matrix(rng, n, rank).transpose() +
                   random_matrix(rng, m, n, noise_sd);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix mask = Matrix::Zero(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) mask(i, j) = unit(rng) < ratio ? 1.0 : 0.0;
  if (mask.sum() == 0.0) mask(0, 0) = 1.0;
  return ObservedMatrix::from_dense(x, mask);
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("graphmc-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace graphmc::testing
