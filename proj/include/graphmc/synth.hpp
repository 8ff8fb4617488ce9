#pragma once

#include "graphmc/common.hpp"
#include "graphmc/graph.hpp"
#include "graphmc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <numeric>
#include <vector>

namespace graphmc {

/// Signal-to-noise sentinel for noiseless generation.
inline constexpr double kNoiselessSnr = std::numeric_limits<double>::infinity();

enum class SynthMode { iid, graph };

struct SynthSpec {
  Index m = 0;
  Index n = 0;
  Index rank = 1;
  double snr_db = 10.0;
  double observe_ratio = 0.2;
  std::uint64_t seed = 0;
  SynthMode mode = SynthMode::iid;
  std::optional<GraphLaplacian> row_graph;  // graph mode only
  std::optional<GraphLaplacian> col_graph;

  void validate() const {
    detail::require(m >= 1 && n >= 1, "synth: dimensions must be positive");
    detail::require(rank >= 1 && rank <= std::min(m, n), "synth: rank must be in [1, min(m,n)]");
    detail::require(observe_ratio > 0.0 && observe_ratio <= 1.0,
                    "synth: observe_ratio must be in (0, 1]");
    detail::require(std::llround(observe_ratio * static_cast<double>(m * n)) >= 1,
                    "synth: observe_ratio yields no observations");
    detail::require(!std::isnan(snr_db), "synth: snr_db is NaN");
    if (mode == SynthMode::graph) {
      detail::require(row_graph && col_graph, "synth: graph mode needs both laplacians");
      detail::require(row_graph->size() == m && col_graph->size() == n,
                      "synth: laplacian sizes do not match m, n");
    }
  }
};

struct SynthData {
  ObservedMatrix observed;
  Matrix truth;  // X = U V'
  Matrix u;
  Matrix v;
  Matrix mask;  // 1 where observed
  double noise_variance = 0.0;
};

/// Exactly round(ratio * m * n) distinct cells, uniform without replacement.
inline Matrix sample_mask(Index m, Index n, double ratio, std::uint64_t seed) {
  detail::require(m >= 1 && n >= 1, "sample_mask: dimensions must be positive");
  detail::require(ratio > 0.0 && ratio <= 1.0, "sample_mask: ratio must be in (0, 1]");
  const Index total = m * n;
  const Index count = static_cast<Index>(std::llround(ratio * static_cast<double>(total)));
  detail::require(count >= 1, "sample_mask: zero cells requested");
  std::mt19937_64 rng(seed);
  std::vector<Index> all(static_cast<std::size_t>(total));
  std::iota(all.begin(), all.end(), Index{0});
  std::vector<Index> cells(static_cast<std::size_t>(count));
  std::sample(all.begin(), all.end(), cells.begin(), count, rng);
  Matrix mask = Matrix::Zero(m, n);
  for (Index c : cells) mask(c / n, c % n) = 1.0;
  return mask;
}

namespace detail {

inline Matrix standard_normal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix x(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) x(i, j) = normal(rng);
  return x;
}

/// Columns drawn from N(0, L^-1): x = C^-T z with L = C C'.
inline Matrix gaussian_with_precision(const GraphLaplacian& lap, Index cols,
                                      std::mt19937_64& rng) {
  Eigen::LLT<Matrix> llt(lap.matrix());
  if (llt.info() != Eigen::Success)
    throw NumericalError("synth: laplacian is not positive definite");
  Matrix z = standard_normal(lap.size(), cols, rng);
  return llt.matrixU().solve(z);
}

inline SynthData finish(Matrix u, Matrix v, const SynthSpec& spec, std::mt19937_64& rng) {
  SynthData d;
  d.truth = u * v.transpose();
  d.u = std::move(u);
  d.v = std::move(v);
  const double mean = d.truth.mean();
  const double signal_var = (d.truth.array() - mean).square().mean();
  d.noise_variance = std::isinf(spec.snr_db) && spec.snr_db > 0
                         ? 0.0
                         : signal_var * std::pow(10.0, -spec.snr_db / 10.0);
  // Noise is drawn even when noiseless so the mask does not depend on the SNR.
  const Matrix noise = standard_normal(spec.m, spec.n, rng) * std::sqrt(d.noise_variance);
  d.mask = sample_mask(spec.m, spec.n, spec.observe_ratio, rng());
  d.observed = ObservedMatrix::from_dense(d.truth + noise, d.mask);
  return d;
}

}  // namespace detail

/// X = U V' with i.i.d. standard normal factors, plus SNR-scaled noise.
inline SynthData gen_iid_lowrank(const SynthSpec& spec) {
  spec.validate();
  detail::require(spec.mode == SynthMode::iid, "gen_iid_lowrank: spec mode is not iid");
  std::mt19937_64 rng(spec.seed);
  Matrix u = detail::standard_normal(spec.m, spec.rank, rng);
  Matrix v = detail::standard_normal(spec.n, spec.rank, rng);
  return detail::finish(std::move(u), std::move(v), spec, rng);
}

/// Factor columns drawn with precision Lr (rows of U) and Lc (rows of V).
inline SynthData gen_graph_structured(const SynthSpec& spec) {
  spec.validate();
  detail::require(spec.mode == SynthMode::graph, "gen_graph_structured: spec mode is not graph");
  std::mt19937_64 rng(spec.seed);
  Matrix u = detail::gaussian_with_precision(*spec.row_graph, spec.rank, rng);
  Matrix v = detail::gaussian_with_precision(*spec.col_graph, spec.rank, rng);
  return detail::finish(std::move(u), std::move(v), spec, rng);
}

inline SynthData generate(const SynthSpec& spec) {
  return spec.mode == SynthMode::iid ? gen_iid_lowrank(spec) : gen_graph_structured(spec);
}

}  // namespace graphmc
