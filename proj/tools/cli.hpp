#pragma once

// Command-line frontend. Everything lives in this header so the test suite
// can drive `run` in-process.

#include "graphmc/graphmc.hpp"

#include "CLI11.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace graphmc::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kExitConverged = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNotConverged = 2;

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Helpers

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string file_digest(const std::string& path) { return sha256_hex(read_file(path)); }

/// The manifest digest covers every field except itself, so two runs with the
/// same inputs and config produce the same value.
inline void write_manifest(const std::string& path, json manifest) {
  manifest.erase("digest");
  const std::string body = manifest.dump();
  manifest["digest"] = sha256_hex(body);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << manifest.dump(2) << '\n';
}

inline bool has_extension(const std::string& path, const char* ext) {
  return fs::path(path).extension() == ext;
}

/// Dense CSV or PGM (pixel scale), chosen by extension.
inline Matrix load_dense_any(const std::string& path) {
  return has_extension(path, ".pgm") ? io::load_image(path) : io::load_dense_csv(path);
}

inline double parse_snr(const std::string& text) {
  if (text == "inf" || text == "Inf" || text == "INF") return kNoiselessSnr;
  return parse_double(text);
}

inline std::vector<double> parse_alphabet(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_double(io::detail::trim(tok)));
  detail::require(!out.empty(), "alphabet is empty");
  return out;
}

enum class EvalOn { unobserved, observed, all };

/// Cells to score given the observation mask. Falls back to all cells when
/// the selection is empty (e.g. a fully observed matrix).
inline Matrix evaluation_mask(const Matrix& observed, EvalOn on, std::ostream& log) {
  Matrix m;
  switch (on) {
    case EvalOn::all: m = Matrix::Ones(observed.rows(), observed.cols()); break;
    case EvalOn::observed: m = (observed.array() != 0.0).cast<double>().matrix(); break;
    case EvalOn::unobserved: m = (observed.array() == 0.0).cast<double>().matrix(); break;
  }
  if (m.sum() == 0.0) {
    log << "note: no cells selected for evaluation; scoring all cells\n";
    m.setOnes();
  }
  return m;
}

inline const std::map<std::string, EvalOn>& eval_on_names() {
  static const std::map<std::string, EvalOn> names{
      {"unobserved", EvalOn::unobserved}, {"observed", EvalOn::observed}, {"all", EvalOn::all}};
  return names;
}

// ---------------------------------------------------------------------------
// complete

struct CompleteOptions {
  std::string input;
  std::string format;  // empty: infer from extension
  std::string mask;
  double ratio = 0.0;  // pgm without a mask: sample this fraction of pixels
  std::string truth;
  std::string row_graph;
  std::string col_graph;
  Index init_rank = 100;
  int max_iters = 200;
  double tol = 1e-5;
  double prune_tol = 1e-6;
  std::uint64_t seed = 0;
  double jitter = kDefaultJitter;
  std::string out;
  std::string trace;
  std::string variance;
  EvalOn eval_on = EvalOn::unobserved;
};

inline std::string resolve_format(const CompleteOptions& o) {
  if (!o.format.empty()) return o.format;
  if (has_extension(o.input, ".pgm")) return "pgm";
  if (has_extension(o.input, ".csv")) return "csv";
  return "triplet";
}

inline GraphLaplacian side_graph(const std::string& path, Index size, double jitter,
                                 const char* which, std::ostream& log) {
  if (path.empty()) {
    log << which << " graph not given; using identity Laplacian\n";
    return identity_laplacian(size);
  }
  GraphLaplacian lap = io::load_laplacian(path, jitter);
  if (lap.size() != size)
    throw std::invalid_argument(std::string(which) + " graph has " + std::to_string(lap.size()) +
                                " vertices but the data has " + std::to_string(size));
  return lap;
}

inline int cmd_complete(const CompleteOptions& o, std::ostream& log) {
  const std::string format = resolve_format(o);
  ObservedMatrix data;
  Matrix observed_mask;
  json inputs = json::object();
  inputs["input"] = file_digest(o.input);

  if (format == "triplet") {
    data = io::load_triplets(o.input);
    observed_mask = data.mask();
  } else if (format == "csv") {
    Matrix x = io::load_dense_csv(o.input);
    if (!o.mask.empty()) {
      const Matrix mask = io::load_dense_csv(o.mask);
      detail::require(mask.rows() == x.rows() && mask.cols() == x.cols(),
                      "mask shape does not match the input");
      x = (mask.array() != 0.0).select(x, std::nan(""));
    }
    data = io::dense_to_observed(x);
    observed_mask = data.mask();
  } else if (format == "pgm") {
    const Matrix img = io::load_image(o.input);
    if (!o.mask.empty()) {
      observed_mask = io::load_dense_csv(o.mask);
    } else {
      detail::require(o.ratio > 0.0, "pgm input needs --mask or --ratio");
      observed_mask = sample_mask(img.rows(), img.cols(), o.ratio, o.seed);
    }
    detail::require(observed_mask.rows() == img.rows() && observed_mask.cols() == img.cols(),
                    "mask shape does not match the image");
    data = io::image_to_observed(img, observed_mask);
  } else {
    throw std::invalid_argument("unknown format '" + format + "'");
  }
  if (!o.mask.empty()) inputs["mask"] = file_digest(o.mask);

  GraphLaplacian lr = side_graph(o.row_graph, data.rows(), o.jitter, "row", log);
  GraphLaplacian lc = side_graph(o.col_graph, data.cols(), o.jitter, "col", log);
  if (!o.row_graph.empty()) inputs["row_graph"] = file_digest(o.row_graph);
  if (!o.col_graph.empty()) inputs["col_graph"] = file_digest(o.col_graph);

  InferenceConfig cfg;
  cfg.initial_rank = o.init_rank;
  cfg.max_iters = o.max_iters;
  cfg.tol = o.tol;
  cfg.prune_rel_tol = o.prune_tol;
  cfg.seed = o.seed;
  cfg.predictive_variance = !o.variance.empty();
  cfg.validate();

  const CompletionResult res = run_vi(data, std::move(lr), std::move(lc), cfg);
  log << "rank " << res.rank << ", " << res.iterations << " iterations, "
      << (res.converged ? "converged" : "not converged") << '\n';
  if (res.diagnostics.rank_exceeds_dims)
    log << "warning: initial rank exceeds min(m, n); surplus columns initialized randomly\n";
  if (res.diagnostics.lambda_clamped) log << "note: lambda clamped for vanishing columns\n";

  json outputs = json::object();
  const bool image = format == "pgm";
  if (image) {
    // Observed pixels are kept as given; only missing ones are filled in.
    const Matrix img = io::load_image(o.input);
    const Matrix filled =
        (observed_mask.array() != 0.0).select(img, io::unit_to_pixels(res.xhat));
    io::save_image(o.out, filled);
  } else {
    io::save_dense_csv(o.out, res.xhat);
  }
  outputs["completed"] = file_digest(o.out);

  if (!o.variance.empty()) {
    io::save_dense_csv(o.variance, *res.predictive_variance);
    outputs["variance"] = file_digest(o.variance);
  }
  if (!o.trace.empty()) {
    std::ofstream t(o.trace);
    if (!t) throw std::runtime_error("cannot write '" + o.trace + "'");
    io::write_trace(t, res.trace);
  }

  std::optional<EvalReport> report;
  if (!o.truth.empty()) {
    inputs["truth"] = file_digest(o.truth);
    const Matrix truth = load_dense_any(o.truth);
    detail::require(truth.rows() == data.rows() && truth.cols() == data.cols(),
                    "truth shape does not match the data");
    const Matrix eval_mask = evaluation_mask(observed_mask, o.eval_on, log);
    EvalReport r;
    r.n_evaluated = static_cast<Index>(eval_mask.sum());
    if (image) {
      const Matrix pred = io::load_image(o.out);
      r.rmse = rmse(pred, truth, eval_mask);
      r.psnr_db = psnr(pred, truth);
      if (truth.rows() >= 11 && truth.cols() >= 11) r.ssim = ssim(pred, truth);
    } else {
      r.rmse = rmse(res.xhat, truth, eval_mask);
    }
    std::ofstream e(o.out + ".eval");
    if (!e) throw std::runtime_error("cannot write '" + o.out + ".eval'");
    e << r.to_record();
    outputs["eval"] = file_digest(o.out + ".eval");
    log << r.to_record();
    report = r;
  }

  json m;
  m["command"] = "complete";
  m["version"] = kVersion;
  m["config"] = {{"format", format},
                 {"init_rank", o.init_rank},
                 {"max_iters", o.max_iters},
                 {"tol", o.tol},
                 {"prune_tol", o.prune_tol},
                 {"seed", o.seed},
                 {"jitter", o.jitter},
                 {"ratio", o.ratio},
                 {"eval_on", o.eval_on == EvalOn::all        ? "all"
                             : o.eval_on == EvalOn::observed ? "observed"
                                                             : "unobserved"},
                 {"a0", cfg.prior.a0},
                 {"b0", cfg.prior.b0},
                 {"c0", cfg.prior.c0_at(0)},
                 {"d0", cfg.prior.d0_at(0)}};
  m["inputs"] = inputs;
  m["result"] = {{"rank", res.rank},
                 {"iterations", res.iterations},
                 {"converged", res.converged},
                 {"tau_mean", res.tau_mean}};
  m["outputs"] = outputs;
  write_manifest(o.out + ".manifest.json", m);
  return res.converged ? kExitConverged : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::string mode = "iid";
  Index m = 0;
  Index n = 0;
  Index rank = 1;
  std::string snr = "10";
  double ratio = 0.2;
  double theta = std::sqrt(3.0);
  double jitter = kDefaultJitter;
  std::uint64_t seed = 0;
  std::string out_dir;
};

inline int cmd_synth(const SynthOptions& o, std::ostream& log) {
  SynthSpec spec;
  spec.m = o.m;
  spec.n = o.n;
  spec.rank = o.rank;
  spec.snr_db = parse_snr(o.snr);
  spec.observe_ratio = o.ratio;
  spec.seed = o.seed;
  std::optional<Adjacency> row_adj, col_adj;
  if (o.mode == "graph") {
    spec.mode = SynthMode::graph;
    row_adj = gaussian_kernel_adjacency(o.m, o.theta);
    col_adj = gaussian_kernel_adjacency(o.n, o.theta);
    spec.row_graph = laplacian(*row_adj, o.jitter);
    spec.col_graph = laplacian(*col_adj, o.jitter);
  } else if (o.mode != "iid") {
    throw std::invalid_argument("unknown synth mode '" + o.mode + "'");
  }
  const SynthData d = generate(spec);

  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);
  json outputs = json::object();
  auto emit = [&](const std::string& name, auto&& writer) {
    const std::string path = (dir / name).string();
    writer(path);
    outputs[name] = file_digest(path);
  };
  emit("data.tsv", [&](const std::string& p) { io::save_triplets(p, d.observed); });
  emit("truth.csv", [&](const std::string& p) { io::save_dense_csv(p, d.truth); });
  emit("mask.csv", [&](const std::string& p) { io::save_dense_csv(p, d.mask); });
  if (row_adj) {
    emit("row_graph.txt", [&](const std::string& p) { io::save_graph(p, row_adj->weights()); });
    emit("col_graph.txt", [&](const std::string& p) { io::save_graph(p, col_adj->weights()); });
  }

  json m;
  m["command"] = "synth";
  m["version"] = kVersion;
  m["config"] = {{"mode", o.mode},      {"m", o.m},          {"n", o.n},
                 {"rank", o.rank},      {"snr", o.snr},      {"ratio", o.ratio},
                 {"theta", o.theta},    {"jitter", o.jitter}, {"seed", o.seed}};
  m["result"] = {{"observed", d.observed.size()}, {"noise_variance", d.noise_variance}};
  m["outputs"] = outputs;
  write_manifest((dir / "manifest.json").string(), m);
  log << "wrote " << d.observed.size() << " observations to " << o.out_dir << '\n';
  return kExitConverged;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string pred;
  std::string truth;
  std::string mask;  // cells to score (nonzero); all cells when absent
  bool invert_mask = false;
  std::vector<std::string> metrics{"rmse"};
  std::string alphabet;
  double peak = 255.0;
  std::string out;
};

inline int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& log) {
  const Matrix pred = load_dense_any(o.pred);
  const Matrix truth = load_dense_any(o.truth);
  detail::require(pred.rows() == truth.rows() && pred.cols() == truth.cols(),
                  "prediction and truth shapes differ");
  Matrix mask = Matrix::Ones(pred.rows(), pred.cols());
  if (!o.mask.empty()) {
    mask = io::load_dense_csv(o.mask);
    detail::require(mask.rows() == pred.rows() && mask.cols() == pred.cols(),
                    "mask shape does not match the prediction");
    mask = ((mask.array() != 0.0) != o.invert_mask).cast<double>().matrix();
  }

  EvalReport r;
  r.n_evaluated = static_cast<Index>(mask.sum());
  r.rmse = rmse(pred, truth, mask);
  for (const std::string& metric : o.metrics) {
    if (metric == "rmse") continue;
    if (metric == "error-rate") {
      detail::require(!o.alphabet.empty(), "error-rate needs --alphabet");
      const std::vector<double> alphabet = parse_alphabet(o.alphabet);
      r.error_rate = error_rate(pred, truth, mask, alphabet);
    } else if (metric == "psnr") {
      if (!o.mask.empty()) log << "note: psnr is computed over the whole image\n";
      r.psnr_db = psnr(pred, truth, o.peak);
    } else if (metric == "ssim") {
      if (!o.mask.empty()) log << "note: ssim is computed over the whole image\n";
      r.ssim = ssim(pred, truth, o.peak);
    } else {
      throw std::invalid_argument("unknown metric '" + metric + "'");
    }
  }
  const std::string record = r.to_record();
  out << record;
  if (!o.out.empty()) {
    std::ofstream f(o.out);
    if (!f) throw std::runtime_error("cannot write '" + o.out + "'");
    f << record;
  }
  return kExitConverged;
}

// ---------------------------------------------------------------------------
// graph

struct GraphOptions {
  std::string mode = "knn";
  std::string features;
  Index k = 10;
  Index n = 0;
  double theta = std::sqrt(3.0);
  double jitter = kDefaultJitter;
  std::string emit = "laplacian";
  std::string out;
};

inline int cmd_graph(const GraphOptions& o, std::ostream& log) {
  std::optional<Adjacency> adj;
  if (o.mode == "knn") {
    detail::require(!o.features.empty(), "knn mode needs --features");
    const Matrix f = io::load_dense_csv(o.features);
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<std::size_t>(f.rows()));
    for (Index i = 0; i < f.rows(); ++i) {
      const Vector r = f.row(i).transpose();
      rows.emplace_back(r.data(), r.data() + r.size());
    }
    adj = knn_adjacency(rows, o.k);
  } else if (o.mode == "kernel") {
    detail::require(o.n >= 1, "kernel mode needs --n");
    adj = gaussian_kernel_adjacency(o.n, o.theta);
  } else {
    throw std::invalid_argument("unknown graph mode '" + o.mode + "'");
  }

  if (o.emit == "adjacency") {
    io::save_graph(o.out, adj->weights());
  } else if (o.emit == "laplacian") {
    io::save_graph(o.out, laplacian(*adj, o.jitter).matrix());
  } else {
    throw std::invalid_argument("unknown --emit value '" + o.emit + "'");
  }
  log << "wrote " << o.emit << " with " << adj->size() << " vertices to " << o.out << '\n';
  return kExitConverged;
}

// ---------------------------------------------------------------------------
// Entry point

inline void apply_thread_env(std::ostream& log) {
  const char* env = std::getenv("GRAPHMC_THREADS");
  if (env == nullptr || *env == '\0') return;
  try {
    const long long t = parse_integer(env);
    if (t < 1) throw ParseError("must be >= 1");
    Eigen::setNbThreads(static_cast<int>(t));
  } catch (const ParseError&) {
    log << "warning: ignoring GRAPHMC_THREADS='" << env << "'\n";
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& log = std::cerr) {
  CLI::App app{"Graph-regularized Bayesian matrix completion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CompleteOptions co;
  std::string eval_on = "unobserved";
  auto* complete = app.add_subcommand("complete", "complete a partially observed matrix");
  complete->add_option("--input", co.input, "observed data")->required()->check(CLI::ExistingFile);
  complete->add_option("--format", co.format, "input format (default: from extension)")
      ->check(CLI::IsMember({"triplet", "csv", "pgm"}));
  complete->add_option("--mask", co.mask, "dense 0/1 CSV of observed cells")
      ->check(CLI::ExistingFile);
  complete->add_option("--ratio", co.ratio, "pgm only: fraction of pixels to observe");
  complete->add_option("--truth", co.truth, "ground truth (CSV or PGM) for evaluation")
      ->check(CLI::ExistingFile);
  complete->add_option("--row-graph", co.row_graph, "row graph file")->check(CLI::ExistingFile);
  complete->add_option("--col-graph", co.col_graph, "column graph file")->check(CLI::ExistingFile);
  complete->add_option("--init-rank", co.init_rank, "initial rank")->capture_default_str();
  complete->add_option("--max-iters", co.max_iters, "iteration cap")->capture_default_str();
  complete->add_option("--tol", co.tol, "convergence tolerance")->capture_default_str();
  complete->add_option("--prune-tol", co.prune_tol, "relative pruning energy")
      ->capture_default_str();
  complete->add_option("--seed", co.seed, "random seed")->capture_default_str();
  complete->add_option("--jitter", co.jitter, "Laplacian diagonal jitter")->capture_default_str();
  complete->add_option("--out", co.out, "completed matrix (CSV, or PGM for image input)")
      ->required();
  complete->add_option("--trace", co.trace, "per-iteration JSON lines");
  complete->add_option("--variance", co.variance, "predictive variance CSV");
  complete->add_option("--eval-on", eval_on, "cells scored against --truth")
      ->check(CLI::IsMember({"unobserved", "observed", "all"}))
      ->capture_default_str();

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "generate a synthetic completion problem");
  synth->add_option("--mode", so.mode, "factor prior")->check(CLI::IsMember({"iid", "graph"}))
      ->capture_default_str();
  synth->add_option("--m", so.m, "rows")->required();
  synth->add_option("--n", so.n, "columns")->required();
  synth->add_option("--rank", so.rank, "true rank")->required();
  synth->add_option("--snr", so.snr, "SNR in dB, or inf")->capture_default_str();
  synth->add_option("--ratio", so.ratio, "observed fraction")->capture_default_str();
  synth->add_option("--theta", so.theta, "kernel width (graph mode)")->capture_default_str();
  synth->add_option("--jitter", so.jitter, "Laplacian diagonal jitter (graph mode)")->capture_default_str();
  synth->add_option("--seed", so.seed, "random seed")->capture_default_str();
  synth->add_option("--out-dir", so.out_dir, "directory for the generated files")->required();

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "score a prediction against the truth");
  eval->add_option("--pred", eo.pred, "predicted matrix (CSV or PGM)")->required()->check(CLI::ExistingFile);
  eval->add_option("--truth", eo.truth, "ground truth (CSV or PGM)")->required()->check(CLI::ExistingFile);
  eval->add_option("--mask", eo.mask, "dense 0/1 CSV of cells to score")
      ->check(CLI::ExistingFile);
  eval->add_flag("--invert-mask", eo.invert_mask, "score the cells where the mask is 0");
  eval->add_option("--metric", eo.metrics, "rmse, error-rate, psnr, ssim (repeatable)")
      ->check(CLI::IsMember({"rmse", "error-rate", "psnr", "ssim"}));
  eval->add_option("--alphabet", eo.alphabet, "comma-separated values, e.g. 0,1,2");
  eval->add_option("--peak", eo.peak, "peak value for psnr/ssim")->capture_default_str();
  eval->add_option("--out", eo.out, "also write the record here");

  GraphOptions go;
  auto* graph = app.add_subcommand("graph", "build a graph Laplacian");
  graph->add_option("--mode", go.mode, "k-nearest neighbours or Gaussian kernel")->check(CLI::IsMember({"knn", "kernel"}))
      ->capture_default_str();
  graph->add_option("--features", go.features, "dense CSV, one vertex per row")
      ->check(CLI::ExistingFile);
  graph->add_option("--k", go.k, "neighbours per vertex (knn mode)")->capture_default_str();
  graph->add_option("--n", go.n, "vertex count (kernel mode)");
  graph->add_option("--theta", go.theta, "kernel width (kernel mode)")->capture_default_str();
  graph->add_option("--jitter", go.jitter, "Laplacian diagonal jitter")->capture_default_str();
  graph->add_option("--emit", go.emit, "write the Laplacian or the adjacency")->check(CLI::IsMember({"laplacian", "adjacency"}))
      ->capture_default_str();
  graph->add_option("--out", go.out, "output graph file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, log);
    return code == 0 ? kExitConverged : kExitError;
  }

  apply_thread_env(log);
  try {
    if (*complete) {
      co.eval_on = eval_on_names().at(eval_on);
      return cmd_complete(co, log);
    }
    if (*synth) return cmd_synth(so, log);
    if (*eval) return cmd_eval(eo, out, log);
    if (*graph) return cmd_graph(go, log);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace graphmc::cli
