#pragma once

#include <atomic>
#include <cmath>
#include <cstring>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

#include "lex/synthgen.hpp"
#include "lex/trainer.hpp"

namespace lex::eval {

using diffnet::Shape;
using diffnet::Tensor;
using train::RunRecord;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Per-mask metrics

struct MaskCounts {
  std::size_t tp = 0, fp = 0, selected = 0, relevant = 0, irrelevant = 0;
};

struct MaskMetrics {
  double tpr = 0, fpr = 0, fdr = 0;
  MaskCounts counts;
};

/// tpr = |z & z*| / |z*|, fpr = |z & !z*| / |!z*|, fdr = |z & !z*| / |z|.
/// Empty denominators give 0 (an empty selection discovers nothing falsely).
inline MaskMetrics mask_metrics(std::span<const std::uint8_t> z, std::span<const std::uint8_t> z_star) {
  if (z.size() != z_star.size())
    throw ContractError("mask_metrics: mask lengths differ (" + std::to_string(z.size()) + " vs " +
                        std::to_string(z_star.size()) + ")");
  MaskMetrics m;
  auto& c = m.counts;
  for (std::size_t d = 0; d < z.size(); ++d) {
    if (z[d] > 1 || z_star[d] > 1) throw ContractError("mask_metrics: masks must be binary");
    c.selected += z[d];
    c.relevant += z_star[d];
    c.tp += z[d] & z_star[d];
    c.fp += z[d] & (1 - z_star[d]);
  }
  c.irrelevant = z.size() - c.relevant;
  auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  m.tpr = ratio(c.tp, c.relevant);
  m.fpr = ratio(c.fp, c.irrelevant);
  m.fdr = ratio(c.fp, c.selected);
  return m;
}

// ---------------------------------------------------------------------------
// Model evaluation

struct SelectionMetrics {
  double tpr = 0, fpr = 0, fdr = 0;
  double accuracy = 0;           // argmax of mask-averaged probabilities
  double accuracy_per_mask = 0;  // per-mask argmax accuracy, averaged
  double eff_rate = 0;           // mean E||Z|| / D
  std::size_t n_mask_samples = 0;
  std::size_t n_instances = 0;

  json to_json() const {
    return {{"tpr", tpr},
            {"fpr", fpr},
            {"fdr", fdr},
            {"accuracy", accuracy},
            {"accuracy_per_mask", accuracy_per_mask},
            {"eff_rate", eff_rate},
            {"n_mask_samples", n_mask_samples},
            {"n_instances", n_instances}};
  }
  static SelectionMetrics from_json(const json& j) {
    SelectionMetrics m;
    m.tpr = j.at("tpr");
    m.fpr = j.at("fpr");
    m.fdr = j.at("fdr");
    m.accuracy = j.at("accuracy");
    m.accuracy_per_mask = j.at("accuracy_per_mask");
    m.eff_rate = j.at("eff_rate");
    m.n_mask_samples = j.at("n_mask_samples");
    m.n_instances = j.at("n_instances");
    return m;
  }
};

namespace detail {

/// Instance stream keyed by the row's content, so results do not depend on row order.
inline Rng instance_stream(std::uint64_t seed, const double* x, std::size_t dim, int y) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(x, dim * sizeof(double));
  mix(&y, sizeof y);
  return make_stream(seed ^ h, "eval/instance");
}

}  // namespace detail

/// Per instance: `n_masks` masks from the selector, the three measures per mask
/// (averaged over masks, then instances), and accuracy of the mask-averaged predictive.
template <typename T>
SelectionMetrics evaluate_model(const model::LexModel<T>& m, const impute::Imputer& imp, const Dataset& test,
                                std::size_t n_masks, Rng& rng) {
  if (n_masks == 0) throw ConfigError("evaluate_model: n_masks must be at least 1");
  if (test.dim != m.cfg.dim()) throw DimensionError("evaluate_model: test width differs from the model");
  if (test.size() == 0) throw ContractError("evaluate_model: empty test set");
  const auto& cfg = m.cfg;
  const std::size_t D = cfg.dim(), C = cfg.classes(), n = test.size();
  const std::uint64_t seed = rng();
  SelectionMetrics out;
  out.n_mask_samples = n_masks;
  out.n_instances = n;

  auto all_logits = model::selector_logits(cfg, m.gamma, model::rows_tensor<T>(test.X.data(), n, D));
  std::vector<double> row_logits(D);
  Tensor<T> xt(Shape{n_masks, D});
  std::vector<std::uint8_t> z(D);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = test.row(i);
    Rng r = detail::instance_stream(seed, x, D, test.y[i]);
    for (std::size_t d = 0; d < D; ++d) row_logits[d] = static_cast<double>(all_logits(i, d));
    Tensor<double> rep(Shape{n_masks, D});
    for (std::size_t s = 0; s < n_masks; ++s) std::copy(row_logits.begin(), row_logits.end(), rep.row(s).begin());
    auto sample = cfg.mode == mask::Mode::bernoulli ? mask::sample_bernoulli(rep, r, cfg.tau)
                                                    : mask::sample_subset(rep, cfg.k, r);
    Tensor<T> Xi(Shape{n_masks, D});
    Tensor<T> H(Shape{n_masks, D});
    for (std::size_t s = 0; s < n_masks; ++s)
      for (std::size_t d = 0; d < D; ++d) {
        Xi(s, d) = static_cast<T>(x[d]);
        H(s, d) = static_cast<T>(sample.hard(s, d));
      }
    const std::size_t K = imp.stochastic() ? cfg.K_imp : 1;
    auto fill = model::draw_fill(imp, Xi, H, K, r);
    Tensor<T> inputs(Shape{n_masks * K, D});
    for (std::size_t s = 0; s < n_masks; ++s)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t d = 0; d < D; ++d)
          inputs(s * K + k, d) = H(s, d) * Xi(s, d) + (T(1) - H(s, d)) * fill(s * K + k, d);
    auto p = model::predictor_probs(cfg, m.theta, inputs);

    double tpr = 0, fpr = 0, fdr = 0, per_mask = 0;
    std::vector<double> avg(C, 0.0);
    for (std::size_t s = 0; s < n_masks; ++s) {
      for (std::size_t d = 0; d < D; ++d) z[d] = sample.hard(s, d) > 0.5 ? 1 : 0;
      auto mm = mask_metrics(z, std::span<const std::uint8_t>(test.mask_row(i), D));
      tpr += mm.tpr;
      fpr += mm.fpr;
      fdr += mm.fdr;
      std::vector<double> q(C, 0.0);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < C; ++c) q[c] += static_cast<double>(p(s * K + k, c)) / static_cast<double>(K);
      for (std::size_t c = 0; c < C; ++c) avg[c] += q[c] / static_cast<double>(n_masks);
      per_mask += static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin()) ==
                  static_cast<std::size_t>(test.y[i]);
    }
    const double inv = 1.0 / static_cast<double>(n_masks);
    out.tpr += tpr * inv;
    out.fpr += fpr * inv;
    out.fdr += fdr * inv;
    out.accuracy_per_mask += per_mask * inv;
    out.accuracy += static_cast<std::size_t>(std::max_element(avg.begin(), avg.end()) - avg.begin()) ==
                    static_cast<std::size_t>(test.y[i]);
    if (cfg.mode == mask::Mode::subset) {
      out.eff_rate += static_cast<double>(cfg.k) / static_cast<double>(D);
    } else {
      double e = 0;
      for (double l : row_logits) e += diffnet::detail::sigmoid(l);
      out.eff_rate += e / static_cast<double>(D);
    }
  }
  const double invn = 1.0 / static_cast<double>(n);
  out.tpr *= invn;
  out.fpr *= invn;
  out.fdr *= invn;
  out.accuracy *= invn;
  out.accuracy_per_mask *= invn;
  out.eff_rate *= invn;
  return out;
}

/// Flags accuracy above an analytic ceiling for the restricted predictor by at
/// least `margin`: the selector is then encoding the label in the mask itself.
struct CeilingCheck {
  double accuracy = 0, ceiling = 0, margin = 0.05;
  bool exceeded() const { return accuracy >= ceiling + margin; }
};

// ---------------------------------------------------------------------------
// Sweeps

struct Cell {
  std::string preset;
  double x = 0;  // rate, constant or lambda depending on the sweep
  std::uint64_t seed = 0;
};

struct CellResult {
  Cell cell;
  bool ok = false;
  std::string error;
  RunRecord record;
  SelectionMetrics metrics;
};

struct SweepOptions {
  std::size_t jobs = 1;
  std::size_t n_masks = 100;
  /// Per-run output directories under this root (empty: no files).
  std::string out_dir;
  std::function<void(const CellResult&)> on_done;
};

enum class SweepKind { rates, constant, lambda };

inline const char* to_string(SweepKind k) {
  switch (k) {
    case SweepKind::rates: return "rates";
    case SweepKind::constant: return "constant";
    case SweepKind::lambda: return "lambda";
  }
  return "?";
}

inline SweepKind sweep_kind_from_string(const std::string& s) {
  if (s == "rates") return SweepKind::rates;
  if (s == "constant") return SweepKind::constant;
  if (s == "lambda") return SweepKind::lambda;
  throw ConfigError("unknown sweep '" + s + "' (rates, constant, lambda)");
}

/// Resolved configuration of one sweep cell: preset applied on top of `base`
/// (network shapes, estimator and training schedule kept), then the swept value.
inline RunConfig cell_config(const RunConfig& base, SweepKind kind, const Cell& c) {
  RunConfig rc = base;
  if (!c.preset.empty()) config::apply_preset(rc, c.preset);
  switch (kind) {
    case SweepKind::rates:
      rc.lex.mode = mask::Mode::subset;
      rc.lex.k = mask::k_from_rate(c.x, rc.lex.dim());
      break;
    case SweepKind::constant:
      rc.lex.imputer.constant = c.x;
      break;
    case SweepKind::lambda:
      rc.lex.mode = mask::Mode::bernoulli;
      rc.lex.penalty = model::Penalty::l1;
      rc.lex.lambda = c.x;
      break;
  }
  rc.train.seed = c.seed;
  rc.data.seed = c.seed;
  rc.lex.imputer.seed = c.seed;
  rc.lex.validate();
  return rc;
}

/// One complete run: data replicate, imputer fit, training, test evaluation.
template <typename T = float>
CellResult run_cell(const RunConfig& rc, const Cell& cell, std::size_t n_masks, const std::string& out_dir = {}) {
  CellResult res{cell, false, {}, {}, {}};
  try {
    auto rep = synth::gen_replicate(synth::name_from_string(rc.data.name), rc.data.n_train, rc.data.n_test,
                                    rc.data.seed, rc.data.val_fraction);
    auto imp = impute::Imputer::fit(rc.lex.imputer, rep.train);
    train::TrainOptions opt;
    opt.out_dir = out_dir;
    auto outcome = train::train<T>(rc, rep.train, imp, opt);
    Rng eval_rng = make_stream(rc.train.seed, "eval");
    res.metrics = evaluate_model(outcome.model, imp, rep.test, n_masks, eval_rng);
    outcome.record.metrics = res.metrics.to_json();
    res.record = std::move(outcome.record);
    res.ok = true;
    if (!out_dir.empty()) {
      std::ofstream(fs::path(out_dir) / "run.json") << res.record.to_json().dump(2) << "\n";
      std::ofstream(fs::path(out_dir) / "imputer.json") << imp.to_json().dump() << "\n";
    }
  } catch (const std::exception& e) {
    res.error = e.what();
  }
  return res;
}

namespace detail {

inline std::string cell_dir(const std::string& root, SweepKind kind, const Cell& c) {
  if (root.empty()) return {};
  std::ostringstream os;
  os << to_string(kind) << "_" << (c.preset.empty() ? "base" : c.preset) << "_" << c.x << "_seed" << c.seed;
  return (std::filesystem::path(root) / "runs" / os.str()).string();
}
}  // namespace detail

/// Runs every cell (up to `jobs` at a time); results are in cell order. A failing
/// cell is recorded and the sweep continues.
template <typename T = float>
std::vector<CellResult> run_sweep(const RunConfig& base, SweepKind kind, const std::vector<Cell>& cells,
                                  const SweepOptions& opt = {}) {
  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      RunConfig rc;
      try {
        rc = cell_config(base, kind, cells[i]);
      } catch (const std::exception& e) {
        results[i] = {cells[i], false, e.what(), {}, {}};
        continue;
      }
      results[i] = run_cell<T>(rc, cells[i], opt.n_masks, detail::cell_dir(opt.out_dir, kind, cells[i]));
      if (opt.on_done) {
        std::lock_guard lock(done_mutex);
        opt.on_done(results[i]);
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return results;
}

inline std::vector<Cell> factorial(const std::vector<std::string>& presets, const std::vector<double>& xs,
                                   const std::vector<std::uint64_t>& seeds) {
  std::vector<Cell> cells;
  for (const auto& p : presets)
    for (double x : xs)
      for (auto s : seeds) cells.push_back({p, x, s});
  return cells;
}

/// Selection rates 2/11 .. 9/11.
inline std::vector<double> default_rates() {
  std::vector<double> r;
  for (int i = 2; i <= 9; ++i) r.push_back(i / 11.0);
  return r;
}

/// Constants -10 .. 9.
inline std::vector<double> default_constants() {
  std::vector<double> c;
  for (int i = -10; i <= 9; ++i) c.push_back(i);
  return c;
}

inline std::vector<double> default_lambdas() { return {0.0, 0.001, 0.01, 0.1, 1.0, 10.0, 100.0}; }

inline std::vector<std::string> default_presets(SweepKind k) {
  switch (k) {
    case SweepKind::rates: return {"gaussian_std", "constant", "surrogate_constant"};
    case SweepKind::constant: return {"constant", "surrogate_constant"};
    case SweepKind::lambda: return {"invase"};
  }
  return {};
}

template <typename T = float>
std::vector<CellResult> sweep_rates(const RunConfig& base, const std::vector<double>& rates,
                                    const std::vector<std::uint64_t>& seeds, const SweepOptions& opt = {},
                                    const std::vector<std::string>& presets = default_presets(SweepKind::rates)) {
  return run_sweep<T>(base, SweepKind::rates, factorial(presets, rates, seeds), opt);
}

template <typename T = float>
std::vector<CellResult> sweep_constant(const RunConfig& base, const std::vector<double>& constants,
                                       const std::vector<std::uint64_t>& seeds, const SweepOptions& opt = {},
                                       const std::vector<std::string>& presets = default_presets(SweepKind::constant)) {
  return run_sweep<T>(base, SweepKind::constant, factorial(presets, constants, seeds), opt);
}

template <typename T = float>
std::vector<CellResult> sweep_lambda(const RunConfig& base, const std::vector<double>& lambdas,
                                     const std::vector<std::uint64_t>& seeds, const SweepOptions& opt = {},
                                     const std::vector<std::string>& presets = default_presets(SweepKind::lambda)) {
  return run_sweep<T>(base, SweepKind::lambda, factorial(presets, lambdas, seeds), opt);
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateRow {
  std::string dataset, preset;
  double x = 0;
  std::size_t seed_count = 0;
  std::size_t failures = 0;
  double acc_mean = 0, acc_std = 0, tpr_mean = 0, tpr_std = 0, fpr_mean = 0, fpr_std = 0, fdr_mean = 0, fdr_std = 0;
  double eff_rate_mean = 0;
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

/// One row per (preset, x) cell in first-appearance order; sample std over seeds.
inline std::vector<AggregateRow> aggregate(const std::vector<CellResult>& results, const std::string& dataset) {
  std::vector<AggregateRow> rows;
  std::vector<std::vector<const CellResult*>> members;
  for (const auto& r : results) {
    std::size_t i = 0;
    while (i < rows.size() && !(rows[i].preset == r.cell.preset && rows[i].x == r.cell.x)) ++i;
    if (i == rows.size()) {
      rows.push_back({dataset, r.cell.preset, r.cell.x});
      members.emplace_back();
    }
    members[i].push_back(&r);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<double> acc, tpr, fpr, fdr, eff;
    for (const auto* r : members[i]) {
      if (!r->ok) {
        ++rows[i].failures;
        continue;
      }
      acc.push_back(r->metrics.accuracy);
      tpr.push_back(r->metrics.tpr);
      fpr.push_back(r->metrics.fpr);
      fdr.push_back(r->metrics.fdr);
      eff.push_back(r->metrics.eff_rate);
    }
    auto& a = rows[i];
    a.seed_count = acc.size();
    std::tie(a.acc_mean, a.acc_std) = mean_std(acc);
    std::tie(a.tpr_mean, a.tpr_std) = mean_std(tpr);
    std::tie(a.fpr_mean, a.fpr_std) = mean_std(fpr);
    std::tie(a.fdr_mean, a.fdr_std) = mean_std(fdr);
    a.eff_rate_mean = mean_std(eff).first;
  }
  return rows;
}

inline constexpr const char* kAggregateHeader =
    "dataset,preset,rate_or_constant_or_lambda,seed_count,acc_mean,acc_std,tpr_mean,tpr_std,fpr_mean,fpr_std,"
    "fdr_mean,fdr_std,eff_rate_mean";

inline void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << kAggregateHeader << "\n";
  os.precision(10);
  for (const auto& r : rows)
    os << r.dataset << ',' << r.preset << ',' << r.x << ',' << r.seed_count << ',' << r.acc_mean << ',' << r.acc_std
       << ',' << r.tpr_mean << ',' << r.tpr_std << ',' << r.fpr_mean << ',' << r.fpr_std << ',' << r.fdr_mean << ','
       << r.fdr_std << ',' << r.eff_rate_mean << "\n";
}

/// One row per run, failures included with their error message.
inline void write_runs_csv(std::ostream& os, const std::vector<CellResult>& results, const std::string& dataset) {
  os << "dataset,preset,rate_or_constant_or_lambda,seed,status,accuracy,accuracy_per_mask,tpr,fpr,fdr,eff_rate,"
        "wall_clock_seconds,error\n";
  os.precision(10);
  for (const auto& r : results) {
    std::string err = r.error;
    for (auto& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    os << dataset << ',' << r.cell.preset << ',' << r.cell.x << ',' << r.cell.seed << ',' << (r.ok ? "ok" : "failed")
       << ',' << r.metrics.accuracy << ',' << r.metrics.accuracy_per_mask << ',' << r.metrics.tpr << ','
       << r.metrics.fpr << ',' << r.metrics.fdr << ',' << r.metrics.eff_rate << ',' << r.record.wall_clock_seconds
       << ',' << err << "\n";
  }
}

}  // namespace lex::eval
