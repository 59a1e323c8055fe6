#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lex/config.hpp"
#include "lex/diffnet/checkpoint.hpp"
#include "lex/lexmodel.hpp"

#ifndef LEX_VERSION
#define LEX_VERSION "0.1.0"
#endif
#ifndef LEX_GIT_REV
#define LEX_GIT_REV "unknown"
#endif

namespace lex::train {

namespace fs = std::filesystem;
using diffnet::ParamStore;
using diffnet::Shape;
using diffnet::Tensor;
using model::LexModel;

inline std::string version_stamp() { return std::string("lex ") + LEX_VERSION + " (" + LEX_GIT_REV + ")"; }

/// A run stopped on a non-finite loss or gradient. Parameters at the abort are
/// the last good ones (no update was applied); `dump` names the diagnostics file.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, std::string dump) : NumericalError(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

// ---------------------------------------------------------------------------
// Run record

struct StageTrace {
  std::string name;
  std::vector<double> loss;  // mean per epoch
  bool operator==(const StageTrace&) const = default;
};

struct Checksums {
  std::uint64_t theta_init = 0;      // after random initialization
  std::uint64_t theta_stage1 = 0;    // entering the main stage
  std::uint64_t theta_final = 0;
  std::uint64_t gamma_final = 0;
  std::uint64_t p_m_stage1 = 0;      // black-box classifier (surrogate post-hoc), 0 if none
  std::uint64_t p_m_final = 0;
  bool operator==(const Checksums&) const = default;
};

struct RunRecord {
  std::string version = version_stamp();
  RunConfig config;
  std::string dataset;
  std::size_t n_train = 0;
  std::string status = "ok";  // ok | aborted
  std::string diagnostics;
  std::vector<StageTrace> stages;
  std::vector<double> loss;            // per epoch: mean of -bound + penalty (the minimized objective)
  std::vector<double> bound;           // mean importance-weighted bound
  std::vector<double> penalty;
  std::vector<double> expected_rate;   // mean E||Z|| / D over the epoch's batches
  std::vector<double> train_accuracy;  // monitor subsample, one mask draw per row
  Checksums checksums;
  json metrics = json::object();
  double wall_clock_seconds = 0.0;

  /// Equality of everything a seed determines (wall-clock excluded).
  bool same_outcome(const RunRecord& o) const {
    auto strip = [](const RunRecord& r) {
      auto j = r.to_json();
      j.erase("wall_clock_seconds");
      return j;
    };
    return strip(*this) == strip(o);
  }

  json to_json() const {
    json j;
    j["format"] = "lex-run";
    j["version"] = version;
    j["config"] = config::to_json(config);
    j["dataset"] = dataset;
    j["n_train"] = n_train;
    j["status"] = status;
    j["diagnostics"] = diagnostics;
    j["stages"] = json::array();
    for (const auto& s : stages) j["stages"].push_back({{"name", s.name}, {"loss", s.loss}});
    j["epochs"] = {{"loss", loss},
                   {"bound", bound},
                   {"penalty", penalty},
                   {"expected_rate", expected_rate},
                   {"train_accuracy", train_accuracy}};
    auto hex = [](std::uint64_t v) {
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
      return std::string(buf);
    };
    j["checksums"] = {{"theta_init", hex(checksums.theta_init)},   {"theta_stage1", hex(checksums.theta_stage1)},
                      {"theta_final", hex(checksums.theta_final)}, {"gamma_final", hex(checksums.gamma_final)},
                      {"p_m_stage1", hex(checksums.p_m_stage1)},   {"p_m_final", hex(checksums.p_m_final)}};
    j["metrics"] = metrics;
    j["wall_clock_seconds"] = wall_clock_seconds;
    return j;
  }

  static RunRecord from_json(const json& j) {
    if (j.value("format", "") != "lex-run") throw ParseError("not a run record (format field)");
    RunRecord r;
    try {
      r.version = j.at("version").get<std::string>();
      r.config = config::from_json(j.at("config"));
      r.dataset = j.at("dataset").get<std::string>();
      r.n_train = j.at("n_train").get<std::size_t>();
      r.status = j.at("status").get<std::string>();
      r.diagnostics = j.at("diagnostics").get<std::string>();
      for (const auto& s : j.at("stages")) r.stages.push_back({s.at("name"), s.at("loss").get<std::vector<double>>()});
      const auto& e = j.at("epochs");
      r.loss = e.at("loss").get<std::vector<double>>();
      r.bound = e.at("bound").get<std::vector<double>>();
      r.penalty = e.at("penalty").get<std::vector<double>>();
      r.expected_rate = e.at("expected_rate").get<std::vector<double>>();
      r.train_accuracy = e.at("train_accuracy").get<std::vector<double>>();
      auto unhex = [&](const char* k) { return std::stoull(j.at("checksums").at(k).get<std::string>(), nullptr, 16); };
      r.checksums = {unhex("theta_init"), unhex("theta_stage1"), unhex("theta_final"),
                     unhex("gamma_final"), unhex("p_m_stage1"),  unhex("p_m_final")};
      r.metrics = j.at("metrics");
      r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    } catch (const json::exception& ex) {
      throw ParseError(std::string("malformed run record: ") + ex.what());
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// Data access

/// Row-major copy of the rows used for training: the `train` split, or every
/// row when the file carries no split tags other than val/test.
struct TrainRows {
  std::vector<double> X;
  std::vector<int> y;
  std::size_t dim = 0;
  std::size_t size() const { return y.size(); }
};

inline TrainRows training_rows(const Dataset& ds) {
  TrainRows t{{}, {}, ds.dim};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.split[i] != Split::train) continue;
    t.X.insert(t.X.end(), ds.row(i), ds.row(i) + ds.dim);
    t.y.push_back(ds.y[i]);
  }
  return t;
}

template <typename T>
Tensor<T> gather_batch(const TrainRows& d, const std::vector<std::size_t>& perm, std::size_t begin, std::size_t end,
                       std::vector<int>& labels) {
  Tensor<T> X(Shape{end - begin, d.dim});
  labels.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t r = perm[i];
    for (std::size_t j = 0; j < d.dim; ++j) X(i - begin, j) = static_cast<T>(d.X[r * d.dim + j]);
    labels[i - begin] = d.y[r];
  }
  return X;
}

/// Batches per epoch: the final partial batch is kept unless it is empty.
inline std::size_t batch_count(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

// ---------------------------------------------------------------------------
// Classifier pre-training

/// Inputs seen by a classifier during pre-training.
///   full       - unmasked rows
///   random_half - iid Bernoulli(0.5) masks, unobserved coordinates set to `constant`
enum class Masking { full, random_half };

struct ClassifierOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 100;
  diffnet::AdamOptions adam{};
  Masking masking = Masking::full;
  double constant = 0.0;
};

/// Mean cross-entropy of `params` on `d` (optionally under one fixed draw of random masks).
template <typename T>
double classifier_loss(const diffnet::MlpSpec& spec, const ParamStore<T>& params, const TrainRows& d,
                       Masking masking, double constant, Rng& rng) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<int> labels;
  Tensor<T> X = gather_batch<T>(d, idx, 0, d.size(), labels);
  if (masking == Masking::random_half)
    for (auto& v : X.storage())
      if (rng() & 1) v = static_cast<T>(constant);
  auto lp = diffnet::log_softmax_rows(diffnet::mlp_preactivation(spec, params, diffnet::constant(X), false)).value();
  double s = 0;
  for (std::size_t i = 0; i < d.size(); ++i) s -= static_cast<double>(lp(i, static_cast<std::size_t>(labels[i])));
  return s / static_cast<double>(d.size());
}

/// Minibatch Adam on cross-entropy; returns the mean loss of each epoch.
template <typename T>
std::vector<double> fit_classifier(const diffnet::MlpSpec& spec, ParamStore<T>& params, const TrainRows& d,
                                   const ClassifierOptions& opt, Rng& rng) {
  if (d.size() == 0) throw ContractError("classifier training needs at least one row");
  std::vector<double> trace;
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<int> labels;
  const std::size_t batch = std::min(opt.batch_size, d.size());
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double total = 0;
    for (std::size_t b = 0; b < batch_count(d.size(), batch); ++b) {
      const std::size_t lo = b * batch, hi = std::min(lo + batch, d.size());
      Tensor<T> X = gather_batch<T>(d, perm, lo, hi, labels);
      if (opt.masking == Masking::random_half)
        for (auto& v : X.storage())
          if (rng() & 1) v = static_cast<T>(opt.constant);
      std::vector<std::size_t> cls(labels.begin(), labels.end());
      auto lp = diffnet::gather_cols(
          diffnet::log_softmax_rows(diffnet::mlp_preactivation(spec, params, diffnet::constant(X))), cls);
      auto loss = diffnet::scale(diffnet::sum(lp), static_cast<T>(-1.0 / static_cast<double>(hi - lo)));
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) throw NumericalError("non-finite classifier loss in pre-training epoch " + std::to_string(e));
      params.zero_grad();
      diffnet::backward(loss);
      diffnet::adam_step(params, opt.adam);
      total += lv * static_cast<double>(hi - lo);
    }
    trace.push_back(total / static_cast<double>(d.size()));
  }
  return trace;
}

/// Surrogate of the restricted predictor: trained on random Bernoulli(0.5) masks
/// with constant imputation.
template <typename T>
std::vector<double> restricted_predictor_train(const diffnet::MlpSpec& spec, ParamStore<T>& theta, const TrainRows& d,
                                               double constant, ClassifierOptions opt, Rng& rng) {
  opt.masking = Masking::random_half;
  opt.constant = constant;
  return fit_classifier(spec, theta, d, opt, rng);
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
void save_checkpoint(const std::string& path, const LexModel<T>& m, const model::RegimeContext<T>& ctx) {
  diffnet::NamedTensors t;
  diffnet::append_store(t, "theta/", m.theta);
  diffnet::append_store(t, "gamma/", m.gamma);
  if (auto p = std::dynamic_pointer_cast<const model::MlpClassifier<T>>(ctx.p_m)) diffnet::append_store(t, "p_m/", p->params());
  diffnet::save_tensors(path, t);
}

template <typename T>
LexModel<T> load_checkpoint(const std::string& path, const model::LexConfig& cfg) {
  Rng rng(0);
  auto m = model::init_model<T>(cfg, rng);
  auto t = diffnet::load_tensors(path);
  diffnet::restore_store(t, "theta/", m.theta);
  diffnet::restore_store(t, "gamma/", m.gamma);
  return m;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  /// Output directory for checkpoints and diagnostics; empty keeps everything in memory.
  std::string out_dir;
  /// Rows used for the per-epoch training-accuracy monitor.
  std::size_t monitor_rows = 500;
  std::function<void(std::size_t epoch, const RunRecord&)> on_epoch;
};

template <typename T>
struct TrainOutcome {
  RunRecord record;
  LexModel<T> model;
  model::RegimeContext<T> ctx;
};

namespace detail {

template <typename T>
double monitor_accuracy(const LexModel<T>& m, const impute::Imputer& imp, const TrainRows& d, std::size_t rows,
                        Rng& rng) {
  const std::size_t n = std::min(rows, d.size());
  if (n == 0) return 0.0;
  const auto& cfg = m.cfg;
  Tensor<T> X(Shape{n, d.dim});
  for (std::size_t i = 0; i < n * d.dim; ++i) X[i] = static_cast<T>(d.X[i]);
  auto logits = model::selector_logits(cfg, m.gamma, X);
  auto s = cfg.mode == mask::Mode::bernoulli ? mask::sample_bernoulli(logits, rng, cfg.tau)
                                             : mask::sample_subset(logits, cfg.k, rng);
  auto fill = model::draw_fill(imp, X, s.hard, 1, rng);
  Tensor<T> xt(X.shape());
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = s.hard[i] * X[i] + (T(1) - s.hard[i]) * fill[i];
  auto p = model::predictor_probs(cfg, m.theta, xt);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.cols(); ++c)
      if (p(i, c) > p(i, best)) best = c;
    hit += static_cast<int>(best) == d.y[i];
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

inline bool all_finite_grads(const auto& store) {
  for (const auto& e : store.entries())
    for (auto v : e.var.grad().storage())
      if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace detail

/// Trains a LEX model on the `train` rows of `ds` with fitted imputer `imp`.
/// Streams split from the seed: init, pretrain, shuffle, mask, impute, targets, monitor.
template <typename T = float>
TrainOutcome<T> train(const RunConfig& rc, const Dataset& ds, const impute::Imputer& imp, TrainOptions opt = {},
                      model::RegimeContext<T> ctx = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = rc.lex;
  const auto& tc = rc.train;
  cfg.validate();
  if (!imp.fitted()) throw StateError("train: imputer is not fitted");
  if (ds.dim != cfg.dim())
    throw DimensionError("train: data has " + std::to_string(ds.dim) + " features, model expects " + std::to_string(cfg.dim()));
  if (imp.dim() != cfg.dim()) throw DimensionError("train: imputer width differs from the model");
  const TrainRows data = training_rows(ds);
  tc.validate(data.size());
  if (data.size() == 0) throw ContractError("train: no rows in the train split");

  Rng init_rng = make_stream(tc.seed, "train/init");
  Rng pre_rng = make_stream(tc.seed, "train/pretrain");
  Rng shuffle_rng = make_stream(tc.seed, "train/shuffle");
  Rng mask_rng = make_stream(tc.seed, "train/mask");
  Rng impute_rng = make_stream(tc.seed, "train/impute");
  Rng target_rng = make_stream(tc.seed, "train/targets");
  Rng monitor_rng = make_stream(tc.seed, "train/monitor");

  TrainOutcome<T> out{RunRecord{}, model::init_model<T>(cfg, init_rng), std::move(ctx)};
  auto& rec = out.record;
  auto& m = out.model;
  rec.config = rc;
  rec.dataset = ds.name;
  rec.n_train = data.size();
  rec.checksums.theta_init = m.theta.checksum();

  ClassifierOptions pre{tc.pretrain_epochs, tc.batch_size, tc.adam(), Masking::full, 0.0};
  switch (cfg.predictor_init) {
    case model::PredictorInit::random: break;
    case model::PredictorInit::surrogate:
      rec.stages.push_back({"surrogate", restricted_predictor_train(cfg.predictor, m.theta, data, cfg.imputer.constant, pre, pre_rng)});
      break;
    case model::PredictorInit::full_data:
      rec.stages.push_back({"full_data", fit_classifier(cfg.predictor, m.theta, data, pre, pre_rng)});
      break;
  }
  // reset optimizer state so the main stage starts fresh
  m.theta = [&] {
    ParamStore<T> fresh;
    for (const auto& e : m.theta.entries()) fresh.add(e.name, e.var.value());
    return fresh;
  }();
  if (cfg.regime == model::Regime::surrogate_posthoc && !out.ctx.p_m) {
    auto pm = diffnet::init_mlp<T>(cfg.predictor, pre_rng);
    rec.stages.push_back({"black_box", fit_classifier(cfg.predictor, pm, data, pre, pre_rng)});
    out.ctx.p_m = std::make_shared<model::MlpClassifier<T>>(cfg.predictor, std::move(pm));
  }
  if (cfg.regime == model::Regime::self_posthoc) out.ctx.frozen_theta = m.theta;
  auto pm_checksum = [&]() -> std::uint64_t {
    auto p = std::dynamic_pointer_cast<const model::MlpClassifier<T>>(out.ctx.p_m);
    return p ? p->params().checksum() : 0;
  };
  rec.checksums.theta_stage1 = m.theta.checksum();
  rec.checksums.p_m_stage1 = pm_checksum();

  const bool train_theta = model::theta_trainable(cfg.regime);
  const std::size_t n = data.size(), B = tc.batch_size;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<int> labels;
  gradest::BaselineState baseline;
  const auto adam = tc.adam();
  if (!opt.out_dir.empty()) fs::create_directories(fs::path(opt.out_dir) / "checkpoints");

  auto abort_run = [&](const std::string& why, std::size_t epoch, std::size_t step) {
    rec.status = "aborted";
    std::string dump;
    if (!opt.out_dir.empty()) {
      const auto dir = fs::path(opt.out_dir);
      save_checkpoint((dir / "checkpoints" / "last_good.ckpt").string(), m, out.ctx);
      dump = (dir / "diagnostics.json").string();
      json d = {{"reason", why}, {"epoch", epoch}, {"step", step}, {"record", rec.to_json()}};
      std::ofstream(dump) << d.dump(2) << "\n";
    }
    rec.diagnostics = why + (dump.empty() ? "" : " (" + dump + ")");
    throw TrainingAborted(why, dump);
  };

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    double s_loss = 0, s_bound = 0, s_pen = 0, s_rate = 0;
    const std::size_t batches = batch_count(n, B);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * B, hi = std::min(lo + B, n);
      Tensor<T> X = gather_batch<T>(data, perm, lo, hi, labels);
      auto targets = model::regime_targets(cfg, out.ctx, X, labels, target_rng);
      model::IwaeResult<T> r;
      try {
        r = model::iwae_objective(m, imp, X, targets, {&mask_rng, &impute_rng}, train_theta, true, &baseline);
      } catch (const NumericalError& e) {
        abort_run(e.what(), epoch, b);
      }
      const double lv = static_cast<double>(r.loss.value()[0]);
      if (!std::isfinite(lv)) abort_run("non-finite loss", epoch, b);
      m.gamma.zero_grad();
      if (train_theta) m.theta.zero_grad();
      diffnet::backward(r.loss);
      if (!detail::all_finite_grads(m.gamma) || (train_theta && !detail::all_finite_grads(m.theta)))
        abort_run("non-finite gradient", epoch, b);
      diffnet::adam_step(m.gamma, adam);
      if (train_theta) diffnet::adam_step(m.theta, adam);

      const double w = static_cast<double>(hi - lo) / static_cast<double>(n);
      s_loss += w * (r.penalty - r.bound_mean);
      s_bound += w * r.bound_mean;
      s_pen += w * r.penalty;
      double rate = 0;
      if (cfg.mode == mask::Mode::subset) {
        rate = static_cast<double>(cfg.k) / static_cast<double>(cfg.dim());
      } else {
        for (auto v : r.logits.storage()) rate += diffnet::detail::sigmoid(static_cast<double>(v));
        rate /= static_cast<double>(r.logits.size());
      }
      s_rate += w * rate;
    }
    rec.loss.push_back(s_loss);
    rec.bound.push_back(s_bound);
    rec.penalty.push_back(s_pen);
    rec.expected_rate.push_back(s_rate);
    rec.train_accuracy.push_back(detail::monitor_accuracy(m, imp, data, opt.monitor_rows, monitor_rng));
    if (!opt.out_dir.empty() && tc.checkpoint_every && (epoch + 1) % tc.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch + 1);
      save_checkpoint((fs::path(opt.out_dir) / "checkpoints" / name).string(), m, out.ctx);
    }
    if (opt.on_epoch) opt.on_epoch(epoch, rec);
  }
  m.theta.clear_grad();
  m.gamma.clear_grad();
  rec.checksums.theta_final = m.theta.checksum();
  rec.checksums.gamma_final = m.gamma.checksum();
  rec.checksums.p_m_final = pm_checksum();
  if (!opt.out_dir.empty()) save_checkpoint((fs::path(opt.out_dir) / "checkpoints" / "final.ckpt").string(), m, out.ctx);
  rec.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Two-stage protocol: a surrogate predictor fitted on random masks with constant
/// imputation, then the selector trained against it with the predictor frozen.
template <typename T = float>
TrainOutcome<T> surrogate_pipeline(RunConfig rc, const Dataset& ds, const impute::Imputer& imp, TrainOptions opt = {}) {
  if (rc.lex.imputer.kind != impute::Kind::constant || imp.kind() != impute::Kind::constant)
    throw ConfigError("surrogate pipeline requires constant imputation");
  rc.lex.predictor_init = model::PredictorInit::surrogate;
  rc.lex.regime = model::Regime::fixed_theta_insitu;
  return train<T>(rc, ds, imp, std::move(opt));
}

}  // namespace lex::train
