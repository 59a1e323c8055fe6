#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lex/dataset.hpp"
#include "lex/diffnet/mlp.hpp"
#include "lex/gradest.hpp"
#include "lex/imputers/imputer.hpp"

namespace lex::model {

using diffnet::MlpSpec;
using diffnet::ParamStore;
using diffnet::Shape;
using diffnet::Tensor;
using diffnet::Var;

enum class Regime { free_insitu, fixed_theta_insitu, self_posthoc, surrogate_posthoc };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::free_insitu: return "free_insitu";
    case Regime::fixed_theta_insitu: return "fixed_theta_insitu";
    case Regime::self_posthoc: return "self_posthoc";
    case Regime::surrogate_posthoc: return "surrogate_posthoc";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  for (Regime r : {Regime::free_insitu, Regime::fixed_theta_insitu, Regime::self_posthoc, Regime::surrogate_posthoc})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown regime '" + s + "'");
}

/// Whether the predictor receives optimizer updates in the main stage.
inline bool theta_trainable(Regime r) { return r == Regime::free_insitu || r == Regime::surrogate_posthoc; }

/// How the predictor is prepared before the main stage.
///   random     - fresh initialization
///   surrogate  - trained on Bernoulli(0.5) masks with constant imputation
///   full_data  - trained as an ordinary classifier on unmasked inputs
enum class PredictorInit { random, surrogate, full_data };

inline std::string to_string(PredictorInit p) {
  switch (p) {
    case PredictorInit::random: return "random";
    case PredictorInit::surrogate: return "surrogate";
    case PredictorInit::full_data: return "full_data";
  }
  return "?";
}

inline PredictorInit predictor_init_from_string(const std::string& s) {
  for (PredictorInit p : {PredictorInit::random, PredictorInit::surrogate, PredictorInit::full_data})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown predictor init '" + s + "'");
}

enum class Penalty { none, l1 };

inline std::string to_string(Penalty p) { return p == Penalty::l1 ? "l1" : "none"; }
inline Penalty penalty_from_string(const std::string& s) {
  if (s == "l1") return Penalty::l1;
  if (s == "none") return Penalty::none;
  throw ConfigError("unknown penalty '" + s + "'");
}

/// REBAR relaxation choice; `automatic` feeds continuous masks when the imputed
/// fill does not depend on the mask, straight-through masks otherwise.
enum class RelaxationChoice { automatic, continuous, straight_through };

/// Whether the imputed value of a coordinate is independent of the mask.
inline bool fill_ignores_mask(impute::Kind k) { return k == impute::Kind::constant || k == impute::Kind::gaussian_std; }

struct LexConfig {
  MlpSpec predictor{11, {200, 200, 200}, 2, diffnet::Activation::relu, diffnet::Activation::softmax};
  MlpSpec selector{11, {200, 200}, 11, diffnet::Activation::relu, diffnet::Activation::sigmoid};
  impute::Spec imputer;
  mask::Mode mode = mask::Mode::subset;
  std::size_t k = 5;
  Penalty penalty = Penalty::none;
  double lambda = 0.0;
  double tau = 0.5;
  gradest::Kind estimator = gradest::Kind::rebar;
  double eta = 1.0;
  gradest::Baseline baseline = gradest::Baseline::none;
  RelaxationChoice relaxation = RelaxationChoice::automatic;
  std::size_t L = 10;
  std::size_t K_imp = 1;
  Regime regime = Regime::free_insitu;
  PredictorInit predictor_init = PredictorInit::random;
  /// Selector bias initialization (added to the last-layer bias); large positive
  /// values start from "select everything".
  double selector_bias_init = 0.0;

  std::size_t dim() const { return predictor.input_dim; }
  std::size_t classes() const { return predictor.output_dim; }

  void validate() const {
    predictor.validate();
    selector.validate();
    if (selector.input_dim != predictor.input_dim || selector.output_dim != predictor.input_dim)
      throw ConfigError("selector must map D inputs to D logits with D the predictor input width");
    if (predictor.output_dim < 2) throw ConfigError("predictor needs at least two classes");
    if (L == 0) throw ConfigError("L (mask importance samples) must be at least 1");
    if (K_imp == 0) throw ConfigError("K_imp (imputation importance samples) must be at least 1");
    if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
    if (!(tau > 0)) throw ConfigError("tau must be positive");
    if (mode == mask::Mode::subset) {
      mask::check_k(k, dim());
      if (penalty == Penalty::l1) throw ConfigError("L1 penalty is defined for Bernoulli selection only");
    }
    if ((regime == Regime::fixed_theta_insitu || regime == Regime::self_posthoc) && predictor_init == PredictorInit::random)
      throw ConfigError("regime " + to_string(regime) + " needs a frozen trained predictor (predictor_init surrogate or full_data)");
    if (predictor_init == PredictorInit::surrogate && imputer.kind != impute::Kind::constant)
      throw ConfigError("surrogate predictor requires constant imputation");
  }

  gradest::Selection selection() const { return {mode, k, tau}; }

  gradest::Config estimator_config() const {
    gradest::Config c;
    c.kind = estimator;
    c.tau = tau;
    c.eta = eta;
    c.baseline = baseline;
    switch (relaxation) {
      case RelaxationChoice::continuous: c.relaxation = gradest::Relaxation::continuous; break;
      case RelaxationChoice::straight_through: c.relaxation = gradest::Relaxation::straight_through; break;
      case RelaxationChoice::automatic:
        c.relaxation = fill_ignores_mask(imputer.kind) ? gradest::Relaxation::continuous : gradest::Relaxation::straight_through;
        break;
    }
    return c;
  }

  bool operator==(const LexConfig&) const = default;
};

/// Parameters of a LEX model: predictor theta and selector gamma.
template <typename T>
struct LexModel {
  LexConfig cfg;
  ParamStore<T> theta;
  ParamStore<T> gamma;
};

template <typename T>
LexModel<T> init_model(const LexConfig& cfg, Rng& rng) {
  cfg.validate();
  LexModel<T> m{cfg, diffnet::init_mlp<T>(cfg.predictor, rng), diffnet::init_mlp<T>(cfg.selector, rng)};
  if (cfg.selector_bias_init != 0.0) {
    auto& b = m.gamma.get(diffnet::bias_name(cfg.selector.layer_count() - 1)).mutable_value();
    for (auto& v : b.storage()) v += static_cast<T>(cfg.selector_bias_init);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Network pieces

template <typename T>
Tensor<T> rows_tensor(const double* X, std::size_t n, std::size_t dim) {
  Tensor<T> t(Shape{n, dim});
  for (std::size_t i = 0; i < n * dim; ++i) t[i] = static_cast<T>(X[i]);
  return t;
}

/// Selector logits [B x D] (pre-sigmoid scores).
template <typename T>
Var<T> selector_logits(const LexConfig& cfg, const ParamStore<T>& gamma, const Var<T>& x, bool track = true) {
  return diffnet::mlp_preactivation(cfg.selector, gamma, x, track);
}

template <typename T>
Tensor<T> selector_logits(const LexConfig& cfg, const ParamStore<T>& gamma, const Tensor<T>& x) {
  return selector_logits(cfg, gamma, diffnet::constant(x), false).value();
}

/// Log class probabilities log Phi(. | f_theta(x)) [R x C].
template <typename T>
Var<T> predictor_logprobs(const LexConfig& cfg, const ParamStore<T>& theta, const Var<T>& x, bool track = true) {
  return diffnet::log_softmax_rows(diffnet::mlp_preactivation(cfg.predictor, theta, x, track));
}

template <typename T>
Tensor<T> predictor_probs(const LexConfig& cfg, const ParamStore<T>& theta, const Tensor<T>& x) {
  return diffnet::softmax_rows(diffnet::mlp_preactivation(cfg.predictor, theta, diffnet::constant(x), false)).value();
}

/// Fill values for rows of X under hard masks Z (both [R x D]); `copies` draws
/// per row, stacked consecutively -> [R*copies x D]. Unobserved coordinates hold
/// the imputation given the observed ones. Observed coordinates hold what would
/// be imputed with nothing observed (never x itself), so a relaxed mask has a
/// non-zero direction x - fill everywhere; hard masks never read those entries.
template <typename T>
Tensor<T> draw_fill(const impute::Imputer& imp, const Tensor<T>& X, const Tensor<T>& Z, std::size_t copies, Rng& rng) {
  const std::size_t R = X.rows(), D = X.cols();
  Tensor<T> out(Shape{R * copies, D});
  std::vector<double> x(D), o(D), o_free(D);
  std::vector<std::uint8_t> z(D), none(D, 0);
  const bool one_pass = fill_ignores_mask(imp.kind());
  for (std::size_t r = 0; r < R; ++r) {
    bool any_observed = false;
    for (std::size_t d = 0; d < D; ++d) {
      x[d] = static_cast<double>(X(r, d));
      z[d] = Z(r, d) > T(0.5) ? 1 : 0;
      any_observed = any_observed || z[d];
    }
    for (std::size_t c = 0; c < copies; ++c) {
      if (one_pass) {
        imp.impute(x.data(), none.data(), o.data(), rng);
      } else {
        imp.impute(x.data(), z.data(), o.data(), rng);
        if (any_observed) {
          imp.impute(x.data(), none.data(), o_free.data(), rng);
          for (std::size_t d = 0; d < D; ++d)
            if (z[d]) o[d] = o_free[d];
        }
      }
      for (std::size_t d = 0; d < D; ++d) out(r * copies + c, d) = static_cast<T>(o[d]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masked prediction and the predictive mixture

/// (1/K) sum_k Phi(y | f_theta(x~_k)), x~_k ~ p(.|x, z). Deterministic imputers use one draw.
template <typename T>
std::vector<double> masked_predictive(const LexConfig& cfg, const ParamStore<T>& theta, const impute::Imputer& imp,
                                      std::span<const double> x, std::span<const std::uint8_t> z, std::size_t K_imp,
                                      Rng& rng) {
  if (!imp.fitted()) throw StateError("masked_predictive: imputer is not fitted");
  const std::size_t D = x.size();
  for (auto v : z)
    if (v > 1) throw ContractError("masked_predictive: mask must be binary");
  const std::size_t K = imp.stochastic() ? std::max<std::size_t>(K_imp, 1) : 1;
  Tensor<T> xt(Shape{K, D});
  std::vector<double> o(D);
  for (std::size_t k = 0; k < K; ++k) {
    imp.impute(x.data(), z.data(), o.data(), rng);
    for (std::size_t d = 0; d < D; ++d) xt(k, d) = static_cast<T>(o[d]);
  }
  auto p = predictor_probs(cfg, theta, xt);
  std::vector<double> out(p.cols(), 0.0);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += static_cast<double>(p(k, c)) / static_cast<double>(K);
  return out;
}

inline constexpr std::size_t kMaxEnumerationDim = 12;

/// All masks with their probability under the selector at `logits` (exact).
inline std::vector<std::pair<std::vector<std::uint8_t>, double>> enumerate_masks(std::span<const double> logits,
                                                                                 mask::Mode mode, std::size_t k) {
  const std::size_t D = logits.size();
  if (D > kMaxEnumerationDim)
    throw CapabilityError("exact enumeration supports D <= " + std::to_string(kMaxEnumerationDim) + ", got " +
                          std::to_string(D));
  std::vector<std::pair<std::vector<std::uint8_t>, double>> out;
  for (std::size_t code = 0; code < (std::size_t{1} << D); ++code) {
    std::vector<std::uint8_t> z(D);
    std::vector<std::size_t> set;
    for (std::size_t d = 0; d < D; ++d)
      if ((z[d] = code >> d & 1)) set.push_back(d);
    double p;
    if (mode == mask::Mode::bernoulli) {
      p = std::exp(mask::bernoulli_logprob(logits, z));
    } else {
      if (set.size() != k) continue;
      p = mask::subset_set_probability(logits, set);
    }
    out.emplace_back(std::move(z), p);
  }
  return out;
}

/// sum_z p_theta(y | x, z) p_gamma(z | x): exact by enumeration (D <= 12), or a
/// Monte Carlo average over `L` mask draws.
template <typename T>
std::vector<double> predictive_mixture(const LexModel<T>& m, const impute::Imputer& imp, std::span<const double> x,
                                       bool exact, std::size_t L, Rng& rng) {
  const auto& cfg = m.cfg;
  const std::size_t D = x.size();
  auto lt = selector_logits(cfg, m.gamma, rows_tensor<T>(x.data(), 1, D));
  std::vector<double> logits(lt.storage().begin(), lt.storage().end());
  std::vector<double> out(cfg.classes(), 0.0);
  if (exact) {
    for (const auto& [z, p] : enumerate_masks(logits, cfg.mode, cfg.k)) {
      if (p == 0.0) continue;
      auto q = masked_predictive(cfg, m.theta, imp, x, z, cfg.K_imp, rng);
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += p * q[c];
    }
    return out;
  }
  for (std::size_t l = 0; l < L; ++l) {
    auto s = cfg.mode == mask::Mode::bernoulli ? mask::bernoulli_sample(logits, rng, cfg.tau)
                                               : mask::subset_sample(logits, cfg.k, rng, cfg.tau);
    auto q = masked_predictive(cfg, m.theta, imp, x, s.hard, cfg.K_imp, rng);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += q[c] / static_cast<double>(L);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regularizer

/// lambda * sum_d sigmoid(logit_d), averaged over rows (closed-form E||Z||); zero without penalty.
template <typename T>
Var<T> regularizer(Penalty penalty, mask::Mode mode, const Var<T>& logits, double lambda) {
  if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
  if (penalty == Penalty::none || lambda == 0.0) return diffnet::constant(Tensor<T>::scalar(T(0)));
  if (mode == mask::Mode::subset) throw ConfigError("L1 penalty is defined for Bernoulli selection only");
  return diffnet::scale(diffnet::sum(diffnet::sigmoid(logits)), static_cast<T>(lambda / static_cast<double>(logits.rows())));
}

// ---------------------------------------------------------------------------
// Importance-weighted objective

inline constexpr double kLogFloor = -30.0;

/// RNG streams used by one objective evaluation.
struct Streams {
  Rng* mask;
  Rng* impute;
};

template <typename T>
struct IwaeResult {
  Var<T> loss;                  // scalar to minimize: -(bound + estimator surrogate)/B + penalty
  double bound_mean = 0.0;      // mean per-example bound (value only)
  double penalty = 0.0;
  std::vector<double> bound;    // per example [B]
  Tensor<T> logits;             // selector logits [B x D]
  gradest::Estimate<T> estimate;
};

/// Per example: log (1/(L K)) sum_{l,k} p_theta(y | x~_{l,k}), masks from the selector
/// and imputations from `imp`. Gradients reach gamma through the configured estimator
/// and theta through the hard-mask pass (when `train_theta`).
template <typename T>
IwaeResult<T> iwae_objective(const LexModel<T>& m, const impute::Imputer& imp, const Tensor<T>& X,
                             const std::vector<int>& targets, Streams rng, bool train_theta, bool train_gamma,
                             gradest::BaselineState* baseline = nullptr) {
  const auto& cfg = m.cfg;
  const std::size_t B = X.rows(), D = X.cols(), L = cfg.L;
  const std::size_t K = imp.stochastic() ? cfg.K_imp : 1;
  if (targets.size() != B) throw DimensionError("iwae_objective: one target per row required");
  if (D != cfg.dim()) throw DimensionError("iwae_objective: input width differs from the model");

  Var<T> logits = selector_logits(cfg, m.gamma, diffnet::constant(X), train_gamma);
  Var<T> logits_rep = diffnet::repeat_rows(logits, L);          // [B L x D]
  Tensor<T> X_rep = diffnet::repeat_rows(diffnet::constant(X), L * K).value();  // [B L K x D]
  std::vector<std::size_t> labels(B * L * K);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = targets[i / (L * K)];
    if (y < 0 || static_cast<std::size_t>(y) >= cfg.classes()) throw ContractError("target label out of range");
    labels[i] = static_cast<std::size_t>(y);
  }

  Tensor<T> fill;  // drawn once per step from the hard masks, reused by relaxed passes
  const Tensor<T> X_L = diffnet::repeat_rows(diffnet::constant(X), L).value();
  gradest::Objective<T> f = [&](const Var<T>& mask, gradest::Pass pass) {
    if (fill.empty()) fill = draw_fill(imp, X_L, mask.value(), K, *rng.impute);
    Var<T> mk = K > 1 ? diffnet::repeat_rows(mask, K) : mask;
    Var<T> xt = diffnet::blend(mk, X_rep, fill);
    const bool track_theta = train_theta && pass == gradest::Pass::hard;
    Var<T> lp = diffnet::gather_cols(predictor_logprobs(cfg, m.theta, xt, track_theta), labels);
    lp = diffnet::clamp_min(lp, static_cast<T>(kLogFloor));
    return diffnet::logmeanexp_groups(lp, L * K);  // [B]
  };

  IwaeResult<T> r;
  r.logits = logits.value();
  r.estimate = gradest::estimate(cfg.estimator_config(), cfg.selection(), logits_rep, L, f, *rng.mask, baseline);
  const auto& obj = r.estimate.objective.value();
  r.bound.resize(B);
  for (std::size_t i = 0; i < B; ++i) {
    r.bound[i] = static_cast<double>(obj[i]);
    if (!std::isfinite(r.bound[i])) throw NumericalError("non-finite importance-weighted bound at batch row " + std::to_string(i));
    r.bound_mean += r.bound[i] / static_cast<double>(B);
  }
  Var<T> pen = regularizer(cfg.penalty, cfg.mode, logits, cfg.lambda);
  r.penalty = static_cast<double>(pen.value()[0]);
  r.loss = diffnet::add(diffnet::scale(r.estimate.total(), static_cast<T>(-1.0 / static_cast<double>(B))), pen);
  return r;
}

/// Per-example bound values only (no gradients), for evaluation.
template <typename T>
std::vector<double> iwae_bound(const LexModel<T>& m, const impute::Imputer& imp, const Tensor<T>& X,
                               const std::vector<int>& targets, std::size_t L, std::size_t K_imp, Rng& rng) {
  LexModel<T> view{m.cfg, m.theta, m.gamma};
  view.cfg.L = L;
  view.cfg.K_imp = K_imp;
  view.cfg.estimator = gradest::Kind::reinforce;
  view.cfg.baseline = gradest::Baseline::none;
  Rng imp_rng = make_stream(rng(), "iwae/impute");
  return iwae_objective(view, imp, X, targets, {&rng, &imp_rng}, false, false).bound;
}

/// log sum_z p_gamma(z|x) p_theta(y|x,z) by enumeration, inner probabilities floored like the bound.
template <typename T>
double exact_log_likelihood(const LexModel<T>& m, const impute::Imputer& imp, std::span<const double> x, int y, Rng& rng) {
  if (imp.stochastic()) throw CapabilityError("exact likelihood needs a deterministic imputer");
  auto p = predictive_mixture(m, imp, x, true, 0, rng);
  return std::log(std::max(p[static_cast<std::size_t>(y)], std::exp(kLogFloor)));
}

// ---------------------------------------------------------------------------
// Classifiers providing post-hoc targets

/// A black-box probabilistic classifier p_m(y | x).
class ProbabilisticClassifier {
 public:
  virtual ~ProbabilisticClassifier() = default;
  virtual std::size_t classes() const = 0;
  virtual std::vector<double> predict_proba(std::span<const double> x) const = 0;
};

/// An MLP classifier with frozen parameters.
template <typename T>
class MlpClassifier final : public ProbabilisticClassifier {
 public:
  MlpClassifier(MlpSpec spec, ParamStore<T> params) : spec_(std::move(spec)), params_(std::move(params)) {}
  std::size_t classes() const override { return spec_.output_dim; }
  std::vector<double> predict_proba(std::span<const double> x) const override {
    auto p = diffnet::softmax_rows(
        diffnet::mlp_preactivation(spec_, params_, diffnet::constant(rows_tensor<T>(x.data(), 1, x.size())), false));
    return {p.value().storage().begin(), p.value().storage().end()};
  }
  const ParamStore<T>& params() const { return params_; }

 private:
  MlpSpec spec_;
  ParamStore<T> params_;
};

/// Frozen components a regime may need.
template <typename T>
struct RegimeContext {
  std::optional<ParamStore<T>> frozen_theta;
  std::shared_ptr<const ProbabilisticClassifier> p_m;
};

inline int sample_label(const std::vector<double>& p, Rng& rng) {
  return static_cast<int>(impute::sample_index(p, rng));
}

/// Training targets for a batch: data labels (in-situ), labels drawn from the frozen
/// predictor on full inputs (self post-hoc) or from p_m (surrogate post-hoc).
template <typename T>
std::vector<int> regime_targets(const LexConfig& cfg, const RegimeContext<T>& ctx, const Tensor<T>& X,
                                const std::vector<int>& labels, Rng& rng) {
  switch (cfg.regime) {
    case Regime::free_insitu:
    case Regime::fixed_theta_insitu: return labels;
    case Regime::self_posthoc: {
      if (!ctx.frozen_theta) throw ConfigError("self_posthoc needs a frozen predictor");
      auto p = predictor_probs(cfg, *ctx.frozen_theta, X);
      std::vector<int> out(X.rows());
      std::vector<double> row(p.cols());
      for (std::size_t i = 0; i < X.rows(); ++i) {
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = static_cast<double>(p(i, c));
        out[i] = sample_label(row, rng);
      }
      return out;
    }
    case Regime::surrogate_posthoc: {
      if (!ctx.p_m) throw ConfigError("surrogate_posthoc needs an external model p_m");
      std::vector<int> out(X.rows());
      std::vector<double> x(X.cols());
      for (std::size_t i = 0; i < X.rows(); ++i) {
        for (std::size_t d = 0; d < x.size(); ++d) x[d] = static_cast<double>(X(i, d));
        out[i] = sample_label(ctx.p_m->predict_proba(x), rng);
      }
      return out;
    }
  }
  throw ConfigError("unhandled regime");
}

}  // namespace lex::model
