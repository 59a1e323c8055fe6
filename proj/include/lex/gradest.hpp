#pragma once

#include <functional>
#include <string>

#include "lex/maskdist.hpp"

namespace lex::gradest {

using diffnet::Shape;
using diffnet::Tensor;
using diffnet::Var;

enum class Kind { reinforce, pathwise_st, rebar };

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::reinforce: return "reinforce";
    case Kind::pathwise_st: return "pathwise_st";
    case Kind::rebar: return "rebar";
  }
  return "?";
}

inline Kind kind_from_string(const std::string& s) {
  if (s == "reinforce") return Kind::reinforce;
  if (s == "pathwise_st" || s == "pathwise" || s == "gumbel_st") return Kind::pathwise_st;
  if (s == "rebar") return Kind::rebar;
  throw ConfigError("unknown estimator '" + s + "'");
}

enum class Baseline { none, moving_average };

/// How REBAR feeds relaxed masks to the objective: as continuous values, or
/// through the straight-through threshold/top-k (forward hard, backward relaxed).
enum class Relaxation { continuous, straight_through };

struct Config {
  Kind kind = Kind::rebar;
  double tau = 0.5;
  double eta = 1.0;
  Baseline baseline = Baseline::none;
  double decay = 0.99;
  Relaxation relaxation = Relaxation::continuous;

  void validate() const {
    if (!(tau > 0)) throw ConfigError("estimator.tau must be positive");
    if (!(decay >= 0 && decay < 1)) throw ConfigError("estimator.decay must lie in [0, 1)");
  }
};

struct Selection {
  mask::Mode mode = mask::Mode::bernoulli;
  std::size_t k = 1;
  double tau = 0.5;
};

/// Which evaluation the objective is asked for. Relaxed passes exist only to
/// build control variates; an objective may e.g. freeze its own parameters there.
enum class Pass { hard, relaxed, relaxed_conditional };

/// Maps a mask [R x D] to per-group values [G] (R = G * group_size) to be maximized.
template <typename T>
using Objective = std::function<Var<T>(const Var<T>& mask, Pass pass)>;

/// Running mean of the objective, updated after each use so the value applied to
/// a batch never depends on that batch's samples.
struct BaselineState {
  double value = 0.0;
  bool initialized = false;

  void update(double batch_mean, double decay) {
    value = initialized ? decay * value + (1.0 - decay) * batch_mean : batch_mean;
    initialized = true;
  }
};

template <typename T>
mask::BatchSample<T> draw(const Selection& sel, const Tensor<T>& logits, Rng& rng) {
  return sel.mode == mask::Mode::bernoulli ? mask::sample_bernoulli(logits, rng, sel.tau)
                                           : mask::sample_subset(logits, sel.k, rng);
}

template <typename T>
Var<T> log_prob(const Selection& sel, const Var<T>& logits, const mask::BatchSample<T>& s) {
  return sel.mode == mask::Mode::bernoulli ? mask::bernoulli_logprob(logits, s.hard)
                                           : mask::subset_logprob_ordered(logits, s.orders);
}

/// Relaxed sample coupled with `s` (same noise).
template <typename T>
Var<T> relaxed(const Selection& sel, const Var<T>& logits, const mask::BatchSample<T>& s, double tau) {
  if (sel.mode == mask::Mode::bernoulli) return mask::relaxed_bernoulli(logits, s.noise, tau);
  return mask::relaxed_top_k(diffnet::add_const(logits, s.noise), sel.k, tau);
}

/// Relaxed sample re-drawn conditionally on the hard outcome of `s`.
template <typename T>
Var<T> relaxed_conditional(const Selection& sel, const Var<T>& logits, const mask::BatchSample<T>& s, double tau,
                           Rng& rng) {
  if (sel.mode == mask::Mode::bernoulli) {
    Tensor<double> v(logits.shape());
    for (auto& x : v.storage()) x = uniform_open(rng);
    return mask::conditional_relaxed_bernoulli(logits, v, s.hard, tau);
  }
  Tensor<T> g(logits.shape());
  for (auto& x : g.storage()) x = static_cast<T>(standard_gumbel(rng));
  return mask::relaxed_top_k(mask::conditional_perturbed_subset(logits, s.orders, g), sel.k, tau);
}

/// Result of one estimator evaluation. `objective` is the per-group value at the
/// hard masks (carrying whatever gradients the objective itself records).
/// `surrogate` is a scalar whose logits-gradient completes the estimator; it is
/// absent for the pathwise estimator. Maximize sum(objective) + surrogate.
template <typename T>
struct Estimate {
  Var<T> objective;
  Var<T> surrogate;
  mask::BatchSample<T> sample;

  Var<T> total() const {
    Var<T> s = diffnet::sum(objective);
    return surrogate.valid() ? diffnet::add(s, surrogate) : s;
  }
};

/// (f(z) - b) * sum over the group of log p(z_l). The coefficient is held constant.
template <typename T>
Var<T> score_term(const Var<T>& logp_rows, const Tensor<T>& coeff, std::size_t group_size) {
  Var<T> logp = diffnet::sum_groups(logp_rows, group_size);
  return diffnet::sum(diffnet::mul_const(logp, coeff));
}

template <typename T>
Estimate<T> reinforce(const Selection& sel, const Var<T>& logits, mask::BatchSample<T> s, std::size_t group_size,
                      const Objective<T>& f, double baseline = 0.0) {
  Estimate<T> e;
  e.objective = f(diffnet::constant(s.hard), Pass::hard);
  Tensor<T> coeff = e.objective.value();
  for (auto& c : coeff.storage()) c -= static_cast<T>(baseline);
  e.surrogate = score_term(log_prob(sel, logits, s), coeff, group_size);
  e.sample = std::move(s);
  return e;
}

template <typename T>
Estimate<T> pathwise_st(const Selection& sel, const Var<T>& logits, mask::BatchSample<T> s, const Objective<T>& f,
                        double tau) {
  Estimate<T> e;
  e.objective = f(diffnet::straight_through(s.hard, relaxed(sel, logits, s, tau)), Pass::hard);
  e.sample = std::move(s);
  return e;
}

/// [f(H) - eta f(~z|H)] grad log p(H) + eta grad f(~z) - eta grad f(~z|H).
template <typename T>
Estimate<T> rebar(const Selection& sel, const Var<T>& logits, mask::BatchSample<T> s, std::size_t group_size,
                  const Objective<T>& f, const Config& cfg, Rng& rng) {
  Estimate<T> e;
  e.objective = f(diffnet::constant(s.hard), Pass::hard);
  Tensor<T> coeff = e.objective.value();
  if (cfg.eta == 0.0) {
    e.surrogate = score_term(log_prob(sel, logits, s), coeff, group_size);
    e.sample = std::move(s);
    return e;
  }
  const T eta = static_cast<T>(cfg.eta);
  Var<T> soft = relaxed(sel, logits, s, cfg.tau);
  Var<T> soft_cond = relaxed_conditional(sel, logits, s, cfg.tau, rng);
  if (cfg.relaxation == Relaxation::straight_through) {
    soft = diffnet::straight_through(s.hard, soft);
    soft_cond = diffnet::straight_through(s.hard, soft_cond);
  }
  Var<T> f_soft = f(soft, Pass::relaxed);
  Var<T> f_cond = f(soft_cond, Pass::relaxed_conditional);
  for (std::size_t i = 0; i < coeff.size(); ++i) coeff[i] -= eta * f_cond.value()[i];
  Var<T> score = score_term(log_prob(sel, logits, s), coeff, group_size);
  Var<T> control = diffnet::scale(diffnet::sub(diffnet::sum(f_soft), diffnet::sum(f_cond)), eta);
  e.surrogate = diffnet::add(score, control);
  e.sample = std::move(s);
  return e;
}

/// Draws masks for `logits` and evaluates the configured estimator.
template <typename T>
Estimate<T> estimate(const Config& cfg, const Selection& sel, const Var<T>& logits, std::size_t group_size,
                     const Objective<T>& f, Rng& rng, BaselineState* baseline = nullptr) {
  auto s = draw(sel, logits.value(), rng);
  switch (cfg.kind) {
    case Kind::reinforce: {
      const double b = (cfg.baseline == Baseline::moving_average && baseline && baseline->initialized) ? baseline->value : 0.0;
      auto e = reinforce(sel, logits, std::move(s), group_size, f, b);
      if (cfg.baseline == Baseline::moving_average && baseline) {
        double m = 0;
        for (T v : e.objective.value().storage()) m += v;
        baseline->update(m / static_cast<double>(e.objective.size()), cfg.decay);
      }
      return e;
    }
    case Kind::pathwise_st: return pathwise_st(sel, logits, std::move(s), f, cfg.tau);
    case Kind::rebar: return rebar(sel, logits, std::move(s), group_size, f, cfg, rng);
  }
  throw ConfigError("unhandled estimator kind");
}

/// Gradient of sum_g E[f_g] w.r.t. `logits` for one draw. With one group per row
/// and repeated rows this yields independent per-row estimates in one call.
template <typename T>
Tensor<T> estimate_grad(const Config& cfg, const Selection& sel, const Tensor<T>& logits, std::size_t group_size,
                        const Objective<T>& f, Rng& rng, BaselineState* baseline = nullptr) {
  Var<T> l(logits, true);
  auto e = estimate(cfg, sel, l, group_size, f, rng, baseline);
  diffnet::backward(e.total());
  return l.grad().empty() ? Tensor<T>(logits.shape(), T(0)) : l.grad();
}

}  // namespace lex::gradest
