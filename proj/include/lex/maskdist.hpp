#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lex/diffnet/autograd.hpp"
#include "lex/rng.hpp"

namespace lex::mask {

using diffnet::Shape;
using diffnet::Tensor;
using diffnet::Var;

enum class Mode { bernoulli, subset };

inline std::string to_string(Mode m) { return m == Mode::bernoulli ? "bernoulli" : "subset"; }

inline Mode mode_from_string(const std::string& s) {
  if (s == "bernoulli") return Mode::bernoulli;
  if (s == "subset") return Mode::subset;
  throw ConfigError("unknown selection mode '" + s + "'");
}

/// Number of features for a selection rate, round(rate * D).
inline std::size_t k_from_rate(double rate, std::size_t dim) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(dim)));
}

inline void check_k(std::size_t k, std::size_t dim) {
  if (k < 1 || k > dim)
    throw ConfigError("subset size k=" + std::to_string(k) + " outside [1, " + std::to_string(dim) + "]");
}

// ---------------------------------------------------------------------------
// Batched sampling. Rows of `logits` are independent instances.

/// Noise and hard outcome of one batch draw. `noise` holds logistic noise in
/// Bernoulli mode and Gumbel noise in subset mode. `orders` (subset mode) lists
/// the k chosen indices per row in decreasing perturbed score.
template <typename T>
struct BatchSample {
  Tensor<T> hard;
  Tensor<T> noise;
  std::vector<std::vector<std::size_t>> orders;
};

template <typename T>
BatchSample<T> sample_bernoulli(const Tensor<T>& logits, Rng& rng, double tau = 0.5) {
  BatchSample<T> s{Tensor<T>(logits.shape()), Tensor<T>(logits.shape()), {}};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double n = standard_logistic(rng);
    s.noise[i] = static_cast<T>(n);
    // Coupled with the relaxed draw: hard = 1[sigmoid((l + n) / tau) > 0.5].
    const T relaxed = diffnet::detail::sigmoid<T>((logits[i] + s.noise[i]) / static_cast<T>(tau));
    s.hard[i] = relaxed > T(0.5) ? T(1) : T(0);
  }
  return s;
}

/// Indices of the k largest entries of `scores`, largest first; ties go to the lower index.
template <typename T>
std::vector<std::size_t> top_k(std::span<const T> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  return idx;
}

template <typename T>
BatchSample<T> sample_subset(const Tensor<T>& logits, std::size_t k, Rng& rng) {
  const std::size_t rows = logits.rows(), dim = logits.cols();
  check_k(k, dim);
  BatchSample<T> s{Tensor<T>(logits.shape()), Tensor<T>(logits.shape()), {}};
  s.orders.resize(rows);
  std::vector<T> perturbed(dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t d = 0; d < dim; ++d) {
      s.noise[r * dim + d] = static_cast<T>(standard_gumbel(rng));
      perturbed[d] = logits[r * dim + d] + s.noise[r * dim + d];
    }
    s.orders[r] = top_k<T>(perturbed, k);
    for (auto i : s.orders[r]) s.hard[r * dim + i] = T(1);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Differentiable pieces (functions of the logits Var)

/// sigmoid((logits + noise) / tau)
template <typename T>
Var<T> relaxed_bernoulli(const Var<T>& logits, const Tensor<T>& noise, double tau) {
  return diffnet::sigmoid(diffnet::scale(diffnet::add_const(logits, noise), static_cast<T>(1.0 / tau)));
}

/// Logistic-noise logit conditioned on the Bernoulli outcome: for hard = 1 the
/// uniform driving the noise is restricted to (1 - p, 1), for hard = 0 to (0, 1 - p),
/// with p = sigmoid(logit). `v` holds fresh uniforms. Returns logit + noise, evaluated
/// in log space so saturated logits stay finite.
template <typename T>
Var<T> conditional_logistic_logit(const Var<T>& logits, const Tensor<double>& v, const Tensor<T>& hard) {
  using diffnet::detail::log1pexp;
  Tensor<T> out(logits.shape());
  Tensor<T> deriv(logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double l = logits.value()[i];
    const double vi = v[i];
    const double log_p = -log1pexp(-l);  // log sigmoid(l)
    const double log_q = -log1pexp(l);   // log (1 - sigmoid(l))
    const double p = std::exp(log_p), q = std::exp(log_q);
    double z, dz;
    if (hard[i] > T(0.5)) {
      // u' = q + v p; 1 - u' = p (1 - v)
      const double log_u = std::log1p(-p * (1.0 - vi));
      const double log_1mu = log_p + std::log1p(-vi);
      z = l + log_u - log_1mu;
      dz = p * vi / (1.0 - p * (1.0 - vi));
    } else {
      // u' = v q; 1 - u' = 1 - v q
      const double log_u = log_q + std::log(vi);
      const double log_1mu = std::log1p(-vi * q);
      z = l + log_u - log_1mu;
      dz = q * (1.0 - vi) / (1.0 - vi * q);
    }
    out[i] = static_cast<T>(z);
    deriv[i] = static_cast<T>(dz);
  }
  return diffnet::make_op<T>(std::move(out), {logits}, [deriv](diffnet::Node<T>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * deriv[i];
  });
}

/// Relaxed Bernoulli sample drawn conditionally on `hard`; thresholds back to `hard`.
template <typename T>
Var<T> conditional_relaxed_bernoulli(const Var<T>& logits, const Tensor<double>& v, const Tensor<T>& hard,
                                     double tau) {
  return diffnet::sigmoid(diffnet::scale(conditional_logistic_logit(logits, v, hard), static_cast<T>(1.0 / tau)));
}

/// Iterated softmax relaxation of top-k over perturbed scores [R x D]:
/// p_j = softmax(a_j / tau), a_{j+1} = a_j + log(1 - p_j), relaxed = sum_j p_j.
template <typename T>
Var<T> relaxed_top_k(const Var<T>& perturbed, std::size_t k, double tau) {
  check_k(k, perturbed.cols());
  const T floor = std::numeric_limits<T>::min() * T(1e6);
  Var<T> a = perturbed;
  Var<T> acc;
  for (std::size_t j = 0; j < k; ++j) {
    Var<T> p = diffnet::softmax_rows(diffnet::scale(a, static_cast<T>(1.0 / tau)));
    acc = acc.valid() ? diffnet::add(acc, p) : p;
    if (j + 1 < k) a = diffnet::add(a, diffnet::log(diffnet::clamp_min(diffnet::add_scalar(diffnet::neg(p), T(1)), floor)));
  }
  return diffnet::clamp(acc, T(0), T(1));
}

/// Perturbed scores redrawn conditionally on the realized top-k order: the i-th
/// pick's score is a Gumbel at logsumexp of the remaining logits truncated below
/// the previous pick; unselected scores are Gumbels truncated below the k-th pick.
/// `gumbel` holds fresh standard Gumbel noise [R x D]; the entry at a picked index
/// drives that pick's score, the entry at an unselected index drives its own score,
/// so no noise value is used twice.
template <typename T>
Var<T> conditional_perturbed_subset(const Var<T>& logits, const std::vector<std::vector<std::size_t>>& orders,
                                    const Tensor<T>& gumbel) {
  const std::size_t rows = logits.rows(), dim = logits.cols();
  if (orders.size() != rows) throw DimensionError("conditional_perturbed_subset: one order per row required");
  const std::size_t k = orders.empty() ? 0 : orders[0].size();
  const T ninf = -std::numeric_limits<T>::infinity();

  Tensor<T> excluded(logits.shape(), T(0));  // -inf on picks already made
  Tensor<T> rest(logits.shape(), T(1));      // 1 on never-picked entries
  for (std::size_t r = 0; r < rows; ++r)
    for (auto i : orders[r]) rest[r * dim + i] = T(0);

  Var<T> score_sum;
  Var<T> prev;
  for (std::size_t i = 0; i < k; ++i) {
    Tensor<T> g(Shape{rows});
    for (std::size_t r = 0; r < rows; ++r) g[r] = gumbel[r * dim + orders[r][i]];
    Var<T> top = diffnet::add_const(diffnet::logsumexp_rows(diffnet::add_const(logits, excluded)), g);
    if (prev.valid()) top = diffnet::soft_min(top, prev);
    prev = top;
    Tensor<T> onehot(logits.shape(), T(0));
    for (std::size_t r = 0; r < rows; ++r) {
      onehot[r * dim + orders[r][i]] = T(1);
      excluded[r * dim + orders[r][i]] = ninf;
    }
    Var<T> placed = diffnet::mul_const(diffnet::broadcast_cols(top, dim), onehot);
    score_sum = score_sum.valid() ? diffnet::add(score_sum, placed) : placed;
  }
  Var<T> others = diffnet::soft_min(diffnet::add_const(logits, gumbel), diffnet::broadcast_cols(prev, dim));
  return diffnet::add(score_sum, diffnet::mul_const(others, rest));
}

/// log p(hard | logits) per row, [R x D] -> [R].
template <typename T>
Var<T> bernoulli_logprob(const Var<T>& logits, const Tensor<T>& hard) {
  Tensor<T> sign(hard.shape());
  for (std::size_t i = 0; i < sign.size(); ++i) sign[i] = hard[i] > T(0.5) ? T(1) : T(-1);
  return diffnet::sum_rows(diffnet::log_sigmoid(diffnet::mul_const(logits, sign)));
}

/// Plackett-Luce log-probability of each row's ordered picks, [R x D] -> [R].
template <typename T>
Var<T> subset_logprob_ordered(const Var<T>& logits, const std::vector<std::vector<std::size_t>>& orders) {
  const std::size_t rows = logits.rows(), dim = logits.cols();
  if (orders.size() != rows) throw DimensionError("subset_logprob_ordered: one order per row required");
  const std::size_t k = orders.empty() ? 0 : orders[0].size();
  for (const auto& o : orders) {
    if (o.size() != k) throw ContractError("subset_logprob_ordered: orders of unequal length");
    std::vector<bool> seen(dim, false);
    for (auto i : o) {
      if (i >= dim) throw ContractError("subset_logprob_ordered: index out of range");
      if (seen[i]) throw ContractError("subset_logprob_ordered: duplicate index in order");
      seen[i] = true;
    }
  }
  Tensor<T> excluded(logits.shape(), T(0));
  Var<T> total;
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<std::size_t> pick(rows);
    for (std::size_t r = 0; r < rows; ++r) pick[r] = orders[r][i];
    Var<T> term = diffnet::sub(diffnet::gather_cols(logits, pick),
                               diffnet::logsumexp_rows(diffnet::add_const(logits, excluded)));
    total = total.valid() ? diffnet::add(total, term) : term;
    for (std::size_t r = 0; r < rows; ++r) excluded[r * dim + pick[r]] = -std::numeric_limits<T>::infinity();
  }
  if (!total.valid()) return diffnet::constant(Tensor<T>(Shape{rows}, T(0)));
  return total;
}

// ---------------------------------------------------------------------------
// Single-instance API (double precision)

/// One draw for one instance. `aux` keeps the noise for conditional re-sampling.
struct MaskSample {
  std::vector<std::uint8_t> hard;
  std::vector<double> relaxed;
  std::vector<double> aux;
  std::vector<std::size_t> order;  // subset mode only
};

namespace detail {

inline Var<double> row_var(std::span<const double> logits) {
  return diffnet::constant(Tensor<double>(Shape{1, logits.size()}, std::vector<double>(logits.begin(), logits.end())));
}

inline MaskSample to_sample(const BatchSample<double>& b, const Tensor<double>& relaxed) {
  MaskSample s;
  for (double h : b.hard.storage()) s.hard.push_back(h > 0.5 ? 1 : 0);
  s.relaxed = relaxed.storage();
  s.aux = b.noise.storage();
  if (!b.orders.empty()) s.order = b.orders[0];
  return s;
}

}  // namespace detail

inline MaskSample bernoulli_sample(std::span<const double> logits, Rng& rng, double tau = 0.5) {
  auto l = detail::row_var(logits);
  auto b = sample_bernoulli(l.value(), rng, tau);
  return detail::to_sample(b, relaxed_bernoulli(l, b.noise, tau).value());
}

inline double bernoulli_logprob(std::span<const double> logits, std::span<const std::uint8_t> z) {
  if (z.size() != logits.size()) throw DimensionError("bernoulli_logprob: mask length differs from logits");
  double s = 0;
  for (std::size_t d = 0; d < z.size(); ++d) {
    if (z[d] > 1) throw ContractError("bernoulli_logprob: mask must be binary");
    const double x = z[d] ? logits[d] : -logits[d];
    s += -diffnet::detail::log1pexp(-x);
  }
  return s;
}

inline MaskSample subset_sample(std::span<const double> logits, std::size_t k, Rng& rng, double tau = 0.5) {
  check_k(k, logits.size());
  auto l = detail::row_var(logits);
  auto b = sample_subset(l.value(), k, rng);
  auto relaxed = relaxed_top_k(diffnet::add_const(l, b.noise), k, tau);
  return detail::to_sample(b, relaxed.value());
}

inline double subset_logprob_ordered(std::span<const double> logits, const std::vector<std::size_t>& order) {
  return subset_logprob_ordered(detail::row_var(logits), std::vector<std::vector<std::size_t>>{order}).value()[0];
}

/// Probability that the unordered top-k set equals `set` (any order), by a
/// subset dynamic program over the members of `set`.
inline double subset_set_probability(std::span<const double> logits, const std::vector<std::size_t>& set) {
  const std::size_t k = set.size();
  if (k > 20) throw CapabilityError("subset_set_probability: set too large for exact evaluation");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0;
  for (std::size_t d = 0; d < w.size(); ++d) total += (w[d] = std::exp(logits[d] - mx));
  std::vector<double> f(std::size_t{1} << k, 0.0);
  std::vector<double> used(f.size(), 0.0);
  f[0] = 1.0;
  for (std::size_t s = 1; s < f.size(); ++s) {
    for (std::size_t j = 0; j < k; ++j) {
      if (!(s >> j & 1)) continue;
      const std::size_t prev = s ^ (std::size_t{1} << j);
      used[s] = used[prev] + w[set[j]];
      f[s] += f[prev] * w[set[j]] / (total - used[prev]);
    }
  }
  return f.back();
}

/// E[Z | x]: exact sigmoid in Bernoulli mode, Monte Carlo over `draws` hard samples in subset mode.
inline std::vector<double> expected_selection(std::span<const double> logits, Mode mode, std::size_t k, Rng& rng,
                                              std::size_t draws = 100) {
  std::vector<double> out(logits.size(), 0.0);
  if (mode == Mode::bernoulli) {
    for (std::size_t d = 0; d < out.size(); ++d) out[d] = diffnet::detail::sigmoid(logits[d]);
    return out;
  }
  check_k(k, logits.size());
  Tensor<double> rep(Shape{draws, logits.size()});
  for (std::size_t m = 0; m < draws; ++m) std::copy(logits.begin(), logits.end(), rep.row(m).begin());
  auto b = sample_subset(rep, k, rng);
  for (std::size_t m = 0; m < draws; ++m)
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += b.hard(m, d);
  for (auto& v : out) v /= static_cast<double>(draws);
  return out;
}

}  // namespace lex::mask
