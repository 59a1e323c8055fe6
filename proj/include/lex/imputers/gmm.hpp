#pragma once

#include <vector>

#include "lex/imputers/common.hpp"

namespace lex::impute {

/// Diagonal-covariance Gaussian mixture. means/vars are row-major K x D.
struct GmmParams {
  std::size_t K = 0;
  std::size_t D = 0;
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> vars;

  const double* mean(std::size_t k) const { return means.data() + k * D; }
  const double* var(std::size_t k) const { return vars.data() + k * D; }

  /// log pi_k + log N(x_obs | mu_k, Sigma_k) restricted to observed coordinates (all when z is null).
  double component_logjoint(std::size_t k, const double* x, const std::uint8_t* z = nullptr) const {
    double s = std::log(weights[k]);
    for (std::size_t d = 0; d < D; ++d)
      if (!z || z[d]) s += log_normal(x[d], mean(k)[d], var(k)[d]);
    return s;
  }

  double log_density(const double* x) const {
    std::vector<double> lj(K);
    for (std::size_t k = 0; k < K; ++k) lj[k] = component_logjoint(k, x);
    return logsumexp(lj);
  }

  bool operator==(const GmmParams&) const = default;
};

inline double mean_loglik(const GmmParams& p, const MatrixView& X) {
  double s = 0;
  for (std::size_t i = 0; i < X.n; ++i) s += p.log_density(X.row(i));
  return X.n ? s / static_cast<double>(X.n) : 0.0;
}

/// p(k | x_obs) for a diagonal mixture; an all-zero mask returns the prior weights.
inline std::vector<double> gmm_component_posterior(const GmmParams& p, const double* x, const std::uint8_t* z) {
  std::vector<double> w(p.K);
  bool any = false;
  for (std::size_t d = 0; d < p.D; ++d) any = any || z[d];
  if (!any) return p.weights;
  for (std::size_t k = 0; k < p.K; ++k) w[k] = p.component_logjoint(k, x, z);
  normalize_log(w);
  return w;
}

struct EmOptions {
  std::size_t max_iter = 200;
  double tol = 1e-5;
  double variance_floor = kVarianceFloor;
};

/// Expectation maximization for a diagonal GMM with k-means++ initial means.
/// Components that lose all responsibility are re-seeded at the worst-fit row.
inline GmmParams fit_gmm_em(const MatrixView& X, std::size_t K, std::uint64_t seed, const EmOptions& opt = {},
                            FitReport* report = nullptr) {
  if (K == 0) throw ConfigError("GMM needs at least one component");
  if (X.n < K) throw ContractError("GMM fit needs at least as many rows as components");
  const std::size_t n = X.n, D = X.d;
  Rng rng = make_stream(seed, "gmm/init");

  std::vector<double> col_mean(D, 0.0), col_var(D, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < D; ++d) col_mean[d] += X.row(i)[d];
  for (auto& m : col_mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < D; ++d) col_var[d] += (X.row(i)[d] - col_mean[d]) * (X.row(i)[d] - col_mean[d]);
  for (auto& v : col_var) v = std::max(v / static_cast<double>(n), opt.variance_floor);

  GmmParams p{K, D, std::vector<double>(K, 1.0 / static_cast<double>(K)), std::vector<double>(K * D),
              std::vector<double>(K * D)};
  auto seeds = kmeans_pp_seeds(X, K, rng);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t d = 0; d < D; ++d) {
      p.means[k * D + d] = X.row(seeds[k])[d];
      p.vars[k * D + d] = col_var[d];
    }

  FitReport local;
  FitReport& rep = report ? *report : local;
  std::vector<double> resp(n * K), row_ll(n), lj(K);
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    // E-step
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < K; ++k) lj[k] = p.component_logjoint(k, X.row(i));
      const double lse = logsumexp(lj);
      row_ll[i] = lse;
      total += lse;
      for (std::size_t k = 0; k < K; ++k) resp[i * K + k] = std::exp(lj[k] - lse);
    }
    const double ll = total / static_cast<double>(n);
    rep.loglik_trace.push_back(ll);
    rep.iterations = it + 1;
    if (it > 0 && ll - prev < opt.tol) {
      rep.converged = true;
      break;
    }
    prev = ll;

    // M-step
    std::vector<double> nk(K, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < K; ++k) nk[k] += resp[i * K + k];
    for (std::size_t k = 0; k < K; ++k) {
      if (nk[k] < 1e-10 * static_cast<double>(n)) {
        std::size_t worst = static_cast<std::size_t>(std::min_element(row_ll.begin(), row_ll.end()) - row_ll.begin());
        for (std::size_t d = 0; d < D; ++d) {
          p.means[k * D + d] = X.row(worst)[d];
          p.vars[k * D + d] = col_var[d];
        }
        row_ll[worst] = std::numeric_limits<double>::infinity();
        p.weights[k] = 1.0 / static_cast<double>(n);
        ++rep.reseeds;
        rep.notes.push_back("iteration " + std::to_string(it) + ": component " + std::to_string(k) +
                            " emptied and was re-seeded");
        continue;
      }
      p.weights[k] = nk[k] / static_cast<double>(n);
      for (std::size_t d = 0; d < D; ++d) {
        double m = 0;
        for (std::size_t i = 0; i < n; ++i) m += resp[i * K + k] * X.row(i)[d];
        m /= nk[k];
        double v = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const double diff = X.row(i)[d] - m;
          v += resp[i * K + k] * diff * diff;
        }
        p.means[k * D + d] = m;
        p.vars[k * D + d] = std::max(v / nk[k], opt.variance_floor);
      }
    }
    double wsum = 0;
    for (double w : p.weights) wsum += w;
    for (double& w : p.weights) w /= wsum;
  }
  return p;
}

/// Per-component categorical over validation rows, proportional to N(x_val | mu_k, Sigma_k).
struct ResampleTable {
  std::size_t K = 0;
  std::size_t n_val = 0;
  std::vector<double> prob;  // K x n_val
  std::vector<std::size_t> uniform_fallback;  // components whose densities all vanished

  std::span<const double> row(std::size_t k) const { return {prob.data() + k * n_val, n_val}; }
  bool operator==(const ResampleTable&) const = default;
};

inline ResampleTable build_resample_table(const GmmParams& p, const MatrixView& X_val) {
  if (X_val.n == 0) throw ContractError("resample table needs a non-empty validation set");
  ResampleTable t{p.K, X_val.n, std::vector<double>(p.K * X_val.n), {}};
  std::vector<double> lw(X_val.n);
  for (std::size_t k = 0; k < p.K; ++k) {
    bool finite = false;
    for (std::size_t i = 0; i < X_val.n; ++i) {
      double s = 0;
      for (std::size_t d = 0; d < p.D; ++d) s += log_normal(X_val.row(i)[d], p.mean(k)[d], p.var(k)[d]);
      lw[i] = s;
      finite = finite || std::isfinite(s);
    }
    if (!finite) t.uniform_fallback.push_back(k);
    normalize_log(lw);
    std::copy(lw.begin(), lw.end(), t.prob.begin() + static_cast<std::ptrdiff_t>(k * X_val.n));
  }
  return t;
}

}  // namespace lex::impute
