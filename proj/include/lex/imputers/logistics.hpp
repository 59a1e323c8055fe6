#pragma once

#include <set>
#include <vector>

#include "lex/imputers/kmeans.hpp"

namespace lex::impute {

namespace detail {

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// log P(X = x) for a logistic(mu, s) discretized to the integer grid 0..V,
/// with the lower edge open to -inf at 0 and the upper edge open to +inf at V.
inline double discretized_logistic_logpmf(int x, double mu, double s, int V) {
  if (x < 0 || x > V) throw ContractError("discretized logistic value " + std::to_string(x) + " outside [0, " +
                                          std::to_string(V) + "]");
  const double upper = (x + 0.5 - mu) / s;
  const double lower = (x - 0.5 - mu) / s;
  if (V == 0) return 0.0;
  if (x == 0) return -detail::softplus(-upper);  // log sigmoid(upper)
  if (x == V) return -detail::softplus(lower);   // log (1 - sigmoid(lower))
  // sigmoid(a) - sigmoid(b) = sigmoid(a) (1 - sigmoid(b)) (1 - exp(b - a))
  return -detail::softplus(-upper) - detail::softplus(lower) + std::log(-std::expm1(lower - upper));
}

/// Cumulative-difference form; sums to one over the grid by telescoping.
inline double discretized_logistic_pmf(int x, double mu, double s, int V) {
  auto cdf = [&](double edge) { return detail::sigmoid((edge - mu) / s); };
  const double hi = x == V ? 1.0 : cdf(x + 0.5);
  const double lo = x == 0 ? 0.0 : cdf(x - 0.5);
  return hi - lo;
}

/// Inverse-CDF draw of a continuous logistic rounded onto the grid.
inline int sample_discretized_logistic(double mu, double s, int V, Rng& rng) {
  const double u = uniform_open(rng);
  const double v = mu + s * (std::log(u) - std::log1p(-u));
  return static_cast<int>(std::clamp(std::round(v), 0.0, static_cast<double>(V)));
}

struct LogisticsParams {
  std::size_t K = 0;
  std::size_t D = 0;
  int V = 255;
  std::vector<double> weights;
  std::vector<double> centers;  // K x D
  std::vector<double> scales;   // K x D

  double component_logjoint(std::size_t k, const double* x, const std::uint8_t* z = nullptr) const {
    double s = std::log(weights[k]);
    for (std::size_t d = 0; d < D; ++d)
      if (!z || z[d])
        s += discretized_logistic_logpmf(static_cast<int>(x[d]), centers[k * D + d], scales[k * D + d], V);
    return s;
  }

  double log_density(const double* x) const {
    std::vector<double> lj(K);
    for (std::size_t k = 0; k < K; ++k) lj[k] = component_logjoint(k, x);
    return logsumexp(lj);
  }

  bool operator==(const LogisticsParams&) const = default;
};

inline std::vector<double> logistics_component_posterior(const LogisticsParams& p, const double* x,
                                                         const std::uint8_t* z) {
  bool any = false;
  for (std::size_t d = 0; d < p.D; ++d) any = any || z[d];
  if (!any) return p.weights;
  std::vector<double> w(p.K);
  for (std::size_t k = 0; k < p.K; ++k) w[k] = p.component_logjoint(k, x, z);
  normalize_log(w);
  return w;
}

inline double mean_loglik(const LogisticsParams& p, const MatrixView& X) {
  double s = 0;
  for (std::size_t i = 0; i < X.n; ++i) s += p.log_density(X.row(i));
  return X.n ? s / static_cast<double>(X.n) : 0.0;
}

namespace detail {

/// Histogram objective sum_v h_v log pmf(v | mu, s) and its gradient in (mu, log s).
inline double histogram_objective(const std::vector<std::pair<int, double>>& hist, double mu, double log_s, int V,
                                  double* g_mu = nullptr, double* g_ls = nullptr) {
  const double s = std::exp(log_s);
  double f = 0, gm = 0, gl = 0;
  for (auto [v, h] : hist) {
    const double lp = discretized_logistic_logpmf(v, mu, s, V);
    f += h * lp;
    if (!g_mu) continue;
    const double pmf = std::max(std::exp(lp), 1e-300);
    const double a = (v + 0.5 - mu) / s, b = (v - 0.5 - mu) / s;
    const double da = v == V ? 0.0 : sigmoid(a) * (1.0 - sigmoid(a));
    const double db = v == 0 ? 0.0 : sigmoid(b) * (1.0 - sigmoid(b));
    gm += h * (-(da - db) / s) / pmf;
    gl += h * (-(da * (v == V ? 0.0 : a) - db * (v == 0 ? 0.0 : b))) / pmf;
  }
  if (g_mu) {
    *g_mu = gm;
    *g_ls = gl;
  }
  return f;
}

/// Gradient ascent with backtracking; never decreases the objective.
inline void fit_logistic_to_histogram(const std::vector<std::pair<int, double>>& hist, double& mu, double& s, int V,
                                      int steps = 30) {
  double log_s = std::log(std::max(s, kScaleFloor));
  double step = 1.0;
  double f = histogram_objective(hist, mu, log_s, V);
  for (int it = 0; it < steps; ++it) {
    double gm, gl;
    histogram_objective(hist, mu, log_s, V, &gm, &gl);
    double total = 0;
    for (auto& e : hist) total += e.second;
    gm /= std::max(total, 1.0);
    gl /= std::max(total, 1.0);
    if (std::abs(gm) + std::abs(gl) < 1e-10) break;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      const double m2 = mu + step * gm * std::max(s, 1.0);
      const double l2 = std::max(log_s + step * gl, std::log(kScaleFloor));
      const double f2 = histogram_objective(hist, m2, l2, V);
      if (f2 >= f) {
        mu = m2;
        log_s = l2;
        f = f2;
        step *= 1.5;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    s = std::exp(log_s);
  }
  s = std::max(std::exp(log_s), kScaleFloor);
}

}  // namespace detail

struct LogisticsOptions {
  int V = 255;
  std::size_t epochs = 30;
};

/// Mixture of discretized logistics on grid-valued rows: k-means initialization,
/// then stochastic EM (sampled assignments, per-dimension likelihood ascent).
inline LogisticsParams fit_logistics(const MatrixView& X, std::size_t K, std::uint64_t seed,
                                     const LogisticsOptions& opt = {}, FitReport* report = nullptr,
                                     const MatrixView* heldout = nullptr) {
  if (K == 0) throw ConfigError("logistic mixture needs at least one component");
  const std::size_t n = X.n, D = X.d;
  for (std::size_t i = 0; i < n * D; ++i) {
    const double v = X.data[i];
    if (v != std::round(v) || v < 0 || v > opt.V)
      throw ContractError("logistic mixture data must lie on the integer grid [0, " + std::to_string(opt.V) + "]");
  }
  std::set<std::vector<double>> distinct;
  for (std::size_t i = 0; i < n && distinct.size() <= K; ++i) distinct.emplace(X.row(i), X.row(i) + D);
  if (K > distinct.size())
    throw ConfigError("logistic mixture asks for " + std::to_string(K) + " components but the data has only " +
                      std::to_string(distinct.size()) + " distinct rows");

  FitReport local;
  FitReport& rep = report ? *report : local;
  auto km = fit_kmeans(X, K, seed);
  LogisticsParams p{K, D, opt.V, std::vector<double>(K), std::vector<double>(K * D), std::vector<double>(K * D)};
  std::vector<std::size_t> assign = km.assignment;
  Rng rng = make_stream(seed, "logistics/sem");

  auto m_step = [&](bool init) {
    std::vector<std::size_t> count(K, 0);
    for (auto a : assign) ++count[a];
    for (std::size_t k = 0; k < K; ++k) {
      if (count[k] == 0) {
        // keep previous parameters; tiny weight keeps the component alive
        p.weights[k] = 0.5 / static_cast<double>(n);
        ++rep.reseeds;
        continue;
      }
      p.weights[k] = static_cast<double>(count[k]) / static_cast<double>(n);
      for (std::size_t d = 0; d < D; ++d) {
        std::vector<double> h(static_cast<std::size_t>(opt.V) + 1, 0.0);
        double mean = 0, var = 0;
        for (std::size_t i = 0; i < n; ++i)
          if (assign[i] == k) {
            h[static_cast<std::size_t>(X.row(i)[d])] += 1.0;
            mean += X.row(i)[d];
          }
        mean /= static_cast<double>(count[k]);
        for (std::size_t i = 0; i < n; ++i)
          if (assign[i] == k) var += (X.row(i)[d] - mean) * (X.row(i)[d] - mean);
        var /= static_cast<double>(count[k]);
        std::vector<std::pair<int, double>> hist;
        for (std::size_t v = 0; v < h.size(); ++v)
          if (h[v] > 0) hist.emplace_back(static_cast<int>(v), h[v]);
        double& mu = p.centers[k * D + d];
        double& s = p.scales[k * D + d];
        if (init) {
          mu = km.center(k)[d];
          s = std::max(std::sqrt(3.0 * var) / std::numbers::pi, 0.5);
        }
        detail::fit_logistic_to_histogram(hist, mu, s, opt.V);
      }
    }
    double wsum = 0;
    for (double w : p.weights) wsum += w;
    for (double& w : p.weights) w /= wsum;
  };

  m_step(true);
  rep.loglik_trace.push_back(mean_loglik(p, X));
  std::vector<double> lj(K);
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < K; ++k) lj[k] = p.component_logjoint(k, X.row(i));
      normalize_log(lj);
      assign[i] = sample_index(lj, rng);
    }
    m_step(false);
    rep.loglik_trace.push_back(mean_loglik(p, X));
    rep.iterations = e + 1;
  }
  if (heldout && heldout->n) rep.heldout_loglik = mean_loglik(p, *heldout);
  return p;
}

}  // namespace lex::impute
