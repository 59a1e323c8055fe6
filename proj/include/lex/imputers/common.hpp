#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lex/error.hpp"
#include "lex/rng.hpp"

namespace lex::impute {

/// Non-owning row-major view of an n x d matrix.
struct MatrixView {
  const double* data = nullptr;
  std::size_t n = 0;
  std::size_t d = 0;

  MatrixView() = default;
  MatrixView(const double* p, std::size_t rows, std::size_t cols) : data(p), n(rows), d(cols) {}
  MatrixView(const std::vector<double>& v, std::size_t cols) : data(v.data()), n(cols ? v.size() / cols : 0), d(cols) {}

  const double* row(std::size_t i) const { return data + i * d; }
};

/// Ingredients shared by the mixture fitters.
struct FitReport {
  std::vector<double> loglik_trace;  // mean per-row log-likelihood per iteration/epoch
  std::size_t iterations = 0;
  std::size_t reseeds = 0;
  bool converged = false;
  double heldout_loglik = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> notes;
};

inline constexpr double kVarianceFloor = 1e-4;
inline constexpr double kScaleFloor = 1e-3;

inline double log_normal(double x, double mean, double var) {
  const double diff = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + diff * diff / var);
}

inline double logsumexp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// In-place softmax of log-weights; all -inf falls back to uniform.
inline void normalize_log(std::vector<double>& w) {
  const double lse = logsumexp(w);
  if (!std::isfinite(lse)) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
    return;
  }
  for (auto& x : w) x = std::exp(x - lse);
}

/// Index drawn from non-negative weights that sum to (about) one.
inline std::size_t sample_index(std::span<const double> p, Rng& rng) {
  double u = uniform_open(rng);
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  // rounding left a sliver above the total
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0) return i;
  return p.size() - 1;
}

/// Index drawn from a cumulative table (last entry ~1).
inline std::size_t sample_cumulative(std::span<const double> cdf, Rng& rng) {
  const double u = uniform_open(rng) * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

inline double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0;
  for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

/// k-means++ seeding: indices of k rows.
inline std::vector<std::size_t> kmeans_pp_seeds(const MatrixView& X, std::size_t k, Rng& rng) {
  std::vector<std::size_t> seeds;
  std::uniform_int_distribution<std::size_t> first(0, X.n - 1);
  seeds.push_back(first(rng));
  std::vector<double> dist(X.n, std::numeric_limits<double>::infinity());
  while (seeds.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < X.n; ++i) {
      dist[i] = std::min(dist[i], squared_distance(X.row(i), X.row(seeds.back()), X.d));
      total += dist[i];
    }
    if (total <= 0) {
      seeds.push_back(first(rng));
      continue;
    }
    double u = uniform_open(rng) * total, acc = 0;
    std::size_t pick = X.n - 1;
    for (std::size_t i = 0; i < X.n; ++i) {
      acc += dist[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    seeds.push_back(pick);
  }
  return seeds;
}

}  // namespace lex::impute
