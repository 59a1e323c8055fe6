#pragma once

#include <vector>

#include "lex/imputers/common.hpp"

namespace lex::impute {

struct KMeansResult {
  std::size_t K = 0;
  std::size_t D = 0;
  std::vector<double> centers;          // K x D
  std::vector<std::size_t> assignment;  // per training row
  std::vector<double> wcss_trace;       // after each assignment step
  std::size_t reseeds = 0;

  const double* center(std::size_t k) const { return centers.data() + k * D; }

  std::size_t nearest(const double* x) const {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      const double dist = squared_distance(x, center(k), D);
      if (dist < bd) {
        bd = dist;
        best = k;
      }
    }
    return best;
  }
};

/// Lloyd's algorithm from k-means++ seeds, until the assignment is a fixpoint.
/// An empty cluster takes the row farthest from its current center.
inline KMeansResult fit_kmeans(const MatrixView& X, std::size_t K, std::uint64_t seed, std::size_t max_iter = 300) {
  if (K == 0) throw ConfigError("k-means needs at least one cluster");
  if (X.n < K) throw ContractError("k-means needs at least as many rows as clusters");
  const std::size_t n = X.n, D = X.d;
  Rng rng = make_stream(seed, "kmeans/init");
  KMeansResult r{K, D, std::vector<double>(K * D), std::vector<std::size_t>(n, K), {}, 0};
  auto seeds = kmeans_pp_seeds(X, K, rng);
  for (std::size_t k = 0; k < K; ++k) std::copy_n(X.row(seeds[k]), D, r.centers.begin() + static_cast<std::ptrdiff_t>(k * D));

  std::vector<double> dist(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    double wcss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = r.nearest(X.row(i));
      dist[i] = squared_distance(X.row(i), r.center(k), D);
      wcss += dist[i];
      if (k != r.assignment[i]) {
        r.assignment[i] = k;
        changed = true;
      }
    }
    r.wcss_trace.push_back(wcss);
    if (!changed) break;

    std::vector<double> sums(K * D, 0.0);
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignment[i]];
      for (std::size_t d = 0; d < D; ++d) sums[r.assignment[i] * D + d] += X.row(i)[d];
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (counts[k] == 0) {
        const std::size_t far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy_n(X.row(far), D, r.centers.begin() + static_cast<std::ptrdiff_t>(k * D));
        dist[far] = 0;
        ++r.reseeds;
        continue;
      }
      for (std::size_t d = 0; d < D; ++d) r.centers[k * D + d] = sums[k * D + d] / static_cast<double>(counts[k]);
    }
  }
  return r;
}

}  // namespace lex::impute
