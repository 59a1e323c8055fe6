#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "lex/diffnet/autograd.hpp"
#include "lex/rng.hpp"

namespace lex::test {

using diffnet::Shape;
using diffnet::Tensor;
using diffnet::Var;

inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

/// Central differences of a scalar function of a flat vector.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({1.0, std::abs(a[i]), std::abs(b[i])}));
  return worst;
}

/// Relative error of an autograd-built scalar function of `x` against finite differences.
inline double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                         double h = 1e-5) {
  Var<double> leaf(x, true);
  diffnet::backward(f(leaf));
  std::vector<double> analytic = leaf.grad().empty() ? std::vector<double>(x.size(), 0.0) : leaf.grad().storage();
  auto numeric = central_diff(
      [&](const std::vector<double>& v) { return f(diffnet::constant(Tensor<double>(x.shape(), v))).value()[0]; },
      x.storage(), h);
  return max_rel_err(analytic, numeric);
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("lex_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Sample mean and standard error.
struct MeanSe {
  double mean = 0, se = 0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s2 = 0;
  for (double x : v) s2 += (x - m) * (x - m);
  s2 /= static_cast<double>(v.size() - 1);
  return {m, std::sqrt(s2 / static_cast<double>(v.size()))};
}

/// Multilinear extension of a table over {0,1}^D, applied row-wise to m [R x D] -> [R]:
/// f(m) = sum_z table[z] prod_d m_d^{z_d} (1 - m_d)^{1 - z_d}. Equals the table on binary rows.
inline Var<double> multilinear(const std::vector<double>& table, const Var<double>& m) {
  const std::size_t R = m.rows(), D = m.cols();
  Tensor<double> out(Shape{R});
  Tensor<double> jac(Shape{R, D}, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = m.value().data() + r * D;
    for (std::size_t code = 0; code < table.size(); ++code) {
      double p = 1;
      for (std::size_t d = 0; d < D; ++d) p *= (code >> d & 1) ? row[d] : 1 - row[d];
      out[r] += table[code] * p;
      for (std::size_t d = 0; d < D; ++d) {
        double q = table[code] * ((code >> d & 1) ? 1.0 : -1.0);
        for (std::size_t e = 0; e < D; ++e)
          if (e != d) q *= (code >> e & 1) ? row[e] : 1 - row[e];
        jac(r, d) += q;
      }
    }
  }
  return diffnet::make_op<double>(std::move(out), {m}, [jac, R, D](diffnet::Node<double>& n) {
    auto& buf = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t d = 0; d < D; ++d) buf[r * D + d] += n.grad[r] * jac(r, d);
  });
}

/// d/d logits of E_{z ~ Bernoulli(sigmoid(logits))}[table[z]] by enumeration.
inline std::vector<double> exact_bernoulli_gradient(const std::vector<double>& table, const std::vector<double>& logits) {
  const std::size_t D = logits.size();
  std::vector<double> g(D, 0.0), p(D);
  for (std::size_t d = 0; d < D; ++d) p[d] = 1.0 / (1.0 + std::exp(-logits[d]));
  for (std::size_t code = 0; code < table.size(); ++code) {
    double prob = 1;
    for (std::size_t d = 0; d < D; ++d) prob *= (code >> d & 1) ? p[d] : 1 - p[d];
    // d log p(z) / d l_d = z_d - p_d
    for (std::size_t d = 0; d < D; ++d) g[d] += table[code] * prob * (static_cast<double>(code >> d & 1) - p[d]);
  }
  return g;
}

}  // namespace lex::test
