#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lex/gradest.hpp"
#include "support.hpp"

using namespace lex;
using namespace lex::gradest;
using lex::test::exact_bernoulli_gradient;
using lex::test::multilinear;

namespace {

Tensor<double> repeat(const std::vector<double>& row, std::size_t n) {
  Tensor<double> t(Shape{n, row.size()});
  for (std::size_t r = 0; r < n; ++r) std::copy(row.begin(), row.end(), t.row(r).begin());
  return t;
}

std::vector<double> random_table(std::size_t D, Rng& rng) {
  std::vector<double> t(std::size_t{1} << D);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : t) v = u(rng);
  return t;
}

/// Per-coordinate max |z| of per-row estimates against `exact`.
double max_z(const Tensor<double>& per_row, const std::vector<double>& exact) {
  const std::size_t R = per_row.rows(), D = per_row.cols();
  double worst = 0;
  for (std::size_t d = 0; d < D; ++d) {
    std::vector<double> col(R);
    for (std::size_t r = 0; r < R; ++r) col[r] = per_row(r, d);
    auto ms = lex::test::mean_se(col);
    worst = std::max(worst, std::abs(ms.mean - exact[d]) / ms.se);
  }
  return worst;
}

// Plackett-Luce expectation of table[set] over ordered k-prefixes, by enumeration.
double subset_expectation(const std::vector<double>& table, const std::vector<double>& logits, std::size_t k) {
  const std::size_t D = logits.size();
  double total = 0;
  std::vector<std::size_t> order;
  std::function<void(double, double, std::size_t)> rec = [&](double prob, double rest, std::size_t code) {
    if (order.size() == k) {
      total += prob * table[code];
      return;
    }
    for (std::size_t d = 0; d < D; ++d) {
      if (code >> d & 1) continue;
      const double w = std::exp(logits[d]);
      order.push_back(d);
      rec(prob * w / rest, rest - w, code | (std::size_t{1} << d));
      order.pop_back();
    }
  };
  double all = 0;
  for (double l : logits) all += std::exp(l);
  rec(1.0, all, 0);
  return total;
}

}  // namespace

TEST(Gradest, KindNames) {
  EXPECT_EQ(kind_from_string("rebar"), Kind::rebar);
  EXPECT_EQ(kind_from_string("pathwise_st"), Kind::pathwise_st);
  EXPECT_THROW(kind_from_string("vimco"), ConfigError);
}

TEST(Gradest, ExactGradientOracleMatchesFiniteDifferences) {
  Rng rng(1);
  auto table = random_table(3, rng);
  std::vector<double> l{0.3, -0.8, 1.1};
  auto expectation = [&](const std::vector<double>& v) {
    double e = 0;
    for (std::size_t c = 0; c < table.size(); ++c) {
      double p = 1;
      for (std::size_t d = 0; d < 3; ++d) {
        const double s = 1 / (1 + std::exp(-v[d]));
        p *= (c >> d & 1) ? s : 1 - s;
      }
      e += p * table[c];
    }
    return e;
  };
  EXPECT_LT(lex::test::max_rel_err(exact_bernoulli_gradient(table, l), lex::test::central_diff(expectation, l)), 1e-8);
}

class BernoulliUnbiased : public ::testing::TestWithParam<std::pair<Kind, double>> {};

TEST_P(BernoulliUnbiased, MatchesEnumeration) {
  const auto [kind, eta] = GetParam();
  Rng rng(42);
  const std::size_t D = 4, R = 200000;
  auto table = random_table(D, rng);
  const std::vector<double> logits{0.4, -1.0, 1.5, 0.0};
  Config cfg;
  cfg.kind = kind;
  cfg.eta = eta;
  Selection sel{mask::Mode::bernoulli, 0, cfg.tau};
  Objective<double> f = [&](const Var<double>& m, Pass) { return multilinear(table, m); };
  auto g = estimate_grad(cfg, sel, repeat(logits, R), 1, f, rng);
  EXPECT_LT(max_z(g, exact_bernoulli_gradient(table, logits)), 4.0);
}

INSTANTIATE_TEST_SUITE_P(Estimators, BernoulliUnbiased,
                         ::testing::Values(std::make_pair(Kind::reinforce, 0.0), std::make_pair(Kind::rebar, 0.5),
                                           std::make_pair(Kind::rebar, 1.0)));

TEST(Gradest, RebarReducesVarianceOnSmoothObjective) {
  Rng rng(3);
  const std::size_t D = 4, R = 20000;
  auto table = random_table(D, rng);
  const std::vector<double> logits{0.4, -1.0, 1.5, 0.0};
  Objective<double> f = [&](const Var<double>& m, Pass) { return multilinear(table, m); };
  auto var_of = [&](Config cfg) {
    Selection sel{mask::Mode::bernoulli, 0, cfg.tau};
    Rng draw(77);
    auto g = estimate_grad(cfg, sel, repeat(logits, R), 1, f, draw);
    double v = 0;
    for (std::size_t d = 0; d < D; ++d) {
      std::vector<double> col(R);
      for (std::size_t r = 0; r < R; ++r) col[r] = g(r, d);
      v += std::pow(lex::test::mean_se(col).se, 2);
    }
    return v;
  };
  Config reinforce_cfg;
  reinforce_cfg.kind = Kind::reinforce;
  Config rebar_cfg;
  rebar_cfg.eta = 0.5;
  EXPECT_LT(var_of(rebar_cfg), 0.95 * var_of(reinforce_cfg));
}

TEST(Gradest, RebarAtUnitEtaIsNoWorseThanReinforce) {
  // paired draws: both estimators see the same noise stream
  Rng rng(3);
  const std::size_t D = 4, R = 100000;
  auto table = random_table(D, rng);
  const std::vector<double> logits{0.4, -1.0, 1.5, 0.0};
  Objective<double> f = [&](const Var<double>& m, Pass) { return multilinear(table, m); };
  auto var_of = [&](Config cfg) {
    Selection sel{mask::Mode::bernoulli, 0, cfg.tau};
    Rng draw(78);
    auto g = estimate_grad(cfg, sel, repeat(logits, R), 1, f, draw);
    double v = 0;
    for (std::size_t d = 0; d < D; ++d) {
      std::vector<double> col(R);
      for (std::size_t r = 0; r < R; ++r) col[r] = g(r, d);
      v += std::pow(lex::test::mean_se(col).se, 2);
    }
    return v;
  };
  Config reinforce_cfg;
  reinforce_cfg.kind = Kind::reinforce;
  Config rebar_cfg;
  rebar_cfg.eta = 1.0;
  rebar_cfg.tau = 0.5;
  const double ratio = var_of(rebar_cfg) / var_of(reinforce_cfg);
  RecordProperty("variance_ratio", std::to_string(ratio));
  RecordProperty("rebar_not_greater", ratio <= 1.0 ? "yes" : "no");
  EXPECT_LE(ratio, 1.5);
}

TEST(Gradest, RebarWithZeroEtaIsReinforce) {
  const std::size_t D = 5, R = 64;
  Rng t(9);
  auto table = random_table(D, t);
  auto logits = lex::test::random_tensor({R, D}, t);
  Objective<double> f = [&](const Var<double>& m, Pass) { return multilinear(table, m); };
  Selection sel{mask::Mode::bernoulli, 0, 0.5};
  Config a;
  a.kind = Kind::reinforce;
  Config b;
  b.eta = 0.0;
  Rng r1(5), r2(5);
  EXPECT_EQ(estimate_grad(a, sel, logits, 1, f, r1), estimate_grad(b, sel, logits, 1, f, r2));
}

TEST(Gradest, SubsetEstimatorsUnbiased) {
  const std::size_t D = 4, k = 2, R = 200000;
  Rng rng(11);
  auto table = random_table(D, rng);
  const std::vector<double> logits{0.5, -0.2, 0.9, -1.1};
  auto exact = lex::test::central_diff([&](const std::vector<double>& v) { return subset_expectation(table, v, k); },
                                       logits, 1e-5);
  Objective<double> f = [&](const Var<double>& m, Pass) { return multilinear(table, m); };
  for (Kind kind : {Kind::reinforce, Kind::rebar}) {
    Config cfg;
    cfg.kind = kind;
    Selection sel{mask::Mode::subset, k, cfg.tau};
    auto g = estimate_grad(cfg, sel, repeat(logits, R), 1, f, rng);
    EXPECT_LT(max_z(g, exact), 4.0) << to_string(kind);
  }
}

TEST(Gradest, MovingAverageBaselineStaysUnbiased) {
  Rng rng(13);
  const std::size_t D = 3, R = 100000;
  auto table = random_table(D, rng);
  for (auto& v : table) v += 5.0;  // large offset: the baseline matters
  const std::vector<double> logits{0.2, -0.6, 0.9};
  Config cfg;
  cfg.kind = Kind::reinforce;
  cfg.baseline = Baseline::moving_average;
  Selection sel{mask::Mode::bernoulli, 0, 0.5};
  Objective<double> f = [&](const Var<double>& m, Pass) { return multilinear(table, m); };
  BaselineState state;
  estimate_grad(cfg, sel, repeat(logits, 1000), 1, f, rng, &state);  // warm the baseline
  ASSERT_TRUE(state.initialized);
  auto g = estimate_grad(cfg, sel, repeat(logits, R), 1, f, rng, &state);
  EXPECT_LT(max_z(g, exact_bernoulli_gradient(table, logits)), 4.0);
}

// Straight-through: gradient equals the gradient of f evaluated along the relaxed path
// with the hard value held fixed, G(l) = f(H + r(l) - r(l0)).
TEST(Gradest, PathwiseStraightThroughFollowsRelaxedPath) {
  const std::size_t D = 4;
  Rng rng(17);
  auto table = random_table(D, rng);
  const std::vector<double> l0{0.3, -0.4, 0.8, -1.2};
  Config cfg;
  cfg.kind = Kind::pathwise_st;
  Selection sel{mask::Mode::bernoulli, 0, 0.5};
  Objective<double> f = [&](const Var<double>& m, Pass) { return multilinear(table, m); };
  Rng draw(21);
  Var<double> leaf(repeat(l0, 1), true);
  auto e = estimate(cfg, sel, leaf, 1, f, draw);
  EXPECT_FALSE(e.surrogate.valid());
  diffnet::backward(e.total());
  const auto& noise = e.sample.noise;
  const auto& hard = e.sample.hard;
  auto relaxed = [&](double l, std::size_t d) { return 1.0 / (1.0 + std::exp(-(l + noise[d]) / 0.5)); };
  auto G = [&](const std::vector<double>& v) {
    Tensor<double> m(Shape{1, D});
    for (std::size_t d = 0; d < D; ++d) m[d] = hard[d] + relaxed(v[d], d) - relaxed(l0[d], d);
    return multilinear(table, diffnet::constant(m)).value()[0];
  };
  EXPECT_LT(lex::test::max_rel_err(leaf.grad().storage(), lex::test::central_diff(G, l0)), 1e-6);
}

TEST(Gradest, RelaxedPassesAreLabelled) {
  std::vector<Pass> seen;
  Objective<double> f = [&](const Var<double>& m, Pass p) {
    seen.push_back(p);
    return diffnet::sum_rows(m);
  };
  Config cfg;
  Selection sel{mask::Mode::bernoulli, 0, 0.5};
  Rng rng(1);
  estimate_grad(cfg, sel, Tensor<double>(Shape{2, 3}, 0.0), 1, f, rng);
  EXPECT_EQ(seen, (std::vector<Pass>{Pass::hard, Pass::relaxed, Pass::relaxed_conditional}));
}

TEST(Gradest, GroupedObjectiveSumsScoresOverGroup) {
  // Objective over groups of 2 rows: value = sum of both rows' mask sums.
  Objective<double> f = [&](const Var<double>& m, Pass) { return diffnet::sum_groups(diffnet::sum_rows(m), 2); };
  Config cfg;
  cfg.kind = Kind::reinforce;
  Selection sel{mask::Mode::bernoulli, 0, 0.5};
  Rng rng(2);
  Var<double> leaf(Tensor<double>(Shape{4, 3}, 0.0), true);
  auto e = estimate(cfg, sel, leaf, 2, f, rng);
  EXPECT_EQ(e.objective.size(), 2u);
  diffnet::backward(e.total());
  // d/dl log p(z) = z - 0.5 at logit 0; coefficient is the group's value.
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t d = 0; d < 3; ++d)
      EXPECT_DOUBLE_EQ(leaf.grad()(r, d), e.objective.value()[r / 2] * (e.sample.hard(r, d) - 0.5));
}
