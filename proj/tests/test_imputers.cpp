#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lex/imputers/imputer.hpp"
#include "lex/synthgen.hpp"
#include "support.hpp"

using namespace lex;
using namespace lex::impute;

namespace {

double normal_pdf(double x, double m, double v) {
  return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2 * std::numbers::pi * v);
}

GmmParams two_component_fixture() {
  return GmmParams{2, 2, {0.3, 0.7}, {-1.0, 2.0, 1.5, -0.5}, {0.5, 0.8, 1.2, 0.3}};
}

std::vector<double> two_clusters_1d(std::size_t n, Rng& rng) {
  std::normal_distribution<double> noise(0, 0.5);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = (i % 2 ? 5.0 : -5.0) + noise(rng);
  return x;
}

std::vector<double> grid_data(std::size_t n, std::size_t D, int V, Rng& rng) {
  std::vector<double> x(n * D);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = i % 2 ? 0.25 * V : 0.7 * V;
    for (std::size_t d = 0; d < D; ++d)
      x[i * D + d] = static_cast<double>(sample_discretized_logistic(c, 0.04 * V, V, rng));
  }
  return x;
}

}  // namespace

// --- GMM / EM --------------------------------------------------------------

TEST(GmmEm, SingleComponentIsColumnMoments) {
  Rng rng(1);
  auto X = lex::test::random_tensor({500, 3}, rng, -2, 4).storage();
  auto p = fit_gmm_em(MatrixView(X, 3), 1, 7);
  for (std::size_t d = 0; d < 3; ++d) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 500; ++i) m += X[i * 3 + d];
    m /= 500;
    for (std::size_t i = 0; i < 500; ++i) v += std::pow(X[i * 3 + d] - m, 2);
    v /= 500;
    EXPECT_NEAR(p.mean(0)[d], m, 1e-9);
    EXPECT_NEAR(p.var(0)[d], std::max(v, kVarianceFloor), 1e-9);
  }
  EXPECT_DOUBLE_EQ(p.weights[0], 1.0);
}

TEST(GmmEm, RecoversSeparatedClustersWithMonotoneTrace) {
  Rng rng(2);
  auto X = two_clusters_1d(2000, rng);
  FitReport rep;
  auto p = fit_gmm_em(MatrixView(X, 1), 2, 3, {}, &rep);
  std::vector<double> means{p.mean(0)[0], p.mean(1)[0]};
  std::sort(means.begin(), means.end());
  EXPECT_NEAR(means[0], -5.0, 0.2);
  EXPECT_NEAR(means[1], 5.0, 0.2);
  for (std::size_t i = 1; i < rep.loglik_trace.size(); ++i)
    EXPECT_GE(rep.loglik_trace[i], rep.loglik_trace[i - 1] - 1e-8);
}

TEST(GmmEm, DuplicateRowsDoNotBreakFit) {
  std::vector<double> X(200, 1.0);
  FitReport rep;
  auto p = fit_gmm_em(MatrixView(X, 2), 3, 1, {}, &rep);
  for (double v : p.vars) EXPECT_GE(v, kVarianceFloor);
  EXPECT_NEAR(std::accumulate(p.weights.begin(), p.weights.end(), 0.0), 1.0, 1e-12);
}

TEST(GmmPosterior, PriorWhenNothingObserved) {
  auto p = two_component_fixture();
  std::vector<double> x{0.3, 0.1};
  std::vector<std::uint8_t> none{0, 0};
  auto post = gmm_component_posterior(p, x.data(), none.data());
  EXPECT_EQ(post, p.weights);
}

TEST(GmmPosterior, SingleComponentIsOne) {
  GmmParams p{1, 2, {1.0}, {0.0, 0.0}, {1.0, 1.0}};
  std::vector<double> x{0.3, 0.1};
  std::vector<std::uint8_t> z{1, 0};
  EXPECT_EQ(gmm_component_posterior(p, x.data(), z.data()), std::vector<double>{1.0});
}

TEST(GmmPosterior, MatchesDensityRatio) {
  GmmParams p{2, 1, {0.4, 0.6}, {-1.0, 2.0}, {0.7, 1.9}};
  const double x = 0.35;
  std::vector<std::uint8_t> z{1};
  auto post = gmm_component_posterior(p, &x, z.data());
  const double a = 0.4 * normal_pdf(x, -1.0, 0.7), b = 0.6 * normal_pdf(x, 2.0, 1.9);
  EXPECT_NEAR(post[0], a / (a + b), 1e-10);
  EXPECT_NEAR(post[1], b / (a + b), 1e-10);
}

TEST(ResampleTable, SingleRowAndNormalization) {
  auto p = two_component_fixture();
  std::vector<double> one{0.1, 0.2};
  auto t = build_resample_table(p, MatrixView(one, 2));
  EXPECT_EQ(t.row(0)[0], 1.0);
  EXPECT_EQ(t.row(1)[0], 1.0);

  Rng rng(3);
  auto val = lex::test::random_tensor({50, 2}, rng, -3, 3).storage();
  auto t2 = build_resample_table(p, MatrixView(val, 2));
  for (std::size_t k = 0; k < 2; ++k) {
    auto r = t2.row(k);
    EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-10);
  }
}

TEST(ResampleTable, CloserRowGetsMoreWeight) {
  GmmParams p{1, 1, {1.0}, {0.0}, {1.0}};
  std::vector<double> val{0.5, 1.5};
  auto t = build_resample_table(p, MatrixView(val, 1));
  EXPECT_GT(t.row(0)[0], t.row(0)[1]);
}

// --- KMeans -----------------------------------------------------------------

TEST(KMeans, SingleCenterIsMean) {
  Rng rng(4);
  auto X = lex::test::random_tensor({100, 2}, rng).storage();
  auto km = fit_kmeans(MatrixView(X, 2), 1, 1);
  for (std::size_t d = 0; d < 2; ++d) {
    double m = 0;
    for (std::size_t i = 0; i < 100; ++i) m += X[i * 2 + d];
    EXPECT_NEAR(km.center(0)[d], m / 100, 1e-12);
  }
}

TEST(KMeans, TwoClustersPartitionAndMonotoneWcss) {
  Rng rng(5);
  auto X = two_clusters_1d(400, rng);
  auto km = fit_kmeans(MatrixView(X, 1), 2, 9);
  for (std::size_t i = 0; i < 400; ++i) EXPECT_EQ(km.assignment[i], km.assignment[i % 2]);
  EXPECT_NE(km.assignment[0], km.assignment[1]);
  for (std::size_t i = 1; i < km.wcss_trace.size(); ++i) EXPECT_LE(km.wcss_trace[i], km.wcss_trace[i - 1] + 1e-9);
}

// --- Discretized logistics ---------------------------------------------------

TEST(DiscretizedLogistic, PmfSumsToOneOverGrid) {
  Rng rng(6);
  std::uniform_real_distribution<double> mu(-20, 280), ls(-3, 4);
  for (int t = 0; t < 200; ++t) {
    const double m = mu(rng), s = std::exp(ls(rng));
    double total = 0, total_log = 0;
    for (int x = 0; x <= 255; ++x) {
      total += discretized_logistic_pmf(x, m, s, 255);
      total_log += std::exp(discretized_logistic_logpmf(x, m, s, 255));
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_NEAR(total_log, 1.0, 1e-12);
  }
}

TEST(DiscretizedLogistic, LogPmfMatchesDirectEvaluation) {
  Rng rng(7);
  std::uniform_real_distribution<double> mu(0, 255), ls(-1, 3);
  std::uniform_int_distribution<int> xs(0, 255);
  auto cdf = [](double e, double m, double s) { return 1.0 / (1.0 + std::exp(-(e - m) / s)); };
  for (int t = 0; t < 1000; ++t) {
    const double m = mu(rng), s = std::exp(ls(rng));
    const int x = xs(rng);
    // upper tail through survival functions to avoid cancellation
    const bool upper = x > m;
    double mass;
    if (!upper) {
      const double hi = x == 255 ? 1.0 : cdf(x + 0.5, m, s);
      const double lo = x == 0 ? 0.0 : cdf(x - 0.5, m, s);
      mass = hi - lo;
    } else {
      const double sf_lo = x == 0 ? 1.0 : 1.0 / (1.0 + std::exp((x - 0.5 - m) / s));
      const double sf_hi = x == 255 ? 0.0 : 1.0 / (1.0 + std::exp((x + 0.5 - m) / s));
      mass = sf_lo - sf_hi;
    }
    if (mass < 1e-250) continue;
    EXPECT_NEAR(discretized_logistic_logpmf(x, m, s, 255), std::log(mass), 1e-9 * std::max(1.0, std::abs(std::log(mass))));
  }
}

TEST(DiscretizedLogistic, SharpScaleConcentrates) {
  const double a = discretized_logistic_pmf(127, 127.5, 1e-3, 255);
  const double b = discretized_logistic_pmf(128, 127.5, 1e-3, 255);
  EXPECT_NEAR(a + b, 1.0, 1e-12);
  EXPECT_THROW(discretized_logistic_logpmf(256, 1, 1, 255), ContractError);
  EXPECT_THROW(discretized_logistic_logpmf(-1, 1, 1, 255), ContractError);
}

TEST(LogisticsFit, SingleComponentMatchesHistogram) {
  Rng rng(8);
  const int V = 31;
  std::vector<double> X(4000);
  for (auto& v : X) v = sample_discretized_logistic(12.0, 2.5, V, rng);
  auto p = fit_logistics(MatrixView(X, 1), 1, 1, {V, 10});
  std::vector<double> hist(V + 1, 0.0);
  for (double v : X) hist[static_cast<std::size_t>(v)] += 1.0 / 4000.0;
  double tv = 0;
  for (int x = 0; x <= V; ++x) tv += std::abs(hist[x] - discretized_logistic_pmf(x, p.centers[0], p.scales[0], V));
  EXPECT_LE(0.5 * tv, 0.1);
  std::vector<double> sorted = X;
  std::nth_element(sorted.begin(), sorted.begin() + 2000, sorted.end());
  EXPECT_NEAR(p.centers[0], sorted[2000], 1.0);
}

TEST(LogisticsFit, SmoothedTraceIsNonDecreasing) {
  Rng rng(9);
  auto X = grid_data(600, 3, 255, rng);
  FitReport rep;
  fit_logistics(MatrixView(X, 3), 2, 4, {255, 25}, &rep);
  ASSERT_EQ(rep.loglik_trace.size(), 26u);
  auto block = [&](std::size_t b) {
    double s = 0;
    for (std::size_t i = 1 + 5 * b; i < 6 + 5 * b; ++i) s += rep.loglik_trace[i];
    return s / 5;
  };
  for (std::size_t b = 1; b < 5; ++b) EXPECT_GE(block(b), block(b - 1) - 1e-3);
  EXPECT_GE(rep.loglik_trace.back(), rep.loglik_trace.front());
}

TEST(LogisticsFit, RepeatedRowPutsModeThere) {
  std::vector<double> X;
  for (int i = 0; i < 50; ++i) X.insert(X.end(), {10.0, 200.0});
  auto p = fit_logistics(MatrixView(X, 2), 1, 1, {255, 5});
  for (std::size_t d = 0; d < 2; ++d) {
    int mode = 0;
    double best = -1;
    for (int x = 0; x <= 255; ++x) {
      const double v = discretized_logistic_pmf(x, p.centers[d], p.scales[d], 255);
      if (v > best) best = v, mode = x;
    }
    EXPECT_EQ(mode, static_cast<int>(X[d]));
  }
}

TEST(LogisticsFit, Errors) {
  std::vector<double> same(20, 3.0);
  EXPECT_THROW(fit_logistics(MatrixView(same, 2), 2, 1, {255, 2}), ConfigError);
  std::vector<double> off{0.5, 1.0};
  EXPECT_THROW(fit_logistics(MatrixView(off, 1), 1, 1, {255, 2}), ContractError);
}

// --- Imputer ----------------------------------------------------------------

TEST(Imputer, UnfittedIsStateError) {
  Imputer imp;
  std::vector<double> x{1, 2};
  std::vector<std::uint8_t> z{1, 0};
  Rng rng(1);
  EXPECT_THROW(imp.impute(x, z, rng), StateError);
}

TEST(Imputer, ConstantZeroFillsZeros) {
  auto imp = Imputer::make_stateless({Kind::constant, 0.0}, 4);
  Rng rng(1);
  std::vector<double> x{1, 2, 3, 4};
  std::vector<std::uint8_t> none(4, 0);
  EXPECT_EQ(imp.impute(x, none, rng), std::vector<double>(4, 0.0));
  EXPECT_FALSE(imp.stochastic());
}

TEST(Imputer, GmmUnconditionalMeanIsMixtureMean) {
  auto imp = Imputer::from_gmm(two_component_fixture());
  Rng rng(2);
  std::vector<double> x{0, 0};
  std::vector<std::uint8_t> none{0, 0};
  const int n = 100000;
  std::vector<double> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    auto v = imp.impute(x, none, rng);
    a[i] = v[0];
    b[i] = v[1];
  }
  auto ma = lex::test::mean_se(a), mb = lex::test::mean_se(b);
  EXPECT_LT(std::abs(ma.mean - (0.3 * -1.0 + 0.7 * 1.5)), 4 * ma.se);
  EXPECT_LT(std::abs(mb.mean - (0.3 * 2.0 + 0.7 * -0.5)), 4 * mb.se);
}

TEST(Imputer, GmmConditionalMomentsMatchClosedForm) {
  const auto p = two_component_fixture();
  auto imp = Imputer::from_gmm(p);
  Rng rng(3);
  std::vector<double> x{0.4, 99.0};
  std::vector<std::uint8_t> z{1, 0};
  const double w0 = 0.3 * normal_pdf(0.4, -1.0, 0.5), w1 = 0.7 * normal_pdf(0.4, 1.5, 1.2);
  const double a = w0 / (w0 + w1), b = 1 - a;
  const double mean = a * 2.0 + b * -0.5;
  const double second = a * (0.8 + 4.0) + b * (0.3 + 0.25);
  const double var = second - mean * mean;
  const int n = 100000;
  std::vector<double> v(n), sq(n);
  for (int i = 0; i < n; ++i) {
    auto out = imp.impute(x, z, rng);
    EXPECT_EQ(out[0], 0.4);
    v[i] = out[1];
    sq[i] = (out[1] - mean) * (out[1] - mean);
  }
  auto m = lex::test::mean_se(v), s = lex::test::mean_se(sq);
  EXPECT_LT(std::abs(m.mean - mean), 4 * m.se);
  EXPECT_LT(std::abs(s.mean - var), 4 * s.se);
}

TEST(Imputer, MarginalMatchesValidationEmpirical) {
  auto rep = synth::gen_replicate(synth::Name::S3, 500, 10, 5);
  auto imp = Imputer::fit({Kind::marginal}, rep.train);
  auto val = rep.train.subset(Split::val);
  Rng rng(4);
  std::vector<double> x(11, 0.0);
  std::vector<std::uint8_t> z(11, 0);
  const int n = 10000;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) draws[i] = imp.impute(x, z, rng)[2];
  std::vector<double> ref;
  for (std::size_t i = 0; i < val.size(); ++i) ref.push_back(val.row(i)[2]);
  std::sort(draws.begin(), draws.end());
  std::sort(ref.begin(), ref.end());
  // two-sample KS statistic against the 1% critical value
  double ks = 0;
  for (double t : ref) {
    const double fa = static_cast<double>(std::upper_bound(draws.begin(), draws.end(), t) - draws.begin()) / n;
    const double fb = static_cast<double>(std::upper_bound(ref.begin(), ref.end(), t) - ref.begin()) / ref.size();
    ks = std::max(ks, std::abs(fa - fb));
  }
  const double crit = 1.628 * std::sqrt((n + ref.size()) / (static_cast<double>(n) * ref.size()));
  EXPECT_LT(ks, crit);
}

// Every kind, random (x, z): observed coordinates are returned unchanged.
TEST(Imputer, ObservedFeaturesPreservedForAllKinds) {
  Rng data_rng(5);
  auto grid = grid_data(300, 4, 255, data_rng);
  std::vector<double> cont = lex::test::random_tensor({300, 4}, data_rng, -2, 2).storage();
  std::vector<Imputer> imps;
  for (Kind k : kAllKinds) {
    Spec s;
    s.kind = k;
    s.components = 3;
    s.logistics_epochs = 3;
    const auto& X = uses_logistics(k) ? grid : cont;
    imps.push_back(Imputer::fit(s, MatrixView(X.data(), 240, 4), MatrixView(X.data() + 240 * 4, 60, 4)));
  }
  Rng rng(6);
  std::bernoulli_distribution coin(0.5);
  std::size_t violations = 0;
  for (int t = 0; t < 10000; ++t) {
    const auto& imp = imps[static_cast<std::size_t>(t) % imps.size()];
    std::vector<double> x(4);
    std::vector<std::uint8_t> z(4);
    for (std::size_t d = 0; d < 4; ++d) {
      x[d] = uses_logistics(imp.kind()) ? std::floor(std::uniform_real_distribution<double>(0, 256)(rng))
                                        : std::normal_distribution<double>(0, 3)(rng);
      z[d] = coin(rng);
    }
    auto out = imp.impute(x, z, rng);
    for (std::size_t d = 0; d < 4; ++d) violations += z[d] && out[d] != x[d];
  }
  EXPECT_EQ(violations, 0u);
}

TEST(Imputer, AllObservedReturnsInput) {
  auto rep = synth::gen_replicate(synth::Name::S1, 200, 10, 5);
  Rng rng(7);
  std::vector<std::uint8_t> all(11, 1);
  for (Kind k : {Kind::gaussian_std, Kind::gmm, Kind::kmeans_dataset, Kind::gmm_dataset}) {
    Spec s;
    s.kind = k;
    s.components = 2;
    auto imp = Imputer::fit(s, rep.train);
    std::vector<double> x(rep.train.row(0), rep.train.row(0) + 11);
    EXPECT_EQ(imp.impute(x, all, rng), x);
  }
}

TEST(Imputer, KMeansDatasetDrawsFromNearestCluster) {
  std::vector<double> train, val;
  for (int i = 0; i < 100; ++i) train.insert(train.end(), {i % 2 ? 10.0 : -10.0, i % 2 ? 1.0 : -1.0});
  for (int i = 0; i < 40; ++i) val.insert(val.end(), {i % 2 ? 10.0 : -10.0, i % 2 ? 1.0 : -1.0});
  Spec s;
  s.kind = Kind::kmeans_dataset;
  s.components = 2;
  auto imp = Imputer::fit(s, MatrixView(train, 2), MatrixView(val, 2));
  Rng rng(8);
  std::vector<double> x{9.0, 0.0};
  std::vector<std::uint8_t> z{1, 0};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(imp.impute(x, z, rng)[1], 1.0);
}

TEST(Imputer, JsonRoundTrip) {
  auto rep = synth::gen_replicate(synth::Name::S3, 300, 10, 6);
  for (Kind k : kAllKinds) {
    if (uses_logistics(k)) continue;
    Spec s;
    s.kind = k;
    s.components = 2;
    auto imp = Imputer::fit(s, rep.train);
    auto back = Imputer::from_json(nlohmann::json::parse(imp.to_json().dump()));
    EXPECT_EQ(back, imp) << to_string(k);
    Rng r1(3), r2(3);
    std::vector<double> x(rep.train.row(1), rep.train.row(1) + 11);
    std::vector<std::uint8_t> z{1, 0, 1, 0, 1, 0, 0, 0, 1, 1, 0};
    EXPECT_EQ(imp.impute(x, z, r1), back.impute(x, z, r2));
  }
  EXPECT_THROW(Imputer::from_json(nlohmann::json{{"format", "other"}}), ParseError);
}

TEST(Imputer, KindNames) {
  for (Kind k : kAllKinds) EXPECT_EQ(kind_from_string(to_string(k)), k);
  EXPECT_THROW(kind_from_string("vaeac"), ConfigError);
}
