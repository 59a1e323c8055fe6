#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "lex/dataset.hpp"
#include "lex/rng.hpp"

namespace lex::synth {

inline constexpr std::size_t kDim = 11;

enum class Name { S1, S2, S3 };

inline std::string to_string(Name n) {
  switch (n) {
    case Name::S1: return "S1";
    case Name::S2: return "S2";
    case Name::S3: return "S3";
  }
  return "?";
}

inline Name name_from_string(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  if (s == "S1") return Name::S1;
  if (s == "S2") return Name::S2;
  if (s == "S3") return Name::S3;
  throw ConfigError("unknown synthetic dataset '" + s + "'");
}

struct Options {
  /// Reads the e^{x_{-10}} term of f_C as exp(-x10); false gives exp(x10).
  bool fc_negated_x10 = true;
};

inline constexpr double kExpClamp = 30.0;

inline double clamped_exp(double a) { return std::exp(std::clamp(a, -kExpClamp, kExpClamp)); }

struct Branches {
  double f_a, f_b, f_c;
};

/// The three branch functions; x is 0-indexed (x[0] is feature 1).
inline Branches branch_functions(const double* x, const Options& opt = {}) {
  Branches b{};
  b.f_a = clamped_exp(x[0] * x[1]);
  double s = 0;
  for (int i = 2; i <= 5; ++i) s += x[i] * x[i];
  b.f_b = clamped_exp(s - 4.0);
  double e10 = clamped_exp(opt.fc_negated_x10 ? -x[9] : x[9]);
  b.f_c = clamped_exp(-10.0 * std::sin(0.2 * x[6]) + std::abs(x[7]) + x[8] + e10 - 2.4);
  return b;
}

/// f(x) for the dataset: the branch is chosen by the sign of feature 11 (x[10] >= 0 is the second branch).
inline double response(Name name, const double* x, const Options& opt = {}) {
  const auto b = branch_functions(x, opt);
  const bool neg = x[10] < 0.0;
  switch (name) {
    case Name::S1: return neg ? b.f_a : b.f_b;
    case Name::S2: return neg ? b.f_a : b.f_c;
    case Name::S3: return neg ? b.f_b : b.f_c;
  }
  return 1.0;
}

/// P(y = 1 | x) = 1 / (1 + f(x)).
inline double label_probability(Name name, const double* x, const Options& opt = {}) {
  return 1.0 / (1.0 + response(name, x, opt));
}

/// Features that generate the label, always including the control feature 11.
inline std::array<std::uint8_t, kDim> ground_truth_mask(const double* x, Name name) {
  std::array<std::uint8_t, kDim> z{};
  const bool neg = x[10] < 0.0;
  auto set = [&z](std::initializer_list<int> one_based) {
    for (int i : one_based) z[static_cast<std::size_t>(i - 1)] = 1;
  };
  auto fa = [&] { set({1, 2}); };
  auto fb = [&] { set({3, 4, 5, 6}); };
  auto fc = [&] { set({7, 8, 9, 10}); };
  switch (name) {
    case Name::S1: neg ? fa() : fb(); break;
    case Name::S2: neg ? fa() : fc(); break;
    case Name::S3: neg ? fb() : fc(); break;
  }
  z[10] = 1;
  return z;
}

/// n rows of iid standard-normal features with labels and ground-truth masks.
/// Features and labels come from separate streams of `seed`.
inline Dataset gen_synthetic(Name name, std::size_t n, std::uint64_t seed, Split split = Split::train,
                             const Options& opt = {}) {
  Dataset ds;
  ds.name = to_string(name);
  ds.seed = seed;
  ds.dim = kDim;
  ds.X.reserve(n * kDim);
  Rng feat = make_stream(seed, "synth/features");
  Rng lab = make_stream(seed, "synth/labels");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<double, kDim> x{};
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = normal(feat);
    const int y = uniform_open(lab) < label_probability(name, x.data(), opt) ? 1 : 0;
    auto z = ground_truth_mask(x.data(), name);
    ds.push_back(x.data(), y, z.data(), split);
  }
  return ds;
}

/// Train file (the last `val_fraction` of rows tagged val) and a separate test set.
struct Replicate {
  Dataset train;  // train + val rows
  Dataset test;
};

inline Replicate gen_replicate(Name name, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                               double val_fraction = 0.2, const Options& opt = {}) {
  Replicate r;
  r.train = gen_synthetic(name, n_train, seed, Split::train, opt);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n_train)));
  for (std::size_t i = n_train - std::min(n_val, n_train); i < n_train; ++i) r.train.split[i] = Split::val;
  // distinct stream family for test rows
  r.test = gen_synthetic(name, n_test, detail::splitmix64(seed ^ 0x7e57ULL), Split::test, opt);
  r.test.seed = seed;
  return r;
}

}  // namespace lex::synth
