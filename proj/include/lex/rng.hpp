#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace lex {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Independent named stream derived from a master seed. Streams with different
/// names never share state, so e.g. changing the number of imputation draws does
/// not perturb the mask noise.
inline Rng make_stream(std::uint64_t master_seed, std::string_view name) {
  std::uint64_t s = detail::splitmix64(master_seed ^ detail::splitmix64(detail::fnv1a(name)));
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                    static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32)};
  return Rng(seq);
}

/// Uniform on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  // 53 random bits, shifted half a step away from both ends.
  std::uint64_t bits = rng() >> 11;
  return (static_cast<double>(bits) + 0.5) * (1.0 / 9007199254740992.0);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

/// Standard Gumbel(0, 1) draw.
inline double standard_gumbel(Rng& rng) { return -std::log(-std::log(uniform_open(rng))); }

/// Standard logistic draw, log(u) - log(1-u).
inline double standard_logistic(Rng& rng) {
  double u = uniform_open(rng);
  return std::log(u) - std::log1p(-u);
}

}  // namespace lex
