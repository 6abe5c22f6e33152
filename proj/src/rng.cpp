#include "fedalign/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fedalign/errors.hpp"

namespace fedalign {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer; also used as the per-draw PRF.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(mix64(seed + kGolden)), counter_(0) {}

Rng Rng::split(std::string_view label) const {
  return Rng(mix64(key_ ^ mix64(fnv1a(label) + kGolden)), 0);
}

Rng Rng::split(std::uint64_t lane) const {
  return Rng(mix64(key_ ^ mix64(lane * kGolden + 0x6a09e667f3bcc909ULL)), 0);
}

std::uint64_t Rng::next_u64() {
  counter_ += kGolden;
  return mix64(key_ ^ mix64(counter_));
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

std::size_t Rng::next_below(std::size_t n) {
  if (n == 0) throw ParameterError("next_below: n must be positive");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<std::size_t>(x % bound);
}

double Rng::gaussian(double mean, double stddev) {
  if (stddev < 0.0) throw ParameterError("gaussian: stddev must be >= 0");
  if (stddev == 0.0) return mean;
  // Box-Muller; u1 shifted into (0, 1] to keep the log finite.
  const double u1 = 1.0 - next_double();
  const double u2 = next_double();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * radius * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gamma_draw(double alpha) {
  // Marsaglia-Tsang squeeze; the alpha < 1 case boosts through alpha + 1.
  if (alpha < 1.0) {
    const double boosted = gamma_draw(alpha + 1.0);
    const double u = 1.0 - next_double();  // (0, 1]
    return boosted * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = gaussian(0.0, 1.0);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - next_double();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> Rng::dirichlet(double alpha, std::size_t k) {
  if (alpha <= 0.0) {
    throw ParameterError("dirichlet: alpha must be positive, got " +
                         std::to_string(alpha));
  }
  if (k == 0) throw ParameterError("dirichlet: k must be >= 1");
  std::vector<double> draws(k);
  // Tiny alpha can underflow every draw to zero; redraw a bounded number of
  // times before giving up.
  for (int attempt = 0; attempt < 64; ++attempt) {
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      draws[i] = gamma_draw(alpha);
      sum += draws[i];
    }
    if (sum > 0.0) {
      for (double& d : draws) d /= sum;
      return draws;
    }
  }
  throw ParameterError("dirichlet: all gamma draws underflowed to zero");
}

}  // namespace fedalign
