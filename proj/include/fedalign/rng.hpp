#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fedalign {

// Counter-based deterministic PRNG with hierarchical splitting.
//
// A stream is identified by a 64-bit key derived from the seed and the path
// of split labels that produced it. Draws advance a counter and never affect
// the key, so splitting the same label path always yields the same child
// stream regardless of how many values were drawn in between. Sibling
// streams get distinct keys and are statistically independent for the
// purposes of this simulator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Derive an independent child stream. Const: does not disturb this stream.
  Rng split(std::string_view label) const;
  Rng split(std::uint64_t lane) const;

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double next_double();

  double uniform(double lo, double hi);

  // Unbiased integer in [0, n); n must be > 0.
  std::size_t next_below(std::size_t n);

  // N(mean, stddev^2) via Box-Muller; stddev = 0 returns mean exactly.
  double gaussian(double mean, double stddev);

  // Symmetric Dirichlet over k coordinates; throws ParameterError on
  // alpha <= 0 or k == 0. Entries are nonnegative and sum to 1.
  std::vector<double> dirichlet(double alpha, std::size_t k);

  // Fisher-Yates using this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::swap(v[i], v[next_below(i + 1)]);
    }
  }

 private:
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  double gamma_draw(double alpha);

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace fedalign
