#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fedalign/matrix.hpp"
#include "fedalign/rng.hpp"

namespace fedalign {

// Low-rank adapter pair: effective weight change is gamma * b * a,
// with a (r x d2), b (d1 x r). b starts at zero so a fresh adapter is a
// no-op on the composed weight.
struct LoraDelta {
  Matrix a;
  Matrix b;
  double gamma = 0.25;

  std::size_t rank() const { return a.rows(); }
};

// An effective dense weight change for one layer.
using DenseDelta = Matrix;

// One adapted weight matrix: frozen backbone w0, the frozen residual carried
// over from previous rounds (init_offset), and the trainable adapter.
// Layers below the adapter starting index carry no `lora`.
struct LayerWeights {
  Matrix w0;
  DenseDelta init_offset;  // zero at round 0
  std::optional<LoraDelta> lora;
};

// Kaiming-uniform a (entries in +-sqrt(6/d2)), zero b.
LoraDelta init_lora(std::size_t d1, std::size_t d2, std::size_t r,
                    double gamma, Rng& rng);

// gamma * b * a
DenseDelta effective_delta(const LoraDelta& delta);

// w0 + init_offset [+ gamma * b * a]
Matrix compose_weight(const LayerWeights& layer);

// sum_j coeffs[j] * deltas[j], elementwise.
DenseDelta linear_combine(const std::vector<DenseDelta>& deltas,
                          const Vec& coeffs);

// Trainable scalars of one adapted matrix: r * (d1 + d2).
std::int64_t lora_param_count(std::size_t d1, std::size_t d2, std::size_t r);

// Serialized container for double matrices plus a scale factor.
// Layout (all little-endian): magic "FALD", u16 version, f64 gamma,
// u32 matrix count, then per matrix u32 rows, u32 cols, row-major f64s.
std::vector<std::uint8_t> write_fald(double gamma,
                                     const std::vector<const Matrix*>& mats);

struct FaldContent {
  double gamma = 0.0;
  std::vector<Matrix> matrices;
};

FaldContent read_fald(const std::vector<std::uint8_t>& bytes);

// A LoraDelta is stored as a two-matrix container [b, a].
std::vector<std::uint8_t> serialize_delta(const LoraDelta& delta);
LoraDelta deserialize_delta(const std::vector<std::uint8_t>& bytes);

}  // namespace fedalign
