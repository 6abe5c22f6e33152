#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fedalign/matrix.hpp"

namespace fedalign {

enum class SimKind { cosine, dot, euclidean };

const char* to_string(SimKind k);
SimKind sim_kind_from_string(const std::string& s);

double l2_norm(const Vec& v);

// v / ||v||; throws DegenerateInputError on the zero vector.
Vec l2_normalize(const Vec& v);

// cosine = x.y / (||x|| ||y||), dot = sum x_i y_i,
// euclidean = sqrt(sum (x_i - y_i)^2), negated by default so that larger
// always means more similar when the value feeds a softmax.
double similarity(const Vec& x, const Vec& y, SimKind kind,
                  bool negate_euclidean = true);

// d similarity(x, y) / dx at the given point, same conventions as above.
// The euclidean gradient is defined as zero at x == y.
Vec similarity_grad_x(const Vec& x, const Vec& y, SimKind kind,
                      bool negate_euclidean = true);

// Softmax over the unmasked indices; masked positions are excluded from the
// support and come out exactly zero. Throws EmptySupportError when every
// index is masked.
Vec masked_softmax(const Vec& scores, const std::vector<std::size_t>& masked);

}  // namespace fedalign
