#include "fedalign/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fedalign/errors.hpp"
#include "fedalign/kernels.hpp"

namespace fedalign {

const char* to_string(SimKind k) {
  switch (k) {
    case SimKind::cosine: return "cosine";
    case SimKind::dot: return "dot";
    case SimKind::euclidean: return "euclidean";
  }
  return "unknown";
}

SimKind sim_kind_from_string(const std::string& s) {
  if (s == "cosine") return SimKind::cosine;
  if (s == "dot") return SimKind::dot;
  if (s == "euclidean") return SimKind::euclidean;
  throw ParameterError("unknown similarity kind: " + s);
}

double l2_norm(const Vec& v) {
  return std::sqrt(kernels::dot(v.data(), v.data(), v.size()));
}

Vec l2_normalize(const Vec& v) {
  const double norm = l2_norm(v);
  if (norm <= 0.0) {
    throw DegenerateInputError("l2_normalize: zero vector");
  }
  Vec out(v);
  kernels::scal(out.data(), 1.0 / norm, out.size());
  return out;
}

namespace {

void check_dims(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) {
    throw ShapeError("similarity: dims " + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  }
}

}  // namespace

double similarity(const Vec& x, const Vec& y, SimKind kind,
                  bool negate_euclidean) {
  check_dims(x, y);
  switch (kind) {
    case SimKind::cosine: {
      const double nx = l2_norm(x);
      const double ny = l2_norm(y);
      if (nx <= 0.0 || ny <= 0.0) {
        throw DegenerateInputError("cosine similarity: zero vector");
      }
      return kernels::dot(x.data(), y.data(), x.size()) / (nx * ny);
    }
    case SimKind::dot:
      return kernels::dot(x.data(), y.data(), x.size());
    case SimKind::euclidean: {
      const double d =
          std::sqrt(kernels::squared_distance(x.data(), y.data(), x.size()));
      return negate_euclidean ? -d : d;
    }
  }
  throw ParameterError("similarity: unknown kind");
}

Vec similarity_grad_x(const Vec& x, const Vec& y, SimKind kind,
                      bool negate_euclidean) {
  check_dims(x, y);
  switch (kind) {
    case SimKind::cosine: {
      const double nx = l2_norm(x);
      const double ny = l2_norm(y);
      if (nx <= 0.0 || ny <= 0.0) {
        throw DegenerateInputError("cosine gradient: zero vector");
      }
      const double xy = kernels::dot(x.data(), y.data(), x.size());
      Vec g(x.size(), 0.0);
      kernels::axpy(g.data(), 1.0 / (nx * ny), y.data(), g.size());
      kernels::axpy(g.data(), -xy / (nx * nx * nx * ny), x.data(), g.size());
      return g;
    }
    case SimKind::dot:
      return y;
    case SimKind::euclidean: {
      const double d =
          std::sqrt(kernels::squared_distance(x.data(), y.data(), x.size()));
      Vec g(x.size(), 0.0);
      if (d < 1e-12) return g;  // nonsmooth point, treat as flat
      const double s = (negate_euclidean ? -1.0 : 1.0) / d;
      kernels::axpy(g.data(), s, x.data(), g.size());
      kernels::axpy(g.data(), -s, y.data(), g.size());
      return g;
    }
  }
  throw ParameterError("similarity gradient: unknown kind");
}

Vec masked_softmax(const Vec& scores, const std::vector<std::size_t>& masked) {
  std::vector<bool> is_masked(scores.size(), false);
  for (const std::size_t idx : masked) {
    if (idx >= scores.size()) {
      throw ParameterError("masked_softmax: mask index out of range");
    }
    is_masked[idx] = true;
  }
  double max_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!is_masked[i]) max_score = std::max(max_score, scores[i]);
  }
  if (max_score == -std::numeric_limits<double>::infinity()) {
    throw EmptySupportError("masked_softmax: all indices masked");
  }
  Vec out(scores.size(), 0.0);
  double denom = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (is_masked[i]) continue;
    out[i] = std::exp(scores[i] - max_score);
    denom += out[i];
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!is_masked[i]) out[i] /= denom;
  }
  return out;
}

}  // namespace fedalign
