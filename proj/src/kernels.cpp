#include "fedalign/kernels.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "fedalign/errors.hpp"

namespace fedalign::kernels {

namespace scalar {

void axpy(double* y, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scal(double* y, double alpha, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] *= alpha;
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bias1, double bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
    p[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
  }
}

}  // namespace scalar

namespace {

Backend detect_backend() {
#if defined(FEDALIGN_HAVE_AVX2)
  if (__builtin_cpu_supports("avx2")) return Backend::avx2;
#endif
#if defined(FEDALIGN_HAVE_NEON)
  return Backend::neon;
#endif
  return Backend::scalar;
}

std::atomic<int> g_forced{-1};

Backend resolve() {
  const int forced = g_forced.load(std::memory_order_relaxed);
  if (forced >= 0) return static_cast<Backend>(forced);
  static const Backend detected = detect_backend();
  return detected;
}

}  // namespace

const char* name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

bool supported(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if defined(FEDALIGN_HAVE_AVX2)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Backend::neon:
#if defined(FEDALIGN_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend active() { return resolve(); }

void force(Backend b) {
  if (!supported(b)) {
    throw ParameterError(std::string("kernel backend not supported here: ") +
                         name(b));
  }
  g_forced.store(static_cast<int>(b), std::memory_order_relaxed);
}

void reset() { g_forced.store(-1, std::memory_order_relaxed); }

void axpy(double* y, double alpha, const double* x, std::size_t n) {
  switch (resolve()) {
#if defined(FEDALIGN_HAVE_AVX2)
    case Backend::avx2: return avx2::axpy(y, alpha, x, n);
#endif
#if defined(FEDALIGN_HAVE_NEON)
    case Backend::neon: return neon::axpy(y, alpha, x, n);
#endif
    default: return scalar::axpy(y, alpha, x, n);
  }
}

void scal(double* y, double alpha, std::size_t n) {
  switch (resolve()) {
#if defined(FEDALIGN_HAVE_AVX2)
    case Backend::avx2: return avx2::scal(y, alpha, n);
#endif
#if defined(FEDALIGN_HAVE_NEON)
    case Backend::neon: return neon::scal(y, alpha, n);
#endif
    default: return scalar::scal(y, alpha, n);
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  switch (resolve()) {
#if defined(FEDALIGN_HAVE_AVX2)
    case Backend::avx2: return avx2::dot(a, b, n);
#endif
#if defined(FEDALIGN_HAVE_NEON)
    case Backend::neon: return neon::dot(a, b, n);
#endif
    default: return scalar::dot(a, b, n);
  }
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  switch (resolve()) {
#if defined(FEDALIGN_HAVE_AVX2)
    case Backend::avx2: return avx2::squared_distance(a, b, n);
#endif
#if defined(FEDALIGN_HAVE_NEON)
    case Backend::neon: return neon::squared_distance(a, b, n);
#endif
    default: return scalar::squared_distance(a, b, n);
  }
}

void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bias1, double bias2) {
  switch (resolve()) {
#if defined(FEDALIGN_HAVE_AVX2)
    case Backend::avx2:
      return avx2::adam_update(p, m, v, g, n, lr, beta1, beta2, eps, bias1,
                               bias2);
#endif
#if defined(FEDALIGN_HAVE_NEON)
    case Backend::neon:
      return neon::adam_update(p, m, v, g, n, lr, beta1, beta2, eps, bias1,
                               bias2);
#endif
    default:
      return scalar::adam_update(p, m, v, g, n, lr, beta1, beta2, eps, bias1,
                                 bias2);
  }
}

}  // namespace fedalign::kernels
