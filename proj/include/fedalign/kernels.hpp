#pragma once

#include <cstddef>

namespace fedalign::kernels {

// Dense inner-loop primitives behind the linear algebra layer.
// A scalar reference implementation is always available; on x86-64 an AVX2
// variant and on aarch64 a NEON variant are compiled in and selected at
// runtime. Elementwise kernels (axpy, scal, adam_update) produce bit-identical
// results across backends; reduction kernels (dot, squared_distance) may
// differ in the last ulps because lane accumulation reorders the sum.
enum class Backend { scalar, avx2, neon };

const char* name(Backend b);
bool supported(Backend b);

// Currently active backend (auto-detected on first use unless forced).
Backend active();

// Pin a specific backend; throws ParameterError if not supported on this CPU.
void force(Backend b);

// Return to auto-detection.
void reset();

// y[i] += alpha * x[i]
void axpy(double* y, double alpha, const double* x, std::size_t n);

// y[i] *= alpha
void scal(double* y, double alpha, std::size_t n);

// sum_i a[i] * b[i]
double dot(const double* a, const double* b, std::size_t n);

// sum_i (a[i] - b[i])^2
double squared_distance(const double* a, const double* b, std::size_t n);

// Bias-corrected Adam step over one flat parameter array.
// m = beta1*m + (1-beta1)*g; v = beta2*v + (1-beta2)*g^2;
// p -= lr * (m/bias1) / (sqrt(v/bias2) + eps)
// bias1 = 1 - beta1^t and bias2 = 1 - beta2^t are supplied by the caller.
void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bias1, double bias2);

namespace scalar {
void axpy(double* y, double alpha, const double* x, std::size_t n);
void scal(double* y, double alpha, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bias1, double bias2);
}  // namespace scalar

#ifdef FEDALIGN_HAVE_AVX2
namespace avx2 {
void axpy(double* y, double alpha, const double* x, std::size_t n);
void scal(double* y, double alpha, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bias1, double bias2);
}  // namespace avx2
#endif

#ifdef FEDALIGN_HAVE_NEON
namespace neon {
void axpy(double* y, double alpha, const double* x, std::size_t n);
void scal(double* y, double alpha, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bias1, double bias2);
}  // namespace neon
#endif

}  // namespace fedalign::kernels
