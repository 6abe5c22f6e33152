// NEON variants of the dense kernels (aarch64). Same contract as the AVX2
// file: elementwise kernels use mul+add and stay bit-identical to the scalar
// reference; reductions reassociate across two lanes.

#include <arm_neon.h>

#include <cmath>
#include <cstddef>

#include "fedalign/kernels.hpp"

namespace fedalign::kernels::neon {

void axpy(double* y, double alpha, const double* x, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i),
                               vmulq_f64(va, vld1q_f64(x + i))));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scal(double* y, double alpha, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vmulq_f64(vld1q_f64(y + i), va));
  }
  for (; i < n; ++i) y[i] *= alpha;
}

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  }
  double result = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) result += a[i] * b[i];
  return result;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
    acc = vaddq_f64(acc, vmulq_f64(d, d));
  }
  double result = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    result += d * d;
  }
  return result;
}

void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bias1, double bias2) {
  const float64x2_t vb1 = vdupq_n_f64(beta1);
  const float64x2_t vb2 = vdupq_n_f64(beta2);
  const float64x2_t vc1 = vdupq_n_f64(1.0 - beta1);
  const float64x2_t vc2 = vdupq_n_f64(1.0 - beta2);
  const float64x2_t vlr = vdupq_n_f64(lr);
  const float64x2_t veps = vdupq_n_f64(eps);
  const float64x2_t vbias1 = vdupq_n_f64(bias1);
  const float64x2_t vbias2 = vdupq_n_f64(bias2);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t vg = vld1q_f64(g + i);
    const float64x2_t vm =
        vaddq_f64(vmulq_f64(vb1, vld1q_f64(m + i)), vmulq_f64(vc1, vg));
    const float64x2_t vv = vaddq_f64(vmulq_f64(vb2, vld1q_f64(v + i)),
                                     vmulq_f64(vc2, vmulq_f64(vg, vg)));
    vst1q_f64(m + i, vm);
    vst1q_f64(v + i, vv);
    const float64x2_t mhat = vdivq_f64(vm, vbias1);
    const float64x2_t denom =
        vaddq_f64(vsqrtq_f64(vdivq_f64(vv, vbias2)), veps);
    const float64x2_t step = vdivq_f64(vmulq_f64(vlr, mhat), denom);
    vst1q_f64(p + i, vsubq_f64(vld1q_f64(p + i), step));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
    p[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
  }
}

}  // namespace fedalign::kernels::neon
