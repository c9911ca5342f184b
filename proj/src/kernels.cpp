#include "nmt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace nmt {
inline namespace NMT_PRECISION_NS {
namespace kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

constexpr Real kInvSqrt2 = static_cast<Real>(0.70710678118654752440);
constexpr Real kInvSqrt2Pi = static_cast<Real>(0.39894228040143267794);

// Register tile: 4 rows of A against a 16-wide strip of B. Each element of
// C is a single running sum over p in ascending order, added to C once.
constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 16;
// Rows handed to one thread at a time; the B strip for a chunk stays cached.
constexpr std::size_t kRowChunk = 64;

inline void tile_full(std::size_t k, const Real* a, std::size_t lda, const Real* b, std::size_t ldb,
                      Real* c, std::size_t ldc) {
  Real acc[kMr][kNr] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const Real* bp = b + p * ldb;
    for (std::size_t r = 0; r < kMr; ++r) {
      const Real s = a[r * lda + p];
#pragma omp simd
      for (std::size_t j = 0; j < kNr; ++j) acc[r][j] += s * bp[j];
    }
  }
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t j = 0; j < kNr; ++j) c[r * ldc + j] += acc[r][j];
}

inline void tile_edge(std::size_t mr, std::size_t nr, std::size_t k, const Real* a, std::size_t lda,
                      const Real* b, std::size_t ldb, Real* c, std::size_t ldc) {
  Real acc[kMr][kNr] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const Real* bp = b + p * ldb;
    for (std::size_t r = 0; r < mr; ++r) {
      const Real s = a[r * lda + p];
      for (std::size_t j = 0; j < nr; ++j) acc[r][j] += s * bp[j];
    }
  }
  for (std::size_t r = 0; r < mr; ++r)
    for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] += acc[r][j];
}

// C[M,N] += A[M,K] * B[K,N], all row-major and contiguous.
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  const std::size_t chunks = (m + kRowChunk - 1) / kRowChunk;
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (std::size_t ch = 0; ch < chunks; ++ch) {
    const std::size_t row_end = std::min(m, (ch + 1) * kRowChunk);
    for (std::size_t j0 = 0; j0 < n; j0 += kNr) {
      const std::size_t nr = std::min(kNr, n - j0);
      for (std::size_t i0 = ch * kRowChunk; i0 < row_end; i0 += kMr) {
        const std::size_t mr = std::min(kMr, row_end - i0);
        if (mr == kMr && nr == kNr)
          tile_full(k, a + i0 * k, k, b + j0, n, c + i0 * n + j0, n);
        else
          tile_edge(mr, nr, k, a + i0 * k, k, b + j0, n, c + i0 * n + j0, n);
      }
    }
  }
}

}  // namespace

int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void matmul_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, Real(0));
  gemm_accumulate(m, n, k, a, b, c);
}

void matmul_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate) {
  // Transposing B once turns this into the cache-friendly nn form.
  std::vector<Real> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  matmul_nn(m, n, k, a, bt.data(), c, accumulate);
}

void matmul_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate) {
  std::vector<Real> at(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
  matmul_nn(m, n, k, at.data(), b, c, accumulate);
}

void layer_norm_forward(std::size_t rows, std::size_t d, const Real* x,
                        const Real* gain, const Real* bias, Real eps, Real* y,
                        Real* mean, Real* rstd) {
#pragma omp parallel for schedule(static) if (rows * d > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x + r * d;
    Real* yr = y + r * d;
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const Real t = xr[j] - mu;
      var += t * t;
    }
    var /= static_cast<Real>(d);
    const Real rs = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j)
      yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

void layer_norm_backward(std::size_t rows, std::size_t d, const Real* x,
                         const Real* gain, const Real* mean, const Real* rstd,
                         const Real* dy, Real* dx, Real* dgain, Real* dbias) {
  const Real inv_d = Real(1) / static_cast<Real>(d);
#pragma omp parallel for schedule(static) if (rows * d > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x + r * d;
    const Real* dyr = dy + r * d;
    Real* dxr = dx + r * d;
    const Real mu = mean[r], rs = rstd[r];
    Real sum_g = 0, sum_gx = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const Real g = dyr[j] * gain[j];
      sum_g += g;
      sum_gx += g * (xr[j] - mu) * rs;
    }
    for (std::size_t j = 0; j < d; ++j) {
      const Real xhat = (xr[j] - mu) * rs;
      const Real g = dyr[j] * gain[j];
      dxr[j] += rs * (g - inv_d * sum_g - xhat * inv_d * sum_gx);
    }
  }
  // Column reductions: each column is owned by one thread.
#pragma omp parallel for schedule(static) if (rows * d > kParallelWork)
  for (std::size_t j = 0; j < d; ++j) {
    Real sg = 0, sb = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const Real xhat = (x[r * d + j] - mean[r]) * rstd[r];
      sg += dy[r * d + j] * xhat;
      sb += dy[r * d + j];
    }
    dgain[j] += sg;
    dbias[j] += sb;
  }
}

void softmax_rows(std::size_t rows, std::size_t n, const Real* x, Real* y) {
#pragma omp parallel for schedule(static) if (rows * n > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x + r * n;
    Real* yr = y + r * n;
    Real mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    Real total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    const Real inv = Real(1) / total;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
}

void gelu_forward(std::size_t n, const Real* x, Real* y) {
#pragma omp parallel for schedule(static) if (n > kParallelWork)
  for (std::size_t i = 0; i < n; ++i)
    y[i] = Real(0.5) * x[i] * (Real(1) + std::erf(x[i] * kInvSqrt2));
}

void gelu_backward(std::size_t n, const Real* x, const Real* dy, Real* dx) {
#pragma omp parallel for schedule(static) if (n > kParallelWork)
  for (std::size_t i = 0; i < n; ++i) {
    const Real cdf = Real(0.5) * (Real(1) + std::erf(x[i] * kInvSqrt2));
    const Real pdf = kInvSqrt2Pi * std::exp(Real(-0.5) * x[i] * x[i]);
    dx[i] += dy[i] * (cdf + x[i] * pdf);
  }
}

namespace reference {

void matmul_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real s = accumulate ? c[i * n + j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

void matmul_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real s = accumulate ? c[i * n + j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
}

void matmul_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real s = accumulate ? c[i * n + j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
}

void layer_norm_forward(std::size_t rows, std::size_t d, const Real* x,
                        const Real* gain, const Real* bias, Real eps, Real* y,
                        Real* mean, Real* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j)
      var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j)
      y[r * d + j] =
          static_cast<Real>((x[r * d + j] - mu) * rs * gain[j] + bias[j]);
    mean[r] = static_cast<Real>(mu);
    rstd[r] = static_cast<Real>(rs);
  }
}

void layer_norm_backward(std::size_t rows, std::size_t d, const Real* x,
                         const Real* gain, const Real* mean, const Real* rstd,
                         const Real* dy, Real* dx, Real* dgain, Real* dbias) {
  // Explicit Jacobian-vector product, O(d^2) per row.
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      const double xhat_i = (x[r * d + i] - mean[r]) * rstd[r];
      double acc = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const double xhat_j = (x[r * d + j] - mean[r]) * rstd[r];
        const double delta = i == j ? 1.0 : 0.0;
        const double jac = rstd[r] * (delta - 1.0 / d - xhat_i * xhat_j / d);
        acc += dy[r * d + j] * gain[j] * jac;
      }
      dx[r * d + i] += static_cast<Real>(acc);
      dgain[i] += dy[r * d + i] * static_cast<Real>(xhat_i);
      dbias[i] += dy[r * d + i];
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t n, const Real* x, Real* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max<double>(mx, x[r * n + j]);
    double total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(x[r * n + j] - mx);
    for (std::size_t j = 0; j < n; ++j)
      y[r * n + j] = static_cast<Real>(std::exp(x[r * n + j] - mx) / total);
  }
}

void gelu_forward(std::size_t n, const Real* x, Real* y) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    y[i] = static_cast<Real>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
  }
}

void gelu_backward(std::size_t n, const Real* x, const Real* dy, Real* dx) {
  const double pi = std::acos(-1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * pi);
    dx[i] += static_cast<Real>(dy[i] * (cdf + v * pdf));
  }
}

}  // namespace reference
}  // namespace kernels
}  // namespace NMT_PRECISION_NS
}  // namespace nmt
