#pragma once

// Dense row-major kernels used by the tensor core.
//
// Every kernel exists twice: the OpenMP version in nmt::kernels, and a plain
// loop version in nmt::kernels::reference that is kept for testing and
// benchmarking. Parallel kernels split work over output rows only, so each
// output element is produced by one thread with a fixed summation order and
// results are bit-identical for any thread count.

#include <cstddef>
#include <span>

#include "nmt/real.hpp"

namespace nmt {
inline namespace NMT_PRECISION_NS {
namespace kernels {

// C[M,N] (+)= A[M,K] * B[K,N]
void matmul_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate);
// C[M,N] (+)= A[M,K] * B[N,K]^T
void matmul_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate);
// C[M,N] (+)= A[K,M]^T * B[K,N]
void matmul_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate);

// y = (x - mean) * rstd * gain + bias per row; mean and rstd are saved for
// the backward pass.
void layer_norm_forward(std::size_t rows, std::size_t d, const Real* x,
                        const Real* gain, const Real* bias, Real eps, Real* y,
                        Real* mean, Real* rstd);
// Accumulates into dx, dgain, dbias.
void layer_norm_backward(std::size_t rows, std::size_t d, const Real* x,
                         const Real* gain, const Real* mean, const Real* rstd,
                         const Real* dy, Real* dx, Real* dgain, Real* dbias);

// Numerically stable softmax over contiguous rows.
void softmax_rows(std::size_t rows, std::size_t n, const Real* x, Real* y);

void gelu_forward(std::size_t n, const Real* x, Real* y);
// dx += dy * gelu'(x)
void gelu_backward(std::size_t n, const Real* x, const Real* dy, Real* dx);

namespace reference {

void matmul_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate);
void matmul_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate);
void matmul_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
               const Real* b, Real* c, bool accumulate);
void layer_norm_forward(std::size_t rows, std::size_t d, const Real* x,
                        const Real* gain, const Real* bias, Real eps, Real* y,
                        Real* mean, Real* rstd);
void layer_norm_backward(std::size_t rows, std::size_t d, const Real* x,
                         const Real* gain, const Real* mean, const Real* rstd,
                         const Real* dy, Real* dx, Real* dgain, Real* dbias);
void softmax_rows(std::size_t rows, std::size_t n, const Real* x, Real* y);
void gelu_forward(std::size_t n, const Real* x, Real* y);
void gelu_backward(std::size_t n, const Real* x, const Real* dy, Real* dx);

}  // namespace reference

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace kernels
}  // namespace NMT_PRECISION_NS
}  // namespace nmt
