#pragma once

// Differentiable tensor operations.

#include <cstdint>
#include <span>
#include <vector>

#include "nmt/tensor.hpp"

namespace nmt {
inline namespace NMT_PRECISION_NS {

// Batched matrix product a[..., m, k] * b[..., k, n] -> [..., m, n]. Batch
// dimensions broadcast numpy-style; rank-2 inputs are plain products.
Tensor matmul(const Tensor& a, const Tensor& b);

// x[rows, in] * weight[in, out] + bias[out]. bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x[rows, d] * weight[out, d]^T; used for the tied output projection.
Tensor linear_transposed(const Tensor& x, const Tensor& weight);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Real eps);
Tensor gelu(const Tensor& x);
// axis may be negative (counted from the end).
Tensor softmax(const Tensor& x, int axis = -1);

// Deterministic dropout mask source: the mask for one call is a pure function
// of (seed, step, site), so reruns and resumed runs draw identical masks.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t site = 0;
};

// Inverted dropout. p must lie in [0, 1).
Tensor dropout(const Tensor& x, Real p, bool training, const DropoutKey& key);

// Row gather table[ids[i], :] * factor -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const int> ids,
                 Real factor = Real(1));

enum class Reduction { mean, sum };

// Label-smoothed cross-entropy over rows of logits[N, V]. Target mass is
// (1 - smoothing) on the gold class and smoothing / (V - 1) elsewhere; rows
// whose target equals pad_id are excluded.
Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const int> targets,
                              Real smoothing, int pad_id,
                              Reduction reduction = Reduction::mean);

}  // namespace NMT_PRECISION_NS
}  // namespace nmt
