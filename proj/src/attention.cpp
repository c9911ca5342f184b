#include <algorithm>
#include <cmath>
#include <limits>

#include "nmt/model.hpp"

namespace nmt {
inline namespace NMT_PRECISION_NS {

int relative_index(int query_pos, int key_pos, int clip) {
  return std::max(-clip, std::min(clip, key_pos - query_pos));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& rel_keys,
                 const Tensor& rel_values, int clip, const AttentionMask& mask,
                 const AttentionGeometry& geom) {
  const std::size_t batch = geom.batch, lq = geom.q_len, lk = geom.k_len, heads = geom.heads;
  if (q.rank() != 2 || heads == 0 || q.dim(1) % heads != 0)
    throw numeric_error("attention: query must be [rows, d_model] with d_model divisible by heads");
  const std::size_t d = q.dim(1), dh = d / heads;
  const std::size_t kv_batch = geom.shared_kv ? 1 : batch;
  if (q.dim(0) != batch * lq) throw_shape_error("attention(q)", q.shape(), {batch * lq, d});
  if (k.shape() != Shape{kv_batch * lk, d}) throw_shape_error("attention(k)", k.shape(), {kv_batch * lk, d});
  if (v.shape() != k.shape()) throw_shape_error("attention(v)", v.shape(), k.shape());
  if (mask.key_lengths.size() != batch)
    throw numeric_error("attention: mask has " + std::to_string(mask.key_lengths.size()) +
                        " key lengths for batch of " + std::to_string(batch));
  const bool relative = rel_keys.defined();
  const std::size_t table_rows = 2 * static_cast<std::size_t>(clip) + 1;
  if (relative) {
    if (rel_keys.shape() != Shape{table_rows, dh})
      throw_shape_error("attention(rel_keys)", rel_keys.shape(), {table_rows, dh});
    if (!rel_values.defined() || rel_values.shape() != rel_keys.shape())
      throw numeric_error("attention: relative value table must match relative key table");
  }

  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  const Real* qv = q.data().data();
  const Real* kv = k.data().data();
  const Real* vv = v.data().data();
  const Real* rk = relative ? rel_keys.data().data() : nullptr;
  const Real* rv = relative ? rel_values.data().data() : nullptr;

  // probs[b][h][i][j]; masked entries are exactly 0.
  std::vector<Real> probs(batch * heads * lq * lk, Real(0));
  std::vector<Real> out(batch * lq * d, Real(0));

  auto visible = [&](std::size_t b, std::size_t i, std::size_t j) {
    if (static_cast<int>(j) >= mask.key_lengths[b]) return false;
    if (mask.causal && j > i + geom.q_offset) return false;
    return true;
  };
  auto rel_row = [clip, offset = geom.q_offset](std::size_t i, std::size_t j) {
    return static_cast<std::size_t>(
        relative_index(static_cast<int>(i + offset), static_cast<int>(j), clip) + clip);
  };

#pragma omp parallel for collapse(2) schedule(static) if (batch * heads * lq * lk * dh > (1 << 15))
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t kb = geom.shared_kv ? 0 : b;
      std::vector<Real> logits(lk);
      for (std::size_t i = 0; i < lq; ++i) {
        const Real* qi = qv + (b * lq + i) * d + h * dh;
        Real* p = probs.data() + ((b * heads + h) * lq + i) * lk;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < lk; ++j) {
          if (!visible(b, i, j)) continue;
          const Real* kj = kv + (kb * lk + j) * d + h * dh;
          const Real* rkj = relative ? rk + rel_row(i, j) * dh : nullptr;
          Real s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * (kj[c] + (rkj ? rkj[c] : Real(0)));
          logits[j] = s * scale;
          mx = std::max(mx, logits[j]);
        }
        if (mx == -std::numeric_limits<Real>::infinity()) continue;  // nothing visible
        Real total = 0;
        for (std::size_t j = 0; j < lk; ++j) {
          if (!visible(b, i, j)) continue;
          p[j] = std::exp(logits[j] - mx);
          total += p[j];
        }
        Real* o = out.data() + (b * lq + i) * d + h * dh;
        for (std::size_t j = 0; j < lk; ++j) {
          if (p[j] == Real(0)) continue;
          p[j] /= total;
          const Real* vj = vv + (kb * lk + j) * d + h * dh;
          const Real* rvj = relative ? rv + rel_row(i, j) * dh : nullptr;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p[j] * (vj[c] + (rvj ? rvj[c] : Real(0)));
        }
      }
    }

  auto qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr();
  auto rkn = relative ? rel_keys.node_ptr() : nullptr;
  auto rvn = relative ? rel_values.node_ptr() : nullptr;
  return Tensor::make_result(
      q.shape(), std::move(out), {q, k, v, rel_keys, rel_values},
      [=, shared_kv = geom.shared_kv, probs = std::move(probs)](detail::Node& self) {
        const Real* dout = self.grad.data();
        // Scratch buffers stand in for inputs that need no gradient.
        std::vector<Real> sq, sk, sv, srk, srv;
        auto grad_or_scratch = [](const std::shared_ptr<detail::Node>& n,
                                  std::vector<Real>& scratch) -> Real* {
          if (!n) return nullptr;
          if (n->requires_grad) return n->ensure_grad().data();
          scratch.assign(n->value.size(), Real(0));
          return scratch.data();
        };
        Real* dq = grad_or_scratch(qn, sq);
        Real* dk = grad_or_scratch(kn, sk);
        Real* dv = grad_or_scratch(vn, sv);
        Real* drk = grad_or_scratch(rkn, srk);
        Real* drv = grad_or_scratch(rvn, srv);
        const Real* qd = qn->value.data();
        const Real* kd = kn->value.data();
        const Real* vd = vn->value.data();
        const Real* rkd = rkn ? rkn->value.data() : nullptr;
        const Real* rvd = rvn ? rvn->value.data() : nullptr;
        std::vector<Real> dp(lk);

        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t kb = shared_kv ? 0 : b;
            for (std::size_t i = 0; i < lq; ++i) {
              const Real* p = probs.data() + ((b * heads + h) * lq + i) * lk;
              const Real* go = dout + (b * lq + i) * d + h * dh;
              const Real* qi = qd + (b * lq + i) * d + h * dh;
              Real* dqi = dq + (b * lq + i) * d + h * dh;
              Real weighted = 0;
              for (std::size_t j = 0; j < lk; ++j) {
                dp[j] = 0;
                if (p[j] == Real(0)) continue;
                const std::size_t voff = (kb * lk + j) * d + h * dh;
                const std::size_t roff = rkd ? rel_row(i, j) * dh : 0;
                Real s = 0;
                for (std::size_t c = 0; c < dh; ++c) {
                  const Real val = vd[voff + c] + (rvd ? rvd[roff + c] : Real(0));
                  s += go[c] * val;
                  dv[voff + c] += p[j] * go[c];
                  if (drv) drv[roff + c] += p[j] * go[c];
                }
                dp[j] = s;
                weighted += p[j] * s;
              }
              for (std::size_t j = 0; j < lk; ++j) {
                if (p[j] == Real(0)) continue;
                const Real ds = p[j] * (dp[j] - weighted) * scale;
                const std::size_t koff = (kb * lk + j) * d + h * dh;
                const std::size_t roff = rkd ? rel_row(i, j) * dh : 0;
                for (std::size_t c = 0; c < dh; ++c) {
                  dqi[c] += ds * (kd[koff + c] + (rkd ? rkd[roff + c] : Real(0)));
                  dk[koff + c] += ds * qi[c];
                  if (drk) drk[roff + c] += ds * qi[c];
                }
              }
            }
          }
      });
}

}  // namespace NMT_PRECISION_NS
}  // namespace nmt
