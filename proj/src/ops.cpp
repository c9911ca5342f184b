#include "nmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nmt/kernels.hpp"

namespace nmt {
inline namespace NMT_PRECISION_NS {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw_shape_error(op, a.shape(), b.shape());
}

std::size_t last_dim(const Tensor& t) {
  return t.rank() == 0 ? 1 : t.shape().back();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw_shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb) throw_shape_error("matmul", a.shape(), b.shape());

  // Broadcast the leading (batch) dimensions, aligned from the right.
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const std::size_t rank = std::max(a_batch.size(), b_batch.size());
  Shape out_batch(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a_batch.size() >= rank ? a_batch[i + a_batch.size() - rank] : 1;
    const std::size_t db = i + b_batch.size() >= rank ? b_batch[i + b_batch.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) throw_shape_error("matmul", a.shape(), b.shape());
    out_batch[i] = std::max(da, db);
  }
  const std::size_t batches = shape_numel(out_batch);
  std::vector<std::size_t> a_index(batches), b_index(batches);
  for (std::size_t flat = 0; flat < batches; ++flat) {
    std::size_t rem = flat, ai = 0, bi = 0, a_stride = 1, b_stride = 1;
    for (std::size_t i = rank; i-- > 0;) {
      const std::size_t coord = rem % out_batch[i];
      rem /= out_batch[i];
      if (i + a_batch.size() >= rank) {
        const std::size_t d = a_batch[i + a_batch.size() - rank];
        if (d != 1) ai += coord * a_stride;
        a_stride *= d;
      }
      if (i + b_batch.size() >= rank) {
        const std::size_t d = b_batch[i + b_batch.size() - rank];
        if (d != 1) bi += coord * b_stride;
        b_stride *= d;
      }
    }
    a_index[flat] = ai;
    b_index[flat] = bi;
  }

  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<Real> out(batches * m * n);
  for (std::size_t t = 0; t < batches; ++t)
    kernels::matmul_nn(m, n, k, a.data().data() + a_index[t] * m * k,
                       b.data().data() + b_index[t] * k * n,
                       out.data() + t * m * n, false);

  auto an = a.node_ptr(), bn = b.node_ptr();
  return Tensor::make_result(
      std::move(out_shape), std::move(out), {a, b},
      [an, bn, m, n, k, batches, a_index, b_index](detail::Node& self) {
        for (std::size_t t = 0; t < batches; ++t) {
          const Real* dy = self.grad.data() + t * m * n;
          if (an->requires_grad)
            kernels::matmul_nt(m, k, n, dy, bn->value.data() + b_index[t] * k * n,
                               an->ensure_grad().data() + a_index[t] * m * k, true);
          if (bn->requires_grad)
            kernels::matmul_tn(k, n, m, an->value.data() + a_index[t] * m * k, dy,
                               bn->ensure_grad().data() + b_index[t] * k * n, true);
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || last_dim(x) != weight.dim(0))
    throw_shape_error("linear", x.shape(), weight.shape());
  const std::size_t in = weight.dim(0), out_dim = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim))
    throw_shape_error("linear(bias)", weight.shape(), bias.shape());
  const std::size_t rows = x.numel() / in;

  std::vector<Real> out(rows * out_dim);
  if (bias.defined())
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * out_dim);
  kernels::matmul_nn(rows, out_dim, in, x.data().data(), weight.data().data(),
                     out.data(), bias.defined());

  Shape shape = x.shape();
  shape.back() = out_dim;
  auto xn = x.node_ptr(), wn = weight.node_ptr();
  auto bn = bias.defined() ? bias.node_ptr() : nullptr;
  return Tensor::make_result(
      std::move(shape), std::move(out), {x, weight, bias},
      [xn, wn, bn, rows, in, out_dim](detail::Node& self) {
        const Real* dy = self.grad.data();
        if (xn->requires_grad)
          kernels::matmul_nt(rows, in, out_dim, dy, wn->value.data(),
                             xn->ensure_grad().data(), true);
        if (wn->requires_grad)
          kernels::matmul_tn(in, out_dim, rows, xn->value.data(), dy,
                             wn->ensure_grad().data(), true);
        if (bn && bn->requires_grad) {
          auto db = bn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) db[j] += dy[r * out_dim + j];
        }
      });
}

Tensor linear_transposed(const Tensor& x, const Tensor& weight) {
  if (weight.rank() != 2 || last_dim(x) != weight.dim(1))
    throw_shape_error("linear_transposed", x.shape(), weight.shape());
  const std::size_t d = weight.dim(1), out_dim = weight.dim(0);
  const std::size_t rows = x.numel() / d;
  std::vector<Real> out(rows * out_dim);
  kernels::matmul_nt(rows, out_dim, d, x.data().data(), weight.data().data(), out.data(),
                     false);
  Shape shape = x.shape();
  shape.back() = out_dim;
  auto xn = x.node_ptr(), wn = weight.node_ptr();
  return Tensor::make_result(
      std::move(shape), std::move(out), {x, weight},
      [xn, wn, rows, d, out_dim](detail::Node& self) {
        const Real* dy = self.grad.data();
        if (xn->requires_grad)
          kernels::matmul_nn(rows, d, out_dim, dy, wn->value.data(), xn->ensure_grad().data(),
                             true);
        if (wn->requires_grad)
          kernels::matmul_tn(out_dim, d, rows, dy, xn->value.data(), wn->ensure_grad().data(),
                             true);
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<Real> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [an, bn](detail::Node& self) {
                               for (auto* in : {an.get(), bn.get()}) {
                                 if (!in->requires_grad) continue;
                                 auto g = in->ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   g[i] += self.grad[i];
                               }
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<Real> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [an, bn](detail::Node& self) {
                               if (an->requires_grad) {
                                 auto g = an->ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   g[i] += self.grad[i] * bn->value[i];
                               }
                               if (bn->requires_grad) {
                                 auto g = bn->ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   g[i] += self.grad[i] * an->value[i];
                               }
                             });
}

Tensor scale(const Tensor& a, Real factor) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  auto an = a.node_ptr();
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [an, factor](detail::Node& self) {
                               auto g = an->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 g[i] += self.grad[i] * factor;
                             });
}

Tensor sum(const Tensor& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  auto an = a.node_ptr();
  return Tensor::make_result({}, {total}, {a}, [an](detail::Node& self) {
    auto g = an->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) throw_shape_error("reshape", a.shape(), shape);
  std::vector<Real> out(a.data().begin(), a.data().end());
  auto an = a.node_ptr();
  return Tensor::make_result(std::move(shape), std::move(out), {a},
                             [an](detail::Node& self) {
                               auto g = an->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 g[i] += self.grad[i];
                             });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  const std::size_t d = last_dim(x);
  if (d == 0 || gain.numel() != d || bias.numel() != d)
    throw_shape_error("layer_norm", x.shape(), gain.shape());
  const std::size_t rows = x.numel() / d;
  std::vector<Real> out(x.numel());
  std::vector<Real> mean(rows), rstd(rows);
  kernels::layer_norm_forward(rows, d, x.data().data(), gain.data().data(),
                              bias.data().data(), eps, out.data(), mean.data(),
                              rstd.data());
  auto xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr();
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, rows, d, mean = std::move(mean), rstd = std::move(rstd)](
          detail::Node& self) {
        // Scratch buffers stand in for inputs that need no gradient.
        std::vector<Real> scratch_x, scratch_g, scratch_b;
        Real* dx = xn->requires_grad ? xn->ensure_grad().data()
                                     : (scratch_x.assign(rows * d, 0), scratch_x.data());
        Real* dg = gn->requires_grad ? gn->ensure_grad().data()
                                     : (scratch_g.assign(d, 0), scratch_g.data());
        Real* db = bn->requires_grad ? bn->ensure_grad().data()
                                     : (scratch_b.assign(d, 0), scratch_b.data());
        kernels::layer_norm_backward(rows, d, xn->value.data(), gn->value.data(),
                                     mean.data(), rstd.data(), self.grad.data(),
                                     dx, dg, db);
      });
}

Tensor gelu(const Tensor& x) {
  std::vector<Real> out(x.numel());
  kernels::gelu_forward(out.size(), x.data().data(), out.data());
  auto xn = x.node_ptr();
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [xn](detail::Node& self) {
                               kernels::gelu_backward(self.grad.size(), xn->value.data(),
                                                      self.grad.data(),
                                                      xn->ensure_grad().data());
                             });
}

Tensor softmax(const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (rank == 0 || axis < 0 || axis >= rank)
    throw numeric_error("softmax: axis out of range for shape " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t n = x.dim(static_cast<std::size_t>(axis));
  for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));

  std::vector<Real> out(x.numel());
  if (inner == 1) {
    kernels::softmax_rows(outer, n, x.data().data(), out.data());
  } else {
    std::vector<Real> row(n), res(n);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        for (std::size_t j = 0; j < n; ++j) row[j] = x.data()[(o * n + j) * inner + in];
        kernels::softmax_rows(1, n, row.data(), res.data());
        for (std::size_t j = 0; j < n; ++j) out[(o * n + j) * inner + in] = res[j];
      }
  }
  auto xn = x.node_ptr();
  return Tensor::make_result(
      x.shape(), std::move(out), {x}, [xn, outer, inner, n](detail::Node& self) {
        auto g = xn->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t in = 0; in < inner; ++in) {
            Real dot = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t idx = (o * n + j) * inner + in;
              dot += self.grad[idx] * self.value[idx];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t idx = (o * n + j) * inner + in;
              g[idx] += self.value[idx] * (self.grad[idx] - dot);
            }
          }
      });
}

Tensor dropout(const Tensor& x, Real p, bool training, const DropoutKey& key) {
  if (!(p >= Real(0) && p < Real(1)))
    throw numeric_error("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == Real(0)) return x;

  std::seed_seq seq{static_cast<std::uint32_t>(key.seed), static_cast<std::uint32_t>(key.seed >> 32),
                    static_cast<std::uint32_t>(key.step), static_cast<std::uint32_t>(key.step >> 32),
                    static_cast<std::uint32_t>(key.site), static_cast<std::uint32_t>(key.site >> 32)};
  std::mt19937_64 rng(seq);
  const Real keep_scale = Real(1) / (Real(1) - p);
  std::vector<Real> mask(x.numel());
  std::vector<Real> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u < static_cast<double>(p) ? Real(0) : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  auto xn = x.node_ptr();
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [xn, mask = std::move(mask)](detail::Node& self) {
                               auto g = xn->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 g[i] += self.grad[i] * mask[i];
                             });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, Real factor) {
  if (table.rank() != 2) throw numeric_error("embedding: table must be rank 2");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<Real> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw numeric_error("embedding: id " + std::to_string(ids[i]) +
                          " out of range for vocabulary of " + std::to_string(vocab));
    const Real* row = table.data().data() + static_cast<std::size_t>(ids[i]) * d;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = row[j] * factor;
  }
  auto tn = table.node_ptr();
  std::vector<int> id_copy(ids.begin(), ids.end());
  return Tensor::make_result(
      {ids.size(), d}, std::move(out), {table},
      [tn, d, factor, id_copy = std::move(id_copy)](detail::Node& self) {
        auto g = tn->ensure_grad();
        for (std::size_t i = 0; i < id_copy.size(); ++i) {
          Real* row = g.data() + static_cast<std::size_t>(id_copy[i]) * d;
          for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[i * d + j] * factor;
        }
      });
}

Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const int> targets,
                              Real smoothing, int pad_id, Reduction reduction) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw numeric_error("cross_entropy_smoothed: logits " + shape_str(logits.shape()) +
                        " vs " + std::to_string(targets.size()) + " targets");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  const Real off = vocab > 1 ? smoothing / static_cast<Real>(vocab - 1) : Real(0);
  const Real on = vocab > 1 ? Real(1) - smoothing : Real(1);

  std::vector<Real> probs(rows * vocab);
  kernels::softmax_rows(rows, vocab, logits.data().data(), probs.data());
  double total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw numeric_error("cross_entropy_smoothed: target " + std::to_string(t) +
                          " out of range");
    const Real* z = logits.data().data() + r * vocab;
    double mx = z[0];
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max<double>(mx, z[c]);
    double lse = 0;
    for (std::size_t c = 0; c < vocab; ++c) lse += std::exp(z[c] - mx);
    lse = mx + std::log(lse);
    double row_loss = 0;
    for (std::size_t c = 0; c < vocab; ++c) {
      const double q = static_cast<std::size_t>(t) == c ? on : off;
      if (q != 0) row_loss -= q * (z[c] - lse);
    }
    total += row_loss;
    ++count;
  }
  if (count == 0) throw numeric_error("cross_entropy_smoothed: no non-pad targets");
  const Real norm = reduction == Reduction::mean ? Real(1) / static_cast<Real>(count) : Real(1);

  auto ln = logits.node_ptr();
  std::vector<int> tcopy(targets.begin(), targets.end());
  return Tensor::make_result(
      {}, {static_cast<Real>(total) * norm}, {logits},
      [ln, rows, vocab, on, off, norm, pad_id, probs = std::move(probs),
       tcopy = std::move(tcopy)](detail::Node& self) {
        auto g = ln->ensure_grad();
        const Real upstream = self.grad[0] * norm;
        for (std::size_t r = 0; r < rows; ++r) {
          if (tcopy[r] == pad_id) continue;
          for (std::size_t c = 0; c < vocab; ++c) {
            const Real q = static_cast<std::size_t>(tcopy[r]) == c ? on : off;
            g[r * vocab + c] += upstream * (probs[r * vocab + c] - q);
          }
        }
      });
}

}  // namespace NMT_PRECISION_NS
}  // namespace nmt
