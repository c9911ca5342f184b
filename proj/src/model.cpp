#include "nmt/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nmt/special_tokens.hpp"

namespace nmt {
inline namespace NMT_PRECISION_NS {

namespace {

std::string layer_prefix(const char* stack, int layer) {
  return std::string(stack) + "." + std::to_string(layer) + ".";
}

// Uniform draw on [-bound, bound) from 53 random bits.
Real uniform(std::mt19937_64& rng, double bound) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return static_cast<Real>((2.0 * u - 1.0) * bound);
}

void add_attention_layout(std::vector<std::pair<std::string, Shape>>& out,
                          const std::string& prefix, std::size_t d, bool relative,
                          std::size_t table_rows, std::size_t dh) {
  for (const char* proj : {"q", "k", "v", "o"}) {
    out.push_back({prefix + proj + ".weight", {d, d}});
    out.push_back({prefix + proj + ".bias", {d}});
  }
  if (relative) {
    out.push_back({prefix + "rel_key", {table_rows, dh}});
    out.push_back({prefix + "rel_value", {table_rows, dh}});
  }
}

void add_norm_layout(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                     std::size_t d) {
  out.push_back({prefix + "gain", {d}});
  out.push_back({prefix + "bias", {d}});
}

void add_ffn_layout(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                    std::size_t d, std::size_t d_ff) {
  out.push_back({prefix + "fc1.weight", {d, d_ff}});
  out.push_back({prefix + "fc1.bias", {d_ff}});
  out.push_back({prefix + "fc2.weight", {d_ff, d}});
  out.push_back({prefix + "fc2.bias", {d}});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Per-forward bookkeeping: dropout sites are numbered in call order so masks
// are reproducible from (seed, step, site).
struct ForwardContext {
  const ParameterSet& params;
  const ModelConfig& cfg;
  const ForwardOptions& opts;
  std::uint64_t site = 0;

  const Tensor& p(const std::string& name) const { return params.at(name); }

  Tensor drop(const Tensor& x) {
    return dropout(x, static_cast<Real>(cfg.dropout), opts.training,
                   DropoutKey{opts.seed, opts.step, site++});
  }

  void probe(const std::string& site_name, const Tensor& x, const std::vector<bool>& valid_rows) {
    if (!opts.probe) return;
    const std::size_t d = x.dim(1), rows = x.dim(0);
    std::vector<double> mean(d, 0.0), sq(d, 0.0);
    std::size_t n = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!valid_rows[r]) continue;
      ++n;
      for (std::size_t j = 0; j < d; ++j) mean[j] += x.data()[r * d + j];
    }
    for (auto& m : mean) m /= static_cast<double>(std::max<std::size_t>(n, 1));
    for (std::size_t r = 0; r < rows; ++r) {
      if (!valid_rows[r]) continue;
      for (std::size_t j = 0; j < d; ++j) {
        const double t = x.data()[r * d + j] - mean[j];
        sq[j] += t * t;
      }
    }
    ActivationProbe::Entry entry{site_name, {}};
    for (std::size_t j = 0; j < d; ++j)
      entry.dim_std.push_back(std::sqrt(sq[j] / static_cast<double>(std::max<std::size_t>(n, 1))));
    opts.probe->entries.push_back(std::move(entry));
  }

  Tensor residual_norm(const Tensor& x, const Tensor& branch, const std::string& norm,
                       const std::vector<bool>& valid_rows) {
    Tensor sum_in = add(x, drop(branch));
    probe(norm, sum_in, valid_rows);
    return layer_norm(sum_in, p(norm + "gain"), p(norm + "bias"), static_cast<Real>(cfg.ln_eps));
  }

  Tensor feed_forward(const Tensor& x, const std::string& prefix) {
    Tensor h = gelu(linear(x, p(prefix + "fc1.weight"), p(prefix + "fc1.bias")));
    return linear(h, p(prefix + "fc2.weight"), p(prefix + "fc2.bias"));
  }
};

std::vector<bool> row_validity(std::size_t batch, std::size_t len, const std::vector<int>& lengths) {
  std::vector<bool> valid(batch * len);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t) valid[b * len + t] = static_cast<int>(t) < lengths[b];
  return valid;
}

Tensor encode_impl(ForwardContext& ctx, const TokenBatch& batch) {
  const ModelConfig& cfg = ctx.cfg;
  const Real emb_scale = std::sqrt(static_cast<Real>(cfg.d_model));
  Tensor x = ctx.drop(embedding(ctx.p("src_embed"), batch.src, emb_scale));
  const auto valid = row_validity(batch.batch, batch.src_len, batch.src_lengths);
  const AttentionGeometry geom{batch.batch, batch.src_len, batch.src_len,
                               static_cast<std::size_t>(cfg.heads), 0, false};
  const AttentionMask mask{batch.src_lengths, false};
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string pre = layer_prefix("enc", l);
    const std::string att = pre + "self_attn.";
    Tensor q = linear(x, ctx.p(att + "q.weight"), ctx.p(att + "q.bias"));
    Tensor k = linear(x, ctx.p(att + "k.weight"), ctx.p(att + "k.bias"));
    Tensor v = linear(x, ctx.p(att + "v.weight"), ctx.p(att + "v.bias"));
    Tensor a = attention(q, k, v, ctx.p(att + "rel_key"), ctx.p(att + "rel_value"), cfg.rel_clip,
                         mask, geom);
    Tensor o = linear(a, ctx.p(att + "o.weight"), ctx.p(att + "o.bias"));
    x = ctx.residual_norm(x, o, pre + "ln1.", valid);
    x = ctx.residual_norm(x, ctx.feed_forward(x, pre + "ffn."), pre + "ln2.", valid);
  }
  return x;
}

void check_batch(const ModelConfig& cfg, const TokenBatch& batch) {
  if (batch.src_len > static_cast<std::size_t>(cfg.max_len) ||
      batch.tgt_len > static_cast<std::size_t>(cfg.max_len))
    throw numeric_error("forward: sequence length " +
                        std::to_string(std::max(batch.src_len, batch.tgt_len)) +
                        " exceeds max_len " + std::to_string(cfg.max_len));
}

}  // namespace

Tensor& ParameterSet::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw numeric_error("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw numeric_error("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : tensors) t.zero_grad();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& [name, t] : tensors) {
    Tensor copy = t.detach_copy();
    copy.set_requires_grad(t.requires_grad());
    out.tensors.emplace(name, std::move(copy));
  }
  return out;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t d_ff = static_cast<std::size_t>(cfg.d_ff());
  const std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
  const std::size_t table_rows = 2 * static_cast<std::size_t>(cfg.rel_clip) + 1;
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"src_embed", {static_cast<std::size_t>(cfg.src_vocab), d}});
  out.push_back({"tgt_embed", {static_cast<std::size_t>(cfg.tgt_vocab), d}});
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string pre = layer_prefix("enc", l);
    add_attention_layout(out, pre + "self_attn.", d, true, table_rows, dh);
    add_norm_layout(out, pre + "ln1.", d);
    add_ffn_layout(out, pre + "ffn.", d, d_ff);
    add_norm_layout(out, pre + "ln2.", d);
  }
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string pre = layer_prefix("dec", l);
    add_attention_layout(out, pre + "self_attn.", d, true, table_rows, dh);
    add_norm_layout(out, pre + "ln1.", d);
    add_attention_layout(out, pre + "cross_attn.", d, false, table_rows, dh);
    add_norm_layout(out, pre + "ln2.", d);
    add_ffn_layout(out, pre + "ffn.", d, d_ff);
    add_norm_layout(out, pre + "ln3.", d);
  }
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_layout(cfg)) n += shape_numel(shape);
  return n;
}

ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet params;
  for (const auto& [name, shape] : parameter_layout(cfg)) {
    std::vector<Real> values(shape_numel(shape), Real(0));
    if (ends_with(name, ".gain")) {
      std::fill(values.begin(), values.end(), Real(1));
    } else if (shape.size() == 2) {
      double bound;
      if (name == "src_embed" || name == "tgt_embed") {
        // fan_in = fan_out = d: std d^-1/2, so a lookup scaled by sqrt(d)
        // has unit std per dimension.
        bound = std::sqrt(3.0 / static_cast<double>(shape[1]));
      } else {
        bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      }
      if (cfg.lipschitz_init && (ends_with(name, "attn.o.weight") || ends_with(name, "fc2.weight"))) {
        const int layers = name.rfind("enc.", 0) == 0 ? cfg.enc_layers : cfg.dec_layers;
        bound *= std::pow(2.0 * layers, -0.25);
      }
      for (auto& v : values) v = uniform(rng, bound);
    }
    params.tensors.emplace(name, Tensor::from(shape, std::move(values), true));
  }
  return params;
}

TokenBatch TokenBatch::build(std::span<const std::vector<int>> sources,
                             std::span<const std::vector<int>> targets, std::size_t pad_src_to,
                             std::size_t pad_tgt_to) {
  if (sources.size() != targets.size())
    throw numeric_error("TokenBatch: source/target count mismatch");
  TokenBatch b;
  b.batch = sources.size();
  for (std::size_t i = 0; i < b.batch; ++i) {
    b.src_lengths.push_back(static_cast<int>(sources[i].size() + 1));
    b.tgt_lengths.push_back(static_cast<int>(targets[i].size() + 1));
    b.src_len = std::max(b.src_len, sources[i].size() + 1);
    b.tgt_len = std::max(b.tgt_len, targets[i].size() + 1);
  }
  b.src_len = std::max(b.src_len, pad_src_to);
  b.tgt_len = std::max(b.tgt_len, pad_tgt_to);
  b.src.assign(b.batch * b.src_len, kPadId);
  b.tgt_in.assign(b.batch * b.tgt_len, kPadId);
  b.tgt_out.assign(b.batch * b.tgt_len, kPadId);
  for (std::size_t i = 0; i < b.batch; ++i) {
    std::copy(sources[i].begin(), sources[i].end(), b.src.begin() + i * b.src_len);
    b.src[i * b.src_len + sources[i].size()] = kEosId;
    b.tgt_in[i * b.tgt_len] = kBosId;
    std::copy(targets[i].begin(), targets[i].end(), b.tgt_in.begin() + i * b.tgt_len + 1);
    std::copy(targets[i].begin(), targets[i].end(), b.tgt_out.begin() + i * b.tgt_len);
    b.tgt_out[i * b.tgt_len + targets[i].size()] = kEosId;
  }
  return b;
}

std::size_t TokenBatch::target_tokens() const {
  std::size_t n = 0;
  for (int len : tgt_lengths) n += static_cast<std::size_t>(len);
  return n;
}

Tensor encode(const ParameterSet& params, const ModelConfig& cfg, const TokenBatch& batch,
              const ForwardOptions& opts) {
  check_batch(cfg, batch);
  ForwardContext ctx{params, cfg, opts};
  return encode_impl(ctx, batch);
}

Tensor forward(const ParameterSet& params, const ModelConfig& cfg, const TokenBatch& batch,
               const ForwardOptions& opts) {
  check_batch(cfg, batch);
  ForwardContext ctx{params, cfg, opts};
  Tensor memory = encode_impl(ctx, batch);

  const Real emb_scale = std::sqrt(static_cast<Real>(cfg.d_model));
  Tensor y = ctx.drop(embedding(ctx.p("tgt_embed"), batch.tgt_in, emb_scale));
  const auto valid = row_validity(batch.batch, batch.tgt_len, batch.tgt_lengths);
  const std::size_t heads = static_cast<std::size_t>(cfg.heads);
  const AttentionGeometry self_geom{batch.batch, batch.tgt_len, batch.tgt_len, heads, 0, false};
  const AttentionMask self_mask{batch.tgt_lengths, true};
  const AttentionGeometry cross_geom{batch.batch, batch.tgt_len, batch.src_len, heads, 0, false};
  const AttentionMask cross_mask{batch.src_lengths, false};
  const Tensor none;

  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string pre = layer_prefix("dec", l);
    const std::string sa = pre + "self_attn.";
    Tensor q = linear(y, ctx.p(sa + "q.weight"), ctx.p(sa + "q.bias"));
    Tensor k = linear(y, ctx.p(sa + "k.weight"), ctx.p(sa + "k.bias"));
    Tensor v = linear(y, ctx.p(sa + "v.weight"), ctx.p(sa + "v.bias"));
    Tensor a = attention(q, k, v, ctx.p(sa + "rel_key"), ctx.p(sa + "rel_value"), cfg.rel_clip,
                         self_mask, self_geom);
    y = ctx.residual_norm(y, linear(a, ctx.p(sa + "o.weight"), ctx.p(sa + "o.bias")),
                          pre + "ln1.", valid);

    const std::string ca = pre + "cross_attn.";
    Tensor cq = linear(y, ctx.p(ca + "q.weight"), ctx.p(ca + "q.bias"));
    Tensor ck = linear(memory, ctx.p(ca + "k.weight"), ctx.p(ca + "k.bias"));
    Tensor cv = linear(memory, ctx.p(ca + "v.weight"), ctx.p(ca + "v.bias"));
    Tensor c = attention(cq, ck, cv, none, none, cfg.rel_clip, cross_mask, cross_geom);
    y = ctx.residual_norm(y, linear(c, ctx.p(ca + "o.weight"), ctx.p(ca + "o.bias")),
                          pre + "ln2.", valid);

    y = ctx.residual_norm(y, ctx.feed_forward(y, pre + "ffn."), pre + "ln3.", valid);
  }
  Tensor logits = linear_transposed(y, ctx.p("tgt_embed"));
  return reshape(logits, {batch.batch, batch.tgt_len, static_cast<std::size_t>(cfg.tgt_vocab)});
}

DecoderState::DecoderState(const ParameterSet& params, const ModelConfig& cfg,
                           std::span<const int> source_tokens)
    : params_(params), cfg_(cfg) {
  NoGradGuard no_grad;
  const std::vector<int> src(source_tokens.begin(), source_tokens.end());
  const std::vector<int> empty;
  TokenBatch batch = TokenBatch::build(std::span(&src, 1), std::span(&empty, 1));
  src_len_ = batch.src_len;
  Tensor memory = encode(params, cfg, batch, ForwardOptions{});
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string ca = layer_prefix("dec", l) + "cross_attn.";
    cross_k_.push_back(linear(memory, params.at(ca + "k.weight"), params.at(ca + "k.bias")));
    cross_v_.push_back(linear(memory, params.at(ca + "v.weight"), params.at(ca + "v.bias")));
  }
  self_k_.resize(static_cast<std::size_t>(cfg.dec_layers));
  self_v_.resize(static_cast<std::size_t>(cfg.dec_layers));
}

Tensor DecoderState::step(std::span<const int> tokens) {
  NoGradGuard no_grad;
  if (position_ == 0) {
    rows_ = tokens.size();
    for (auto& layer : self_k_) layer.assign(rows_, {});
    for (auto& layer : self_v_) layer.assign(rows_, {});
  } else if (tokens.size() != rows_) {
    throw numeric_error("DecoderState::step: expected " + std::to_string(rows_) + " tokens");
  }
  if (position_ >= static_cast<std::size_t>(cfg_.max_len))
    throw numeric_error("DecoderState::step: position exceeds max_len");

  const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
  const std::size_t heads = static_cast<std::size_t>(cfg_.heads);
  const std::size_t len = position_ + 1;
  const Real emb_scale = std::sqrt(static_cast<Real>(cfg_.d_model));
  const ForwardOptions opts{};
  ForwardContext ctx{params_, cfg_, opts};
  const std::vector<bool> valid(rows_, true);
  const Tensor none;

  Tensor y = embedding(params_.at("tgt_embed"), tokens, emb_scale);
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::size_t li = static_cast<std::size_t>(l);
    const std::string pre = layer_prefix("dec", l);
    const std::string sa = pre + "self_attn.";
    Tensor q = linear(y, params_.at(sa + "q.weight"), params_.at(sa + "q.bias"));
    Tensor k = linear(y, params_.at(sa + "k.weight"), params_.at(sa + "k.bias"));
    Tensor v = linear(y, params_.at(sa + "v.weight"), params_.at(sa + "v.bias"));
    std::vector<Real> keys(rows_ * len * d), values(rows_ * len * d);
    for (std::size_t r = 0; r < rows_; ++r) {
      auto& kc = self_k_[li][r];
      auto& vc = self_v_[li][r];
      kc.insert(kc.end(), k.data().begin() + r * d, k.data().begin() + (r + 1) * d);
      vc.insert(vc.end(), v.data().begin() + r * d, v.data().begin() + (r + 1) * d);
      std::copy(kc.begin(), kc.end(), keys.begin() + r * len * d);
      std::copy(vc.begin(), vc.end(), values.begin() + r * len * d);
    }
    const AttentionGeometry self_geom{rows_, 1, len, heads, position_, false};
    const AttentionMask self_mask{std::vector<int>(rows_, static_cast<int>(len)), true};
    Tensor a = attention(q, Tensor::from({rows_ * len, d}, std::move(keys)),
                         Tensor::from({rows_ * len, d}, std::move(values)),
                         params_.at(sa + "rel_key"), params_.at(sa + "rel_value"), cfg_.rel_clip,
                         self_mask, self_geom);
    y = ctx.residual_norm(y, linear(a, params_.at(sa + "o.weight"), params_.at(sa + "o.bias")),
                          pre + "ln1.", valid);

    const std::string ca = pre + "cross_attn.";
    Tensor cq = linear(y, params_.at(ca + "q.weight"), params_.at(ca + "q.bias"));
    const AttentionGeometry cross_geom{rows_, 1, src_len_, heads, 0, true};
    const AttentionMask cross_mask{std::vector<int>(rows_, static_cast<int>(src_len_)), false};
    Tensor c = attention(cq, cross_k_[li], cross_v_[li], none, none, cfg_.rel_clip, cross_mask,
                         cross_geom);
    y = ctx.residual_norm(y, linear(c, params_.at(ca + "o.weight"), params_.at(ca + "o.bias")),
                          pre + "ln2.", valid);
    y = ctx.residual_norm(y, ctx.feed_forward(y, pre + "ffn."), pre + "ln3.", valid);
  }
  ++position_;
  return linear_transposed(y, params_.at("tgt_embed"));
}

void DecoderState::reorder(std::span<const std::size_t> parents) {
  for (auto* cache : {&self_k_, &self_v_})
    for (auto& layer : *cache) {
      std::vector<std::vector<Real>> next;
      next.reserve(parents.size());
      for (std::size_t p : parents) next.push_back(layer.at(p));
      layer = std::move(next);
    }
  rows_ = parents.size();
}

}  // namespace NMT_PRECISION_NS
}  // namespace nmt
