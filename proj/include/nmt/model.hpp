#pragma once

// Encoder-decoder Transformer with post-LN residual blocks, relative-position
// self-attention and depth-scaled initialization.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nmt/config.hpp"
#include "nmt/ops.hpp"
#include "nmt/tensor.hpp"

namespace nmt {
inline namespace NMT_PRECISION_NS {

struct ParameterSet {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  std::size_t size() const { return tensors.size(); }
  std::size_t element_count() const;
  void zero_grad();
  ParameterSet clone() const;
};

// Ordered (name, shape) list; a pure function of the config.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg);

// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)) for every matrix;
// residual-branch output projections additionally scaled by (2L)^(-1/4) when
// cfg.lipschitz_init is set; layer-norm gains 1 and all biases 0.
ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed);

// Clipped relative distance clamp(j - i, -clip, clip).
int relative_index(int query_pos, int key_pos, int clip);

struct AttentionGeometry {
  std::size_t batch = 1;
  std::size_t q_len = 1;
  std::size_t k_len = 1;
  std::size_t heads = 1;
  // Absolute position of query row 0 (incremental decoding).
  std::size_t q_offset = 0;
  // Keys and values have a single batch entry shared by all queries.
  bool shared_kv = false;
};

struct AttentionMask {
  // Number of valid keys per batch entry; keys at or beyond it are masked.
  std::vector<int> key_lengths;
  // Forbid keys after the query position.
  bool causal = false;
};

// Multi-head scaled dot-product attention with optional relative-position
// terms. q is [batch*q_len, d_model]; k and v are [batch*k_len, d_model] (or
// [k_len, d_model] when shared_kv). rel_keys / rel_values are
// [2*clip+1, d_model/heads] tables shared by all heads, or undefined.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& rel_keys, const Tensor& rel_values, int clip,
                 const AttentionMask& mask, const AttentionGeometry& geom);

// Padded id matrices for one micro-batch. Sources get EOS appended; the
// decoder reads BOS + target and predicts target + EOS.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src;      // [batch * src_len]
  std::vector<int> tgt_in;   // [batch * tgt_len]
  std::vector<int> tgt_out;  // [batch * tgt_len], PAD beyond each target
  std::vector<int> src_lengths;
  std::vector<int> tgt_lengths;

  static TokenBatch build(std::span<const std::vector<int>> sources,
                          std::span<const std::vector<int>> targets,
                          std::size_t pad_src_to = 0, std::size_t pad_tgt_to = 0);
  std::size_t target_tokens() const;
};

// Collects layer-norm input statistics during a forward pass.
struct ActivationProbe {
  struct Entry {
    std::string site;
    std::vector<double> dim_std;  // std of each dimension over valid rows
  };
  std::vector<Entry> entries;
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  ActivationProbe* probe = nullptr;
};

// Encoder output [batch*src_len, d_model].
Tensor encode(const ParameterSet& params, const ModelConfig& cfg, const TokenBatch& batch,
              const ForwardOptions& opts);

// Logits [batch, tgt_len, tgt_vocab].
Tensor forward(const ParameterSet& params, const ModelConfig& cfg, const TokenBatch& batch,
               const ForwardOptions& opts = {});

// Incremental decoder state for a set of hypotheses sharing one source.
class DecoderState {
 public:
  DecoderState(const ParameterSet& params, const ModelConfig& cfg,
               std::span<const int> source_tokens);

  // Appends tokens[r] at the next position of row r and returns next-token
  // logits [rows, tgt_vocab]. The first call fixes the row count.
  Tensor step(std::span<const int> tokens);
  // Keeps the rows listed in parents (with repetition), in that order.
  void reorder(std::span<const std::size_t> parents);

  std::size_t rows() const { return rows_; }
  std::size_t position() const { return position_; }
  std::size_t source_length() const { return src_len_; }

 private:
  const ParameterSet& params_;
  ModelConfig cfg_;
  std::size_t src_len_ = 0;
  std::size_t rows_ = 0;
  std::size_t position_ = 0;
  std::vector<Tensor> cross_k_, cross_v_;  // per layer [src_len, d_model]
  // self_k_[layer][row] holds position_ * d_model cached values.
  std::vector<std::vector<std::vector<Real>>> self_k_, self_v_;
};

// Closed-form parameter element count for a config.
std::size_t parameter_count(const ModelConfig& cfg);

}  // namespace NMT_PRECISION_NS
}  // namespace nmt
