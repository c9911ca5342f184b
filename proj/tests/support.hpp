#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "nmt/corpus.hpp"
#include "nmt/decode.hpp"
#include "nmt/model.hpp"
#include "nmt/special_tokens.hpp"

namespace nmt::testing {

// Fresh scratch directory under the build tree's temp area.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("nmt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// Reversal task: random sequences over ids [4, vocab), target = reversed source.
inline std::vector<EncodedPair> reversal_pairs(std::size_t n, int vocab, std::size_t max_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(4, vocab - 1);
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::vector<EncodedPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    EncodedPair p;
    const std::size_t l = len(rng);
    for (std::size_t j = 0; j < l; ++j) p.src.push_back(tok(rng));
    p.tgt.assign(p.src.rbegin(), p.src.rend());
    out.push_back(std::move(p));
  }
  return out;
}

// Position-wise greedy accuracy over reference tokens plus EOS; missing and
// extra positions count as errors.
inline double greedy_token_accuracy(const ParameterSet& params, const ModelConfig& cfg,
                                    const std::vector<EncodedPair>& pairs) {
  std::size_t correct = 0, total = 0;
  for (const auto& p : pairs) {
    const Hypothesis h = greedy_decode(params, cfg, p.src, p.tgt.size() + 2);
    std::vector<int> ref = p.tgt;
    ref.push_back(kEosId);
    std::vector<int> hyp(h.tokens.begin() + 1, h.tokens.end());
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i < hyp.size() && hyp[i] == ref[i]) ++correct;
    total += std::max(ref.size(), hyp.size());
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

inline ModelConfig tiny_model(int vocab, int layers, int d, int heads, int clip) {
  ModelConfig c;
  c.enc_layers = layers;
  c.dec_layers = layers;
  c.d_model = d;
  c.heads = heads;
  c.rel_clip = clip;
  c.dropout = 0.0;
  c.src_vocab = vocab;
  c.tgt_vocab = vocab;
  c.max_len = 64;
  return c;
}

// Random batch of `rows` source/target sequences with lengths in [1, max_len].
inline TokenBatch random_batch(const ModelConfig& cfg, std::size_t rows, std::size_t max_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> src_tok(4, cfg.src_vocab - 1), tgt_tok(4, cfg.tgt_vocab - 1);
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::vector<std::vector<int>> src(rows), tgt(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = len(rng); i > 0; --i) src[r].push_back(src_tok(rng));
    for (std::size_t i = len(rng); i > 0; --i) tgt[r].push_back(tgt_tok(rng));
  }
  return TokenBatch::build(src, tgt);
}

inline double grad_norm(const Tensor& t) {
  double s = 0;
  for (Real g : t.grad()) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

// |d loss / d src_embed| / |d loss / d top decoder FFN output matrix| at
// init, on one seeded batch.
inline double embedding_to_top_ratio(const ModelConfig& cfg, std::uint64_t seed, const TokenBatch& batch) {
  ParameterSet params = init_parameters(cfg, seed);
  const Tensor logits = forward(params, cfg, batch);
  const Tensor flat = reshape(logits, {batch.batch * batch.tgt_len, static_cast<std::size_t>(cfg.tgt_vocab)});
  backward(cross_entropy_smoothed(flat, batch.tgt_out, Real(0.1), kPadId));
  const std::string top = "dec." + std::to_string(cfg.dec_layers - 1) + ".ffn.fc2.weight";
  return grad_norm(params.at("src_embed")) / grad_norm(params.at(top));
}

struct ExhaustiveBest {
  std::vector<int> tokens;  // generated tokens, EOS included when present
  double score = 0.0;
  std::size_t candidates = 0;
};

// Scores every distinct hypothesis of up to max_len generated tokens over the
// whole target vocabulary with independent teacher-forced passes: all
// vocab^max_len sequences are cut after their first EOS.
inline ExhaustiveBest exhaustive_search(const ParameterSet& params, const ModelConfig& cfg,
                                        std::span<const int> source, std::size_t max_len, double alpha) {
  const std::size_t v = static_cast<std::size_t>(cfg.tgt_vocab);
  std::size_t total = 1;
  for (std::size_t i = 0; i < max_len; ++i) total *= v;
  std::set<std::vector<int>> seen;
  ExhaustiveBest best;
  best.score = -std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<int> seq;
    std::size_t c = code;
    for (std::size_t i = 0; i < max_len; ++i, c /= v) {
      seq.push_back(static_cast<int>(c % v));
      if (seq.back() == kEosId) break;
    }
    if (!seen.insert(seq).second) continue;
    const double s = sequence_logprob(params, cfg, source, seq) /
                     std::pow(static_cast<double>(seq.size()), alpha);
    if (s > best.score) best = {seq, s, 0};
  }
  best.candidates = seen.size();
  return best;
}

}  // namespace nmt::testing
