#pragma once

// Beam search and greedy decoding over the incremental decoder state.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nmt/config.hpp"
#include "nmt/model.hpp"
#include "nmt/subword.hpp"

namespace nmt {

struct Hypothesis {
  std::vector<int> tokens;  // starts with BOS
  double logprob_sum = 0.0;
  bool finished = false;

  // Generated tokens, EOS included.
  std::size_t length() const { return tokens.size() - 1; }
};

// logprob_sum / length^alpha.
double normalized_score(const Hypothesis& h, double alpha);

struct BeamOptions {
  std::size_t beam = 4;
  std::size_t max_len = 50;  // generated tokens, EOS included
  double alpha = 1.0;
};

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> finished;  // retirement order
  std::size_t steps = 0;
};

// Each step expands every live hypothesis over the full vocabulary and walks
// the candidates in descending logprob_sum order: EOS candidates retire into
// the finished pool, others fill the beam until it holds `beam` entries.
// Hypotheses reaching max_len retire unfinished-by-EOS. Search stops once no
// live hypothesis can reach the best finished normalized score, since
// log-probabilities are never positive. Throws usage_error on an empty
// source, beam 0 or max_len 0.
BeamResult beam_search(const ParameterSet& params, const ModelConfig& cfg,
                       std::span<const int> source, const BeamOptions& options);

// Argmax token at every step until EOS or max_len.
Hypothesis greedy_decode(const ParameterSet& params, const ModelConfig& cfg,
                         std::span<const int> source, std::size_t max_len);

// Scores a complete target sequence (without BOS; EOS included if present)
// with one teacher-forced forward pass.
double sequence_logprob(const ParameterSet& params, const ModelConfig& cfg,
                        std::span<const int> source, std::span<const int> target);

// Hypothesis length cap for a source: source tokens + offset, bounded by
// what the model's position limit allows.
std::size_t decode_length_limit(const ModelConfig& cfg, std::size_t source_len, int offset);

// Translates a file line by line; returns the number of lines written. Empty
// input lines produce empty output lines. Throws data_error before writing
// anything if the vocabularies do not match the model.
std::size_t translate_file(const ParameterSet& params, const ModelConfig& cfg,
                           const MergeTable& src_merges, const Vocabulary& src_vocab,
                           const Vocabulary& tgt_vocab, const std::string& input_path,
                           const std::string& output_path, const DecodeConfig& decode);

}  // namespace nmt
