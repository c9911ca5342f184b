#pragma once

// Holdout split, length filtering and length-bucketed micro-batching.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nmt/textnorm.hpp"

namespace nmt {

struct SplitSpec {
  std::size_t holdout_n = 1000;
};

// Last holdout_n pairs form the validation set; order is preserved. Throws
// usage_error when holdout_n >= pairs.size() (unless both are zero).
std::pair<std::vector<SentencePair>, std::vector<SentencePair>> holdout_split(
    const std::vector<SentencePair>& pairs, const SplitSpec& spec);

struct EncodedPair {
  std::vector<int> src;  // without EOS
  std::vector<int> tgt;  // without BOS/EOS
};

// Indices of pairs with at most max_len tokens on both sides.
std::vector<std::size_t> filter_by_length(std::span<const EncodedPair> pairs, std::size_t max_len);

struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;  // indices into the pair list
  std::size_t dropped = 0;                       // pairs that fit no batch
};

// Shuffles with (seed, epoch), sorts stably by padded length, packs
// consecutive pairs while batch_size * (longest side + 1) <= max_tokens on
// both sides, then shuffles batch order. Every pair that fits appears exactly
// once.
BatchPlan make_batches(std::span<const EncodedPair> pairs, std::size_t max_tokens,
                       std::uint64_t seed, std::uint64_t epoch);

// Fisher-Yates shuffle driven by std::mt19937_64 seeded from (seed, stream).
void seeded_shuffle(std::vector<std::size_t>& items, std::uint64_t seed, std::uint64_t stream);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, std::span<const std::string> lines);

}  // namespace nmt
