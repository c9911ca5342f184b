#pragma once

// Corpus-level character BLEU.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nmt {

// Code points of s with space characters removed.
std::vector<std::string> char_tokenize(std::string_view s);

enum class BleuSmoothing {
  none,
  // Zero match counts are replaced by 0.1 (sentence-level debugging only).
  floor,
};

struct BleuReport {
  double score = 0.0;  // 0..100
  std::vector<double> precisions;
  std::vector<std::size_t> matches;
  std::vector<std::size_t> totals;
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

// Clipped n-gram precisions for orders 1..max_n summed over the corpus,
// geometric mean, and BP = min(1, exp(1 - ref_len / hyp_len)). Throws
// usage_error on mismatched or empty lists, or max_n < 1.
BleuReport bleu(std::span<const std::string> hyps, std::span<const std::string> refs,
                int max_n = 4, BleuSmoothing smoothing = BleuSmoothing::none);

}  // namespace nmt
