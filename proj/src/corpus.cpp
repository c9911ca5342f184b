#include "nmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>

#include "nmt/error.hpp"

namespace nmt {

std::pair<std::vector<SentencePair>, std::vector<SentencePair>> holdout_split(
    const std::vector<SentencePair>& pairs, const SplitSpec& spec) {
  if (spec.holdout_n > 0 && spec.holdout_n >= pairs.size())
    throw usage_error("holdout of " + std::to_string(spec.holdout_n) +
                      " pairs leaves no training data out of " + std::to_string(pairs.size()));
  const auto cut = pairs.begin() + static_cast<std::ptrdiff_t>(pairs.size() - spec.holdout_n);
  return {std::vector<SentencePair>(pairs.begin(), cut), std::vector<SentencePair>(cut, pairs.end())};
}

std::vector<std::size_t> filter_by_length(std::span<const EncodedPair> pairs, std::size_t max_len) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (pairs[i].src.size() <= max_len && pairs[i].tgt.size() <= max_len) keep.push_back(i);
  return keep;
}

void seeded_shuffle(std::vector<std::size_t>& items, std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(seq);
  for (std::size_t i = items.size(); i > 1; --i) {
    // Rejection sampling keeps the draw uniform on [0, i).
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % i;
    std::uint64_t r;
    do r = rng();
    while (r >= limit);
    std::swap(items[i - 1], items[r % i]);
  }
}

BatchPlan make_batches(std::span<const EncodedPair> pairs, std::size_t max_tokens,
                       std::uint64_t seed, std::uint64_t epoch) {
  BatchPlan plan;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].src.size() + 1 > max_tokens || pairs[i].tgt.size() + 1 > max_tokens)
      ++plan.dropped;
    else
      order.push_back(i);
  }
  seeded_shuffle(order, seed, 2 * epoch);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto la = std::make_pair(pairs[a].tgt.size(), pairs[a].src.size());
    const auto lb = std::make_pair(pairs[b].tgt.size(), pairs[b].src.size());
    return la < lb;
  });

  std::vector<std::size_t> current;
  std::size_t max_src = 0, max_tgt = 0;
  for (std::size_t idx : order) {
    const std::size_t s = std::max(max_src, pairs[idx].src.size() + 1);
    const std::size_t t = std::max(max_tgt, pairs[idx].tgt.size() + 1);
    const std::size_t n = current.size() + 1;
    if (!current.empty() && (n * s > max_tokens || n * t > max_tokens)) {
      plan.batches.push_back(std::move(current));
      current.clear();
      max_src = pairs[idx].src.size() + 1;
      max_tgt = pairs[idx].tgt.size() + 1;
    } else {
      max_src = s;
      max_tgt = t;
    }
    current.push_back(idx);
  }
  if (!current.empty()) plan.batches.push_back(std::move(current));

  std::vector<std::size_t> batch_order(plan.batches.size());
  for (std::size_t i = 0; i < batch_order.size(); ++i) batch_order[i] = i;
  seeded_shuffle(batch_order, seed, 2 * epoch + 1);
  std::vector<std::vector<std::size_t>> shuffled;
  shuffled.reserve(plan.batches.size());
  for (std::size_t i : batch_order) shuffled.push_back(std::move(plan.batches[i]));
  plan.batches = std::move(shuffled);
  return plan;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::string& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write '" + path + "'");
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw data_error("error writing '" + path + "'");
}

}  // namespace nmt
