#pragma once

// Byte-pair encoding with an "@@" continuation marker.
//
// A word is split into code points and every symbol except the last carries
// the "@@" suffix, so "low" starts as ["l@@", "o@@", "w"]. A merge joins two
// adjacent symbols (left, right) into left-without-marker + right, which keeps
// the marker exactly on word-internal pieces.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace nmt {

inline constexpr std::string_view kContinuation = "@@";

using WordCounts = std::map<std::string, std::int64_t>;

// Whitespace-separated word frequencies over lines.
WordCounts count_words(std::span<const std::string> lines);

class MergeTable {
 public:
  using Pair = std::pair<std::string, std::string>;

  MergeTable() = default;
  explicit MergeTable(std::vector<Pair> merges);

  const std::vector<Pair>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }
  // Rank of a pair, or -1.
  int rank(const std::string& left, const std::string& right) const;

  // One "left right" line per merge.
  void save(const std::string& path) const;
  static MergeTable load(const std::string& path);

 private:
  std::vector<Pair> merges_;
  std::map<Pair, int> ranks_;
};

std::string merge_product(const std::string& left, const std::string& right);
// Initial marked symbols of a word.
std::vector<std::string> initial_symbols(std::string_view word);

class Vocabulary {
 public:
  // Starts with the four reserved symbols at ids 0..3.
  Vocabulary();

  // Adds a token if absent; returns its id.
  int add(const std::string& token, std::int64_t count = 0);
  std::optional<int> find(const std::string& token) const;
  int id_or_unk(const std::string& token) const;
  const std::string& token(int id) const;
  std::int64_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }
  void set_count(int id, std::int64_t count) { counts_.at(static_cast<std::size_t>(id)) = count; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // "token<TAB>id<TAB>count" lines in id order.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && counts_ == other.counts_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, int> ids_;
};

struct BpeOptions {
  // Number of merges to learn; ignored when target_vocab_size is set.
  std::size_t merges = 0;
  // Stop merging once the vocabulary reaches this size.
  std::optional<std::size_t> target_vocab_size;
};

struct BpeModel {
  MergeTable table;
  Vocabulary vocab;
};

// Greedy BPE: each step merges the most frequent adjacent symbol pair
// (occurrences weighted by word count), ties broken by the smallest
// (left, right) in byte order. Stops early when no pair is left. Throws
// data_error on an empty corpus.
BpeModel learn_bpe(const WordCounts& corpus, const BpeOptions& options);

// Applies merges in table order, each one left to right over the word.
std::vector<std::string> apply_bpe(std::string_view word, const MergeTable& table);

// Segments every whitespace-separated word of a line, with a per-instance
// word cache.
class BpeSegmenter {
 public:
  explicit BpeSegmenter(const MergeTable& table) : table_(table) {}
  std::vector<std::string> segment_line(std::string_view line);

 private:
  const MergeTable& table_;
  std::unordered_map<std::string, std::vector<std::string>> cache_;
};

std::vector<int> encode_ids(std::span<const std::string> tokens, const Vocabulary& vocab,
                            bool add_bos_eos);
// Drops reserved ids, removes continuation markers and joins words with a
// single space. Throws data_error on an out-of-range id.
std::string decode_ids(std::span<const int> ids, const Vocabulary& vocab);

struct VocabStats {
  std::size_t size = 0;
  std::size_t reserved = 0;
  // Tokens that are one code point (with or without marker).
  std::size_t characters = 0;
  std::size_t merge_products = 0;
};

VocabStats vocab_stats(const Vocabulary& vocab);

}  // namespace nmt
