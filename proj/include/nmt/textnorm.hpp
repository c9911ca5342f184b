#pragma once

// Sentence-level text cleaning: encoding validation, character mapping,
// fullwidth folding and HTML character-reference decoding.

#include <cstddef>
#include <istream>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nmt {

namespace utf8 {

// Decodes text already known to be valid UTF-8.
std::u32string decode(std::string_view s);
std::string encode(std::u32string_view s);
void append(std::string& out, char32_t cp);
std::size_t length(std::string_view s);
// Each code point as its own UTF-8 string.
std::vector<std::string> split_code_points(std::string_view s);
// Strict decoding: rejects overlong forms, surrogates and values above
// U+10FFFF.
std::optional<std::u32string> decode_strict(std::string_view bytes);

}  // namespace utf8

// Returns the text iff bytes are well-formed UTF-8 without U+FFFD and without
// C0 controls other than tab.
std::optional<std::string> validate_encoding(std::string_view raw_bytes);

// U+FF01..U+FF5E shift down by 0xFEE0; U+3000 becomes U+0020.
std::string to_halfwidth(std::string_view s);

class EntityTable {
 public:
  // amp, lt, gt, quot, apos, nbsp.
  static const EntityTable& builtin();
  // Builtin entries plus "name<TAB>value" lines, where value is a literal
  // character or U+XXXX. '#' starts a comment line.
  static EntityTable load(std::istream& in);
  static EntityTable load_file(const std::string& path);

  std::optional<char32_t> find(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, char32_t, std::less<>> entries_;
};

// Replaces "&name;", "&#N;" and "&#xN;" in a single left-to-right pass.
// Unknown names, malformed references and references to code points that
// validate_encoding would reject are copied unchanged.
std::string decode_html_refs(std::string_view s,
                             const EntityTable& table = EntityTable::builtin());

class CharMapping {
 public:
  CharMapping() = default;
  // Throws data_error on duplicate keys, on a value that is itself a
  // non-identity key, or on a value the halfwidth rule would rewrite.
  static CharMapping from_entries(const std::vector<std::pair<char32_t, char32_t>>& entries);
  // Two tab-separated code points per line (literal or U+XXXX); '#' starts a
  // comment line; blank lines ignored.
  static CharMapping load(std::istream& in);
  static CharMapping load_file(const std::string& path);

  char32_t apply(char32_t cp) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<char32_t, char32_t>& entries() const { return entries_; }

 private:
  std::map<char32_t, char32_t> entries_;
};

std::string map_chars(std::string_view s, const CharMapping& m);

struct SentencePair {
  std::string src;
  std::string tgt;
  std::size_t line_no = 0;
};

struct CleaningReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t dropped_encoding = 0;
  // Pairs with a side that is blank after cleaning.
  std::size_t dropped_empty = 0;
  // Pairs changed by each rule: "map_chars", "halfwidth", "html_refs".
  std::map<std::string, std::size_t> transformed;

  void merge(const CleaningReport& other);
};

// Applies map_chars, to_halfwidth and decode_html_refs in that order and
// repeats until nothing changes, so the result is a fixed point of the
// pipeline. changed[i] reports whether rule i fired.
std::string normalize_text(std::string_view s, const CharMapping& m, const EntityTable& table,
                           bool changed[3] = nullptr);

struct CleanResult {
  std::vector<SentencePair> pairs;
  CleaningReport report;
};

// Raw pairs carry unvalidated bytes. Output order follows input order.
CleanResult clean_corpus(const std::vector<SentencePair>& raw, const CharMapping& m,
                         const EntityTable& table = EntityTable::builtin());

// Reads two line-aligned files; a trailing '\r' is stripped from each line.
// Throws data_error if the files cannot be opened or differ in line count.
std::vector<SentencePair> read_parallel(const std::string& src_path, const std::string& tgt_path);

// Greedy longest-match word segmentation against a lexicon. Whitespace is
// kept as a boundary, ASCII letter/digit runs stay whole and any other code
// point not covered by a lexicon word becomes its own token.
class Segmenter {
 public:
  explicit Segmenter(const std::vector<std::string>& words);
  // One word per line; '#' comment lines.
  static Segmenter load_file(const std::string& path);

  std::vector<std::string> segment(std::string_view s) const;
  // Tokens joined by single spaces.
  std::string segment_line(std::string_view s) const;

 private:
  std::set<std::u32string> words_;
  std::size_t max_len_ = 0;
};

}  // namespace nmt
