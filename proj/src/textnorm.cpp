#include "nmt/textnorm.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nmt/error.hpp"

namespace nmt {

namespace utf8 {

void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) append(out, cp);
  return out;
}

std::optional<std::u32string> decode_strict(std::string_view bytes) {
  std::u32string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  while (i < bytes.size()) {
    const auto b0 = static_cast<unsigned char>(bytes[i]);
    std::size_t extra;
    char32_t cp, min;
    if (b0 < 0x80) {
      out.push_back(b0);
      ++i;
      continue;
    } else if ((b0 & 0xE0) == 0xC0) {
      extra = 1, cp = b0 & 0x1F, min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
      extra = 2, cp = b0 & 0x0F, min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
      extra = 3, cp = b0 & 0x07, min = 0x10000;
    } else {
      return std::nullopt;
    }
    if (i + extra >= bytes.size()) return std::nullopt;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto b = static_cast<unsigned char>(bytes[i + k]);
      if ((b & 0xC0) != 0x80) return std::nullopt;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return std::nullopt;
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

std::u32string decode(std::string_view s) {
  auto cps = decode_strict(s);
  if (!cps) throw data_error("invalid UTF-8 text");
  return *cps;
}

std::size_t length(std::string_view s) {
  std::size_t n = 0;
  for (char c : s)
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  return n;
}

std::vector<std::string> split_code_points(std::string_view s) {
  std::vector<std::string> out;
  for (char c : s) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80 || out.empty()) out.emplace_back();
    out.back().push_back(c);
  }
  return out;
}

}  // namespace utf8

namespace {

bool allowed_code_point(char32_t cp) {
  if (cp < 0x20) return cp == '\t';
  if (cp == 0xFFFD) return false;
  if (cp >= 0xD800 && cp <= 0xDFFF) return false;
  return cp <= 0x10FFFF;
}

std::string cp_str(char32_t cp) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(cp));
  return buf;
}

bool is_fullwidth(char32_t cp) { return (cp >= 0xFF01 && cp <= 0xFF5E) || cp == 0x3000; }

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return std::string(s.substr(first, last - first + 1));
}

// A literal single character or U+XXXX.
std::optional<char32_t> parse_code_point(std::string_view field) {
  if (field.size() > 2 && (field[0] == 'U' || field[0] == 'u') && field[1] == '+') {
    char32_t cp = 0;
    for (char c : field.substr(2)) {
      int digit;
      if (c >= '0' && c <= '9') digit = c - '0';
      else if (c >= 'a' && c <= 'f') digit = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') digit = c - 'A' + 10;
      else return std::nullopt;
      cp = cp * 16 + static_cast<char32_t>(digit);
      if (cp > 0x10FFFF) return std::nullopt;
    }
    return cp;
  }
  auto cps = utf8::decode_strict(field);
  if (!cps || cps->size() != 1) return std::nullopt;
  return (*cps)[0];
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, '\t')) fields.push_back(f);
  return fields;
}

// Calls fn(line_no, line) for every non-blank, non-comment line.
template <typename Fn>
void for_each_data_line(std::istream& in, Fn fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    fn(line_no, line);
  }
}

}  // namespace

std::optional<std::string> validate_encoding(std::string_view raw_bytes) {
  auto cps = utf8::decode_strict(raw_bytes);
  if (!cps) return std::nullopt;
  for (char32_t cp : *cps)
    if (!allowed_code_point(cp)) return std::nullopt;
  return std::string(raw_bytes);
}

std::string to_halfwidth(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : utf8::decode(s)) {
    if (cp >= 0xFF01 && cp <= 0xFF5E) cp -= 0xFEE0;
    else if (cp == 0x3000) cp = 0x20;
    utf8::append(out, cp);
  }
  return out;
}

const EntityTable& EntityTable::builtin() {
  static const EntityTable table = [] {
    EntityTable t;
    t.entries_ = {{"amp", U'&'}, {"lt", U'<'},   {"gt", U'>'},
                  {"quot", U'"'}, {"apos", U'\''}, {"nbsp", char32_t{0xA0}}};
    return t;
  }();
  return table;
}

EntityTable EntityTable::load(std::istream& in) {
  EntityTable t = builtin();
  for_each_data_line(in, [&](std::size_t line_no, const std::string& line) {
    const auto fields = split_tabs(line);
    std::optional<char32_t> cp;
    if (fields.size() == 2) cp = parse_code_point(fields[1]);
    if (!cp || fields[0].empty() || !allowed_code_point(*cp))
      throw data_error("entity table line " + std::to_string(line_no) + ": expected name<TAB>char");
    t.entries_[fields[0]] = *cp;
  });
  return t;
}

EntityTable EntityTable::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open entity table '" + path + "'");
  return load(in);
}

std::optional<char32_t> EntityTable::find(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string decode_html_refs(std::string_view s, const EntityTable& table) {
  auto is_alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); };
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  auto hex_value = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };

  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '&') {
      out.push_back(s[i++]);
      continue;
    }
    std::optional<char32_t> cp;
    std::size_t j = i + 1;
    if (j < s.size() && s[j] == '#') {
      ++j;
      const bool hex = j < s.size() && (s[j] == 'x' || s[j] == 'X');
      if (hex) ++j;
      const std::size_t digits_begin = j;
      std::uint64_t value = 0;
      while (j < s.size()) {
        const int v = hex ? hex_value(s[j]) : (is_digit(s[j]) ? s[j] - '0' : -1);
        if (v < 0) break;
        value = std::min<std::uint64_t>(value * (hex ? 16 : 10) + static_cast<unsigned>(v),
                                        0x110000);
        ++j;
      }
      if (j > digits_begin && j < s.size() && s[j] == ';' && value <= 0x10FFFF &&
          allowed_code_point(static_cast<char32_t>(value)))
        cp = static_cast<char32_t>(value);
    } else {
      while (j < s.size() && (is_alpha(s[j]) || (j > i + 1 && is_digit(s[j])))) ++j;
      if (j > i + 1 && j < s.size() && s[j] == ';') cp = table.find(s.substr(i + 1, j - i - 1));
    }
    if (cp) {
      utf8::append(out, *cp);
      i = j + 1;
    } else {
      out.push_back(s[i++]);
    }
  }
  return out;
}

CharMapping CharMapping::from_entries(const std::vector<std::pair<char32_t, char32_t>>& entries) {
  CharMapping m;
  for (const auto& [key, value] : entries) {
    if (!m.entries_.emplace(key, value).second)
      throw data_error("character mapping: duplicate key " + cp_str(key));
  }
  for (const auto& [key, value] : m.entries_) {
    if (!allowed_code_point(key) || !allowed_code_point(value))
      throw data_error("character mapping: disallowed code point in entry for " +
                       cp_str(key));
    if (is_fullwidth(value))
      throw data_error("character mapping: value for " + cp_str(key) +
                       " is a fullwidth form");
    auto chained = m.entries_.find(value);
    if (value != key && chained != m.entries_.end() && chained->second != value)
      throw data_error("character mapping: value for " + cp_str(key) +
                       " is itself remapped");
  }
  return m;
}

CharMapping CharMapping::load(std::istream& in) {
  std::vector<std::pair<char32_t, char32_t>> entries;
  for_each_data_line(in, [&](std::size_t line_no, const std::string& line) {
    const auto fields = split_tabs(line);
    std::optional<char32_t> key, value;
    if (fields.size() == 2) key = parse_code_point(fields[0]), value = parse_code_point(fields[1]);
    if (!key || !value)
      throw data_error("mapping line " + std::to_string(line_no) +
                       ": expected two tab-separated code points");
    entries.emplace_back(*key, *value);
  });
  return from_entries(entries);
}

CharMapping CharMapping::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open mapping file '" + path + "'");
  return load(in);
}

char32_t CharMapping::apply(char32_t cp) const {
  auto it = entries_.find(cp);
  return it == entries_.end() ? cp : it->second;
}

std::string map_chars(std::string_view s, const CharMapping& m) {
  if (m.size() == 0) return std::string(s);
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : utf8::decode(s)) utf8::append(out, m.apply(cp));
  return out;
}

void CleaningReport::merge(const CleaningReport& other) {
  input += other.input;
  kept += other.kept;
  dropped_encoding += other.dropped_encoding;
  dropped_empty += other.dropped_empty;
  for (const auto& [rule, n] : other.transformed) transformed[rule] += n;
}

std::string normalize_text(std::string_view s, const CharMapping& m, const EntityTable& table,
                           bool changed[3]) {
  std::string cur(s);
  if (changed) changed[0] = changed[1] = changed[2] = false;
  // Each round that changes anything either rewrites a character to a
  // non-key / halfwidth form or shortens the text, so this terminates.
  for (;;) {
    std::string a = map_chars(cur, m);
    std::string b = to_halfwidth(a);
    std::string c = decode_html_refs(b, table);
    const bool fired[3] = {a != cur, b != a, c != b};
    if (changed)
      for (int r = 0; r < 3; ++r) changed[r] = changed[r] || fired[r];
    if (c == cur) return c;
    cur = std::move(c);
  }
}

CleanResult clean_corpus(const std::vector<SentencePair>& raw, const CharMapping& m,
                         const EntityTable& table) {
  static const char* const kRules[3] = {"map_chars", "halfwidth", "html_refs"};
  CleanResult result;
  result.report.input = raw.size();
  for (const char* rule : kRules) result.report.transformed[rule] = 0;
  for (const auto& pair : raw) {
    auto src = validate_encoding(pair.src);
    auto tgt = validate_encoding(pair.tgt);
    if (!src || !tgt) {
      ++result.report.dropped_encoding;
      continue;
    }
    bool changed_src[3], changed_tgt[3];
    SentencePair out{normalize_text(*src, m, table, changed_src),
                     normalize_text(*tgt, m, table, changed_tgt), pair.line_no};
    if (trim(out.src).empty() || trim(out.tgt).empty()) {
      ++result.report.dropped_empty;
      continue;
    }
    for (int r = 0; r < 3; ++r)
      if (changed_src[r] || changed_tgt[r]) ++result.report.transformed[kRules[r]];
    ++result.report.kept;
    result.pairs.push_back(std::move(out));
  }
  return result;
}

std::vector<SentencePair> read_parallel(const std::string& src_path, const std::string& tgt_path) {
  std::ifstream src(src_path, std::ios::binary), tgt(tgt_path, std::ios::binary);
  if (!src) throw data_error("cannot open '" + src_path + "'");
  if (!tgt) throw data_error("cannot open '" + tgt_path + "'");
  std::vector<SentencePair> pairs;
  std::string a, b;
  for (std::size_t line_no = 1;; ++line_no) {
    const bool has_a = static_cast<bool>(std::getline(src, a));
    const bool has_b = static_cast<bool>(std::getline(tgt, b));
    if (!has_a && !has_b) break;
    if (has_a != has_b)
      throw data_error("'" + src_path + "' and '" + tgt_path + "' differ in line count at line " +
                       std::to_string(line_no));
    if (!a.empty() && a.back() == '\r') a.pop_back();
    if (!b.empty() && b.back() == '\r') b.pop_back();
    pairs.push_back({a, b, line_no});
  }
  return pairs;
}

Segmenter::Segmenter(const std::vector<std::string>& words) {
  for (const auto& w : words) {
    auto cps = utf8::decode(w);
    if (cps.empty()) continue;
    max_len_ = std::max(max_len_, cps.size());
    words_.insert(std::move(cps));
  }
}

Segmenter Segmenter::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open lexicon '" + path + "'");
  std::vector<std::string> words;
  for_each_data_line(in, [&](std::size_t, const std::string& line) { words.push_back(trim(line)); });
  return Segmenter(words);
}

std::vector<std::string> Segmenter::segment(std::string_view s) const {
  auto is_space = [](char32_t c) { return c == ' ' || c == '\t'; };
  auto is_ascii_word = [](char32_t c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
  };
  const std::u32string text = utf8::decode(s);
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t take = 0;
    const std::size_t limit = std::min(max_len_, text.size() - i);
    for (std::size_t n = limit; n >= 1 && take == 0; --n) {
      const std::u32string candidate = text.substr(i, n);
      bool has_space = false;
      for (char32_t c : candidate) has_space = has_space || is_space(c);
      if (!has_space && words_.count(candidate)) take = n;
    }
    if (take == 0 && is_ascii_word(text[i])) {
      take = 1;
      while (i + take < text.size() && is_ascii_word(text[i + take])) ++take;
    }
    if (take == 0) take = 1;
    tokens.push_back(utf8::encode(text.substr(i, take)));
    i += take;
  }
  return tokens;
}

std::string Segmenter::segment_line(std::string_view s) const {
  std::string out;
  for (const auto& t : segment(s)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace nmt
