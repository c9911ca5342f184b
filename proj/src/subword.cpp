#include "nmt/subword.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "nmt/error.hpp"
#include "nmt/special_tokens.hpp"
#include "nmt/textnorm.hpp"

namespace nmt {

namespace {

bool has_marker(std::string_view s) {
  return s.size() >= kContinuation.size() &&
         s.substr(s.size() - kContinuation.size()) == kContinuation;
}

std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) words.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return words;
}

// Merges every left-to-right, non-overlapping occurrence of (left, right).
bool merge_in_place(std::vector<std::string>& symbols, const std::string& left,
                    const std::string& right, const std::string& product) {
  bool any = false;
  std::size_t out = 0;
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      symbols[out++] = product;
      i += 2;
      any = true;
    } else {
      if (out != i) symbols[out] = std::move(symbols[i]);
      ++out;
      ++i;
    }
  }
  symbols.resize(out);
  return any;
}

}  // namespace

WordCounts count_words(std::span<const std::string> lines) {
  WordCounts counts;
  for (const auto& line : lines)
    for (auto& w : split_whitespace(line)) ++counts[w];
  return counts;
}

MergeTable::MergeTable(std::vector<Pair> merges) : merges_(std::move(merges)) {
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    if (!ranks_.emplace(merges_[r], static_cast<int>(r)).second)
      throw data_error("merge table: duplicate merge '" + merges_[r].first + " " +
                       merges_[r].second + "'");
  }
}

int MergeTable::rank(const std::string& left, const std::string& right) const {
  auto it = ranks_.find(Pair(left, right));
  return it == ranks_.end() ? -1 : it->second;
}

void MergeTable::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write merge table '" + path + "'");
  for (const auto& [l, r] : merges_) out << l << ' ' << r << '\n';
  if (!out) throw data_error("error writing merge table '" + path + "'");
}

MergeTable MergeTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open merge table '" + path + "'");
  std::vector<Pair> merges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_whitespace(line);
    if (fields.size() != 2)
      throw data_error("merge table '" + path + "' line " + std::to_string(line_no) +
                       ": expected 'left right'");
    merges.emplace_back(fields[0], fields[1]);
  }
  return MergeTable(std::move(merges));
}

std::string merge_product(const std::string& left, const std::string& right) {
  if (!has_marker(left)) throw data_error("merge left operand '" + left + "' is word-final");
  return left.substr(0, left.size() - kContinuation.size()) + right;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  auto symbols = utf8::split_code_points(word);
  for (std::size_t i = 0; i + 1 < symbols.size(); ++i) symbols[i] += kContinuation;
  return symbols;
}

Vocabulary::Vocabulary() {
  for (int id = 0; id < kNumReserved; ++id) add(std::string(reserved_token(id)));
}

int Vocabulary::add(const std::string& token, std::int64_t count) {
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) {
    tokens_.push_back(token);
    counts_.push_back(count);
  }
  return it->second;
}

std::optional<int> Vocabulary::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id_or_unk(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw data_error("token id " + std::to_string(id) + " out of range for vocabulary of " +
                     std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write vocabulary '" + path + "'");
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    out << tokens_[i] << '\t' << i << '\t' << counts_[i] << '\n';
  if (!out) throw data_error("error writing vocabulary '" + path + "'");
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open vocabulary '" + path + "'");
  Vocabulary v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string token, id_field, count_field;
    if (!std::getline(ss, token, '\t') || !std::getline(ss, id_field, '\t') ||
        !std::getline(ss, count_field))
      throw data_error("vocabulary '" + path + "' line " + std::to_string(line_no) +
                       ": expected token<TAB>id<TAB>count");
    long long id, count;
    try {
      id = std::stoll(id_field);
      count = std::stoll(count_field);
    } catch (const std::exception&) {
      throw data_error("vocabulary '" + path + "' line " + std::to_string(line_no) +
                       ": bad number");
    }
    if (id != static_cast<long long>(line_no) - 1)
      throw data_error("vocabulary '" + path + "' line " + std::to_string(line_no) +
                       ": ids must be consecutive from 0");
    if (id < kNumReserved) {
      if (token != reserved_token(static_cast<int>(id)))
        throw data_error("vocabulary '" + path + "': reserved id " + std::to_string(id) +
                         " must be " + std::string(reserved_token(static_cast<int>(id))));
      v.counts_[static_cast<std::size_t>(id)] = count;
      continue;
    }
    if (v.find(token))
      throw data_error("vocabulary '" + path + "': duplicate token '" + token + "'");
    v.add(token, count);
  }
  return v;
}

BpeModel learn_bpe(const WordCounts& corpus, const BpeOptions& options) {
  if (corpus.empty()) throw data_error("empty corpus");
  using Pair = MergeTable::Pair;

  std::vector<std::vector<std::string>> words;
  std::vector<std::int64_t> freq;
  std::set<std::string> characters;
  for (const auto& [word, count] : corpus) {
    if (word.empty() || count <= 0) continue;
    words.push_back(initial_symbols(word));
    freq.push_back(count);
    characters.insert(words.back().begin(), words.back().end());
  }
  if (words.empty()) throw data_error("empty corpus");

  std::map<Pair, std::int64_t> counts;
  // Ordered by (-count, pair) so begin() is the next merge.
  std::set<std::pair<std::int64_t, Pair>> queue;
  std::map<Pair, std::set<std::size_t>> where;

  auto adjust = [&](const Pair& p, std::int64_t delta) {
    auto it = counts.find(p);
    const std::int64_t old = it == counts.end() ? 0 : it->second;
    if (old > 0) queue.erase({-old, p});
    const std::int64_t now = old + delta;
    if (now > 0) {
      counts[p] = now;
      queue.insert({-now, p});
    } else if (it != counts.end()) {
      counts.erase(it);
    }
  };
  auto add_word = [&](std::size_t w, std::int64_t sign) {
    const auto& s = words[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      Pair p(s[i], s[i + 1]);
      adjust(p, sign * freq[w]);
      if (sign > 0) where[p].insert(w);
    }
  };
  for (std::size_t w = 0; w < words.size(); ++w) add_word(w, +1);

  std::vector<Pair> merges;
  std::set<std::string> products;
  auto vocab_size = [&] { return kNumReserved + characters.size() + products.size(); };
  for (;;) {
    if (options.target_vocab_size) {
      if (vocab_size() >= *options.target_vocab_size) break;
    } else if (merges.size() >= options.merges) {
      break;
    }
    if (queue.empty()) break;
    const Pair best = queue.begin()->second;
    const std::string product = merge_product(best.first, best.second);
    // Copy: add_word mutates `where`.
    const std::set<std::size_t> affected = where[best];
    for (std::size_t w : affected) {
      add_word(w, -1);
      merge_in_place(words[w], best.first, best.second, product);
      add_word(w, +1);
    }
    where.erase(best);
    merges.push_back(best);
    products.insert(product);
  }

  BpeModel model{MergeTable(std::move(merges)), Vocabulary()};
  for (const auto& c : characters) model.vocab.add(c);
  for (const auto& [l, r] : model.table.merges()) model.vocab.add(merge_product(l, r));
  for (std::size_t w = 0; w < words.size(); ++w)
    for (const auto& s : words[w]) {
      const int id = *model.vocab.find(s);
      model.vocab.set_count(id, model.vocab.count(id) + freq[w]);
    }
  return model;
}

std::vector<std::string> apply_bpe(std::string_view word, const MergeTable& table) {
  std::vector<std::string> symbols = initial_symbols(word);
  int last = -1;
  for (;;) {
    int best = -1;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const int r = table.rank(symbols[i], symbols[i + 1]);
      if (r > last && (best < 0 || r < best)) best = r;
    }
    if (best < 0) return symbols;
    const auto& [l, r] = table.merges()[static_cast<std::size_t>(best)];
    merge_in_place(symbols, l, r, merge_product(l, r));
    last = best;
  }
}

std::vector<std::string> BpeSegmenter::segment_line(std::string_view line) {
  std::vector<std::string> out;
  for (auto& word : split_whitespace(line)) {
    auto it = cache_.find(word);
    if (it == cache_.end()) it = cache_.emplace(word, apply_bpe(word, table_)).first;
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

std::vector<int> encode_ids(std::span<const std::string> tokens, const Vocabulary& vocab,
                            bool add_bos_eos) {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 2);
  if (add_bos_eos) ids.push_back(kBosId);
  for (const auto& t : tokens) ids.push_back(vocab.id_or_unk(t));
  if (add_bos_eos) ids.push_back(kEosId);
  return ids;
}

std::string decode_ids(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  bool open_word = false;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (id < kNumReserved) continue;
    if (!open_word && !out.empty()) out.push_back(' ');
    if (has_marker(tok) && tok.size() > kContinuation.size()) {
      out.append(tok, 0, tok.size() - kContinuation.size());
      open_word = true;
    } else {
      out += tok;
      open_word = false;
    }
  }
  return out;
}

VocabStats vocab_stats(const Vocabulary& vocab) {
  VocabStats stats;
  stats.size = vocab.size();
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (id < static_cast<std::size_t>(kNumReserved)) {
      ++stats.reserved;
      continue;
    }
    const std::string& tok = vocab.tokens()[id];
    std::size_t len = utf8::length(tok);
    if (has_marker(tok) && tok.size() > kContinuation.size()) len -= 2;
    if (len <= 1) ++stats.characters;
    else ++stats.merge_products;
  }
  return stats;
}

}  // namespace nmt
