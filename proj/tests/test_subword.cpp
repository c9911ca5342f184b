#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "nmt/error.hpp"
#include "nmt/special_tokens.hpp"
#include "nmt/subword.hpp"
#include "nmt/textnorm.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace nmt;
using nmt::testing::BruteForceBpe;

namespace {

BpeOptions budget(std::size_t merges) {
  BpeOptions o;
  o.merges = merges;
  return o;
}

}  // namespace

TEST_CASE("learn_bpe small cases") {
  SUBCASE("single pair") {
    const BpeModel m = learn_bpe({{"aa", 5}}, budget(1));
    REQUIRE(m.table.size() == 1);
    CHECK(m.table.merges()[0] == MergeTable::Pair{"a@@", "a"});
    CHECK(m.vocab.find("aa"));
    // 4 reserved + "a@@" + "a" + "aa"
    CHECK(m.vocab.size() == 7);
    CHECK(vocab_stats(m.vocab).merge_products == 1);
  }
  SUBCASE("budget zero is character level") {
    const BpeModel m = learn_bpe({{"abc", 2}, {"cab", 1}}, budget(0));
    CHECK(m.table.size() == 0);
    const VocabStats st = vocab_stats(m.vocab);
    CHECK(st.merge_products == 0);
    CHECK(st.size == st.reserved + st.characters);
  }
  SUBCASE("26 letters") {
    WordCounts wc;
    for (char c = 'a'; c <= 'z'; ++c) wc[std::string(1, c)] = 1;
    CHECK(vocab_stats(learn_bpe(wc, budget(0)).vocab).size == 30);
  }
  SUBCASE("empty corpus") { CHECK_THROWS_AS(learn_bpe({}, budget(3)), Error); }
  SUBCASE("budget larger than available stops early") {
    const BpeModel m = learn_bpe({{"ab", 1}}, budget(10));
    CHECK(m.table.size() == 1);
  }
}

TEST_CASE("learn_bpe matches the brute-force oracle on the classic corpus") {
  const WordCounts wc = {{"low", 5}, {"lower", 2}, {"newest", 6}, {"widest", 3}};
  const BpeModel m = learn_bpe(wc, budget(4));
  const auto expected = BruteForceBpe(wc).run(4);
  CHECK(m.table.merges() == expected);
  // frozen from the oracle: the marked-symbol convention changes the classic
  // textbook sequence ("es", "est", ...) because word-final symbols differ
  const std::vector<MergeTable::Pair> frozen = {
      {"e@@", "s@@"}, {"es@@", "t"}, {"l@@", "o@@"}, {"e@@", "w@@"}};
  CHECK(m.table.merges() == frozen);
}

TEST_CASE("learn_bpe oracle equivalence on random corpora") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    const WordCounts wc = nmt::testing::random_word_counts(rng, 40, "abcde");
    const std::size_t n = 1 + rng() % 64;
    const BpeModel m = learn_bpe(wc, budget(n));
    BruteForceBpe oracle(wc);
    REQUIRE(m.table.merges() == oracle.run(n));
    CHECK(m.vocab == oracle.vocabulary());
  }
}

TEST_CASE("target vocabulary size mode") {
  std::mt19937_64 rng(7);
  const WordCounts wc = nmt::testing::random_word_counts(rng, 50, "abcdef");
  const std::size_t base = learn_bpe(wc, budget(0)).vocab.size();
  for (std::size_t target : {std::size_t{5}, base, base + 5, base + 20}) {
    BpeOptions o;
    o.target_vocab_size = target;
    const BpeModel m = learn_bpe(wc, o);
    CHECK(m.vocab.size() == std::max(target, base));
    CHECK(vocab_stats(m.vocab).size == m.vocab.size());
  }
}

TEST_CASE("vocabulary size grows with the budget") {
  std::mt19937_64 rng(3);
  const WordCounts wc = nmt::testing::random_word_counts(rng, 50, "abcdefg");
  std::size_t prev = 0;
  for (std::size_t b = 0; b <= 80; b += 4) {
    const VocabStats st = vocab_stats(learn_bpe(wc, budget(b)).vocab);
    CHECK(st.size >= prev);
    CHECK(st.size == st.reserved + st.characters + st.merge_products);
    prev = st.size;
  }
}

TEST_CASE("apply_bpe") {
  const MergeTable aa(std::vector<MergeTable::Pair>{{"a@@", "a"}});
  CHECK(apply_bpe("aa", aa) == std::vector<std::string>{"aa"});
  CHECK(apply_bpe("aaa", aa) == std::vector<std::string>{"a@@", "aa"});
  CHECK(apply_bpe("xyz", MergeTable{}) == std::vector<std::string>{"x@@", "y@@", "z"});
  CHECK(apply_bpe("a", aa) == std::vector<std::string>{"a"});
  const MergeTable left_first(std::vector<MergeTable::Pair>{{"a@@", "a@@"}});
  CHECK(apply_bpe("aaaa", left_first) == std::vector<std::string>{"aa@@", "a@@", "a"});
}

TEST_CASE("apply_bpe reproduces the learned segmentation") {
  std::mt19937_64 rng(23);
  const WordCounts wc = nmt::testing::random_word_counts(rng, 50, "abcd");
  const BpeModel m = learn_bpe(wc, budget(30));
  BruteForceBpe oracle(wc);
  oracle.run(30);
  for (const auto& [word, segmentation] : oracle.segmentations()) CHECK(apply_bpe(word, m.table) == segmentation);
}

TEST_CASE("encode and decode ids") {
  Vocabulary v;
  for (const char* t : {"x", "y", "aa"}) v.add(t);
  REQUIRE(*v.find("aa") == 6);
  const std::vector<std::string> aa = {"aa"}, zz = {"zz"};
  CHECK(encode_ids(aa, v, false) == std::vector<int>{6});
  CHECK(encode_ids(zz, v, false) == std::vector<int>{kUnkId});
  CHECK(encode_ids(aa, v, true) == std::vector<int>{1, 6, 2});
  CHECK(decode_ids(std::vector<int>{1, 6, 2}, v) == "aa");
  CHECK(decode_ids(std::vector<int>{}, v) == "");
  CHECK_THROWS_AS(decode_ids(std::vector<int>{99}, v), Error);
  CHECK_THROWS_AS(decode_ids(std::vector<int>{-1}, v), Error);
}

TEST_CASE("round trip over training words") {
  std::mt19937_64 rng(41);
  const WordCounts wc = nmt::testing::random_word_counts(rng, 50, "abcdefgh");
  const BpeModel m = learn_bpe(wc, budget(25));
  std::vector<std::string> words;
  for (const auto& [w, c] : wc) words.push_back(w);
  for (int i = 0; i < 100; ++i) {
    const std::string& w = words[rng() % words.size()];
    const auto ids = encode_ids(apply_bpe(w, m.table), m.vocab, true);
    CHECK(std::find(ids.begin(), ids.end(), kUnkId) == ids.end());
    CHECK(decode_ids(ids, m.vocab) == w);
  }
  // multi-word lines keep word boundaries
  BpeSegmenter seg(m.table);
  const std::string line = words[0] + " " + words[1];
  const auto toks = seg.segment_line(line);
  CHECK(decode_ids(encode_ids(toks, m.vocab, false), m.vocab) == line);
}

TEST_CASE("merge table and vocabulary files") {
  const std::string dir = nmt::testing::scratch_dir("subword_files");
  std::mt19937_64 rng(9);
  const BpeModel m = learn_bpe(nmt::testing::random_word_counts(rng, 30, "xyz中文"), budget(12));
  m.table.save(dir + "/t.merges");
  m.vocab.save(dir + "/t.vocab");
  CHECK(MergeTable::load(dir + "/t.merges").merges() == m.table.merges());
  CHECK(Vocabulary::load(dir + "/t.vocab") == m.vocab);

  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir + "/" + name) << text;
    return dir + "/" + name;
  };
  CHECK_THROWS_AS(MergeTable::load(write("dup.merges", "a@@ b\na@@ b\n")), Error);
  CHECK_THROWS_AS(MergeTable::load(write("bad.merges", "onlyone\n")), Error);
  CHECK_THROWS_AS(Vocabulary::load(write("gap.vocab", "<pad>\t0\t0\n<s>\t1\t0\n</s>\t2\t0\n<unk>\t3\t0\nx\t5\t1\n")),
                  Error);
  CHECK_THROWS_AS(Vocabulary::load(write("res.vocab", "<s>\t0\t0\n")), Error);
  CHECK_THROWS_AS(Vocabulary::load(dir + "/missing.vocab"), Error);
}

TEST_CASE("learning is deterministic") {
  std::mt19937_64 rng(77);
  const WordCounts wc = nmt::testing::random_word_counts(rng, 50, "abcdef");
  CHECK(learn_bpe(wc, budget(40)).table.merges() == learn_bpe(wc, budget(40)).table.merges());
}
