#include <algorithm>
#include <set>

#include "doctest.h"
#include "nmt/corpus.hpp"
#include "nmt/error.hpp"
#include "support.hpp"

using namespace nmt;

TEST_CASE("holdout_split keeps the tail in order") {
  std::vector<SentencePair> pairs;
  for (int i = 0; i < 10; ++i) pairs.push_back({"s" + std::to_string(i), "t" + std::to_string(i), static_cast<std::size_t>(i + 1)});
  const auto [train, valid] = holdout_split(pairs, SplitSpec{3});
  REQUIRE(train.size() == 7);
  REQUIRE(valid.size() == 3);
  CHECK(train.front().src == "s0");
  CHECK(valid[0].src == "s7");
  CHECK(valid[2].src == "s9");
  CHECK_THROWS_AS(holdout_split(pairs, SplitSpec{10}), Error);
  CHECK_THROWS_AS(holdout_split(pairs, SplitSpec{11}), Error);
  const auto [t0, v0] = holdout_split({}, SplitSpec{0});
  CHECK(t0.empty());
  CHECK(v0.empty());
}

TEST_CASE("filter_by_length") {
  const std::vector<EncodedPair> pairs = {{{4, 5}, {6}}, {{4, 5, 6, 7}, {4}}, {{4}, {4, 4, 4}}};
  CHECK(filter_by_length(pairs, 3) == std::vector<std::size_t>{0, 2});
  CHECK(filter_by_length(pairs, 4) == std::vector<std::size_t>{0, 1, 2});
  CHECK(filter_by_length(pairs, 1).empty());
}

TEST_CASE("make_batches covers every fitting pair once within the budget") {
  const auto pairs = nmt::testing::reversal_pairs(300, 20, 12, 5);
  for (std::size_t max_tokens : {std::size_t{13}, std::size_t{40}, std::size_t{200}}) {
    const BatchPlan plan = make_batches(pairs, max_tokens, 9, 0);
    std::multiset<std::size_t> seen;
    for (const auto& b : plan.batches) {
      REQUIRE_FALSE(b.empty());
      std::size_t ls = 0, lt = 0;
      for (std::size_t i : b) {
        seen.insert(i);
        ls = std::max(ls, pairs[i].src.size());
        lt = std::max(lt, pairs[i].tgt.size());
      }
      CHECK(b.size() * (ls + 1) <= max_tokens);
      CHECK(b.size() * (lt + 1) <= max_tokens);
    }
    CHECK(seen.size() + plan.dropped == pairs.size());
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == seen.size());
  }
  // pairs longer than the budget are dropped, not split
  const BatchPlan tiny = make_batches(pairs, 3, 9, 0);
  for (const auto& b : tiny.batches)
    for (std::size_t i : b) CHECK(pairs[i].src.size() <= 2);
  CHECK(tiny.dropped > 0);
}

TEST_CASE("make_batches is seeded") {
  const auto pairs = nmt::testing::reversal_pairs(200, 20, 10, 6);
  CHECK(make_batches(pairs, 60, 1, 0).batches == make_batches(pairs, 60, 1, 0).batches);
  CHECK(make_batches(pairs, 60, 1, 0).batches != make_batches(pairs, 60, 1, 1).batches);
  CHECK(make_batches(pairs, 60, 1, 0).batches != make_batches(pairs, 60, 2, 0).batches);
}

TEST_CASE("seeded_shuffle is a permutation") {
  std::vector<std::size_t> v(50);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  auto a = v, b = v;
  seeded_shuffle(a, 4, 0);
  seeded_shuffle(b, 4, 0);
  CHECK(a == b);
  CHECK(a != v);
  std::sort(a.begin(), a.end());
  CHECK(a == v);
}

TEST_CASE("line files") {
  const std::string dir = nmt::testing::scratch_dir("corpus_lines");
  const std::vector<std::string> lines = {"a", "", "中文 b"};
  write_lines(dir + "/x.txt", lines);
  CHECK(read_lines(dir + "/x.txt") == lines);
  write_lines(dir + "/empty.txt", {});
  CHECK(read_lines(dir + "/empty.txt").empty());
  CHECK_THROWS_AS(read_lines(dir + "/missing.txt"), Error);
}
