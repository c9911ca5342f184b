#include <filesystem>
#include <random>

#include "doctest.h"
#include "nmt/decode.hpp"
#include "nmt/error.hpp"
#include "support.hpp"

using namespace nmt;
using nmt::testing::tiny_model;

namespace {

// Sharper-than-init output distribution so that searches disagree.
ParameterSet peaked(const ModelConfig& c, std::uint64_t seed) {
  ParameterSet p = init_parameters(c, seed);
  for (auto& v : p.at("tgt_embed").data()) v *= 6;
  return p;
}

std::vector<int> random_source(std::mt19937_64& rng, int vocab, std::size_t max_len) {
  std::vector<int> s(1 + rng() % max_len);
  for (auto& t : s) t = 4 + static_cast<int>(rng() % static_cast<std::uint64_t>(vocab - 4));
  return s;
}

}  // namespace

TEST_CASE("beam search equals exhaustive search on a tiny model") {
  const ModelConfig c = tiny_model(6, 1, 16, 2, 2);
  for (std::uint64_t seed : {1, 2, 3}) {
    const ParameterSet p = peaked(c, seed);
    const std::vector<int> src = {4, 5, 5};
    for (double alpha : {0.0, 1.0}) {
      const auto oracle = nmt::testing::exhaustive_search(p, c, src, 4, alpha);
      CHECK(oracle.candidates == 1 + 5 + 25 + 125 + 625);
      const BeamResult wide = beam_search(p, c, src, BeamOptions{1296, 4, alpha});
      const std::vector<int> got(wide.best.tokens.begin() + 1, wide.best.tokens.end());
      CHECK(got == oracle.tokens);
      CHECK(normalized_score(wide.best, alpha) == doctest::Approx(oracle.score).epsilon(1e-5));
      const BeamResult b36 = beam_search(p, c, src, BeamOptions{36, 4, alpha});
      CHECK(std::vector<int>(b36.best.tokens.begin() + 1, b36.best.tokens.end()) == oracle.tokens);
    }
  }
}

TEST_CASE("beam of one is greedy") {
  const ModelConfig c = tiny_model(12, 2, 16, 2, 3);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const ParameterSet p = peaked(c, static_cast<std::uint64_t>(i));
    const auto src = random_source(rng, 12, 6);
    const Hypothesis g = greedy_decode(p, c, src, 10);
    const BeamResult b = beam_search(p, c, src, BeamOptions{1, 10, 1.0});
    CHECK(b.best.tokens == g.tokens);
    CHECK(b.best.logprob_sum == doctest::Approx(g.logprob_sum));
  }
}

TEST_CASE("beam dominance") {
  const ModelConfig c = tiny_model(10, 1, 16, 2, 3);
  const ParameterSet p = peaked(c, 5);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto src = random_source(rng, 10, 5);
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t b : {1, 2, 4, 8}) {
      const double s = normalized_score(beam_search(p, c, src, BeamOptions{b, 8, 1.0}).best, 1.0);
      CHECK(s >= prev - 1e-9);
      prev = s;
    }
  }
}

TEST_CASE("beam search bookkeeping") {
  const ModelConfig c = tiny_model(10, 1, 16, 2, 3);
  const ParameterSet p = peaked(c, 8);
  const std::vector<int> src = {4, 6, 8};
  const BeamResult r = beam_search(p, c, src, BeamOptions{4, 6, 1.0});
  CHECK(r.best.tokens.front() == kBosId);
  CHECK(r.best.finished);
  CHECK(r.best.length() <= 6);
  for (const auto& h : r.finished) {
    CHECK(h.finished);
    CHECK(h.logprob_sum <= 0.0);
    // the model agrees with the incremental score
    const std::vector<int> gen(h.tokens.begin() + 1, h.tokens.end());
    CHECK(sequence_logprob(p, c, src, gen) == doctest::Approx(h.logprob_sum).epsilon(1e-5));
    // prefixes never score higher than their extensions' parents
    for (std::size_t k = 1; k < gen.size(); ++k) {
      const std::vector<int> prefix(gen.begin(), gen.begin() + static_cast<std::ptrdiff_t>(k));
      CHECK(sequence_logprob(p, c, src, prefix) >= h.logprob_sum - 1e-9);
    }
  }
  Hypothesis shorter{{kBosId, 5, kEosId}, -1.0, true}, longer{{kBosId, 5, 6, 7, kEosId}, -1.5, true};
  CHECK(normalized_score(shorter, 0.0) > normalized_score(longer, 0.0));
  CHECK(normalized_score(shorter, 1.0) < normalized_score(longer, 1.0));
  CHECK_THROWS_AS(beam_search(p, c, std::vector<int>{}, BeamOptions{}), Error);
  CHECK_THROWS_AS(beam_search(p, c, src, BeamOptions{0, 5, 1.0}), Error);
  CHECK_THROWS_AS(beam_search(p, c, src, BeamOptions{2, 0, 1.0}), Error);
  CHECK(decode_length_limit(c, 10, 50) == 60);
  CHECK(decode_length_limit(c, 60, 50) == 64);
}

TEST_CASE("translate_file") {
  const std::string dir = nmt::testing::scratch_dir("translate_file");
  Vocabulary src_vocab, tgt_vocab;
  for (const char* t : {"a@@", "a", "b@@", "b", "ab"}) src_vocab.add(t);
  for (const char* t : {"x", "y", "z", "w"}) tgt_vocab.add(t);
  ModelConfig c = tiny_model(static_cast<int>(src_vocab.size()), 1, 16, 2, 2);
  c.tgt_vocab = static_cast<int>(tgt_vocab.size());
  const ParameterSet p = peaked(c, 3);
  const MergeTable merges(std::vector<MergeTable::Pair>{{"a@@", "b"}});
  write_lines(dir + "/in.txt", std::vector<std::string>{"ab a", "", "b b a"});
  DecodeConfig d;
  d.beam = 3;
  d.max_len_offset = 4;

  CHECK(translate_file(p, c, merges, src_vocab, tgt_vocab, dir + "/in.txt", dir + "/out1.txt", d) == 3);
  CHECK(translate_file(p, c, merges, src_vocab, tgt_vocab, dir + "/in.txt", dir + "/out2.txt", d) == 3);
  const auto out = read_lines(dir + "/out1.txt");
  REQUIRE(out.size() == 3);
  CHECK(out[1].empty());
  CHECK(out == read_lines(dir + "/out2.txt"));

  write_lines(dir + "/empty.txt", {});
  CHECK(translate_file(p, c, merges, src_vocab, tgt_vocab, dir + "/empty.txt", dir + "/out3.txt", d) == 0);
  CHECK(read_lines(dir + "/out3.txt").empty());

  Vocabulary wrong = tgt_vocab;
  wrong.add("extra");
  CHECK_THROWS_AS(translate_file(p, c, merges, src_vocab, wrong, dir + "/in.txt", dir + "/out4.txt", d), Error);
  CHECK_FALSE(std::filesystem::exists(dir + "/out4.txt"));
}
