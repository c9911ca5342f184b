#include <random>
#include <sstream>

#include "doctest.h"
#include "nmt/error.hpp"
#include "nmt/textnorm.hpp"

using namespace nmt;

namespace {

std::string cp(char32_t c) {
  std::string s;
  utf8::append(s, c);
  return s;
}

CharMapping t2s() { return CharMapping::from_entries({{U'體', U'体'}, {U'學', U'学'}}); }

}  // namespace

TEST_CASE("validate_encoding") {
  CHECK(validate_encoding("你好") == std::optional<std::string>("你好"));
  CHECK_FALSE(validate_encoding(std::string("\xFF\x41", 2)));
  CHECK_FALSE(validate_encoding("a" + cp(0xFFFD) + "b"));
  CHECK_FALSE(validate_encoding(std::string("a\x01", 2)));
  CHECK(validate_encoding("a\tb"));
  // overlong '/', lone surrogate, above U+10FFFF, truncated sequence
  CHECK_FALSE(validate_encoding("\xC0\xAF"));
  CHECK_FALSE(validate_encoding("\xED\xA0\x80"));
  CHECK_FALSE(validate_encoding("\xF4\x90\x80\x80"));
  CHECK_FALSE(validate_encoding("\xE4\xBD"));
}

TEST_CASE("to_halfwidth") {
  CHECK(to_halfwidth("Ａ１！") == "A1!");
  CHECK(to_halfwidth("abc 中文") == "abc 中文");
  CHECK(to_halfwidth(cp(0x3000)) == " ");
  CHECK(to_halfwidth(cp(0xFF5E)) == "~");
  CHECK(to_halfwidth(cp(0xFF5F)) == cp(0xFF5F));

  std::mt19937 rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string s;
    for (int j = 0; j < 12; ++j) s += cp(static_cast<char32_t>(0xFF00 + rng() % 0x70));
    const std::string h = to_halfwidth(s);
    CHECK(utf8::length(h) == utf8::length(s));
    for (char32_t c : utf8::decode(h)) CHECK_FALSE((c >= 0xFF01 && c <= 0xFF5E));
  }
}

TEST_CASE("decode_html_refs") {
  CHECK(decode_html_refs("&gt;") == ">");
  CHECK(decode_html_refs("&#62;") == ">");
  CHECK(decode_html_refs("&#x3e;") == ">");
  CHECK(decode_html_refs("&#X3E;") == ">");
  CHECK(decode_html_refs("&amp;gt;") == "&gt;");
  CHECK(decode_html_refs("a &lt;b&gt; &quot;c&quot; &apos;") == "a <b> \"c\" '");
  CHECK(decode_html_refs("&nbsp;") == cp(0xA0));
  CHECK(decode_html_refs("&#20320;&#x597D;") == "你好");
  SUBCASE("malformed and unknown pass through") {
    for (std::string s : {"&", "&gt", "&#;", "&#x;", "&#62", "&bogus;", "&#xZZ;", "& gt;", "&#99999999;"})
      CHECK(decode_html_refs(s) == s);
  }
  SUBCASE("references to rejected code points stay") {
    CHECK(decode_html_refs("&#1;") == "&#1;");
    CHECK(decode_html_refs("&#xFFFD;") == "&#xFFFD;");
    CHECK(decode_html_refs("&#xD800;") == "&#xD800;");
  }
  SUBCASE("never grows") {
    for (std::string s : {"&amp;&amp;", "x&#65;y", "&lt;&gt;&quot;"})
      CHECK(utf8::length(decode_html_refs(s)) <= utf8::length(s));
  }
  SUBCASE("loaded entity table") {
    std::istringstream in("# extra\ncopy\tU+00A9\nmdash\t" + cp(0x2014) + "\n");
    const EntityTable t = EntityTable::load(in);
    CHECK(decode_html_refs("&copy;&mdash;&gt;", t) == cp(0xA9) + cp(0x2014) + ">");
    CHECK(t.size() == EntityTable::builtin().size() + 2);
  }
}

TEST_CASE("map_chars") {
  const CharMapping m = t2s();
  CHECK(map_chars("體", m) == "体");
  CHECK(map_chars("体", m) == "体");
  CHECK(map_chars("學體", m) == "学体");
  CHECK(map_chars("abc", m) == "abc");
}

TEST_CASE("CharMapping validation") {
  CHECK_THROWS_AS(CharMapping::from_entries({{U'a', U'b'}, {U'a', U'c'}}), Error);
  // value is itself a key: the mapping would not be a fixed point
  CHECK_THROWS_AS(CharMapping::from_entries({{U'a', U'b'}, {U'b', U'c'}}), Error);
  CHECK_NOTHROW(CharMapping::from_entries({{U'a', U'a'}, {U'b', U'a'}}));
  // value the halfwidth rule would rewrite
  CHECK_THROWS_AS(CharMapping::from_entries({{U'a', 0xFF21}}), Error);
  std::istringstream in("# comment\n\n體\t体\nU+5B78\tU+5B66\n");
  const CharMapping m = CharMapping::load(in);
  CHECK(m.size() == 2);
  CHECK(map_chars("學體", m) == "学体");
  std::istringstream bad("體\n");
  CHECK_THROWS_AS(CharMapping::load(bad), Error);
}

TEST_CASE("normalize_text order and fixed point") {
  const CharMapping m = t2s();
  // fullwidth ampersand becomes '&' before entity decoding runs
  CHECK(normalize_text("＆gt;", m, EntityTable::builtin()) == ">");
  CHECK(normalize_text("Ａ&gt;Ｂ", m, EntityTable::builtin()) == "A>B");
  // decoding yields a fullwidth char, which is folded on the next round
  CHECK(normalize_text("&#xFF21;", m, EntityTable::builtin()) == "A");
  bool changed[3] = {false, false, false};
  normalize_text("學", m, EntityTable::builtin(), changed);
  CHECK(changed[0]);
  CHECK_FALSE(changed[1]);
  CHECK_FALSE(changed[2]);
}

TEST_CASE("normalize_text idempotence property") {
  const CharMapping m = t2s();
  const std::vector<std::string> atoms = {"a",     "Ｚ",   "＆",    "amp;", "&",     "gt;",  "#",   "x",
                                          "3e;",   "&#",   "6",     "2;",   "學",    "體",   "　",  " ",
                                          "&amp;", "&lt;", "&#65;", "；",   "＃",    "ｘ",   "中",  "&#xFF1B;"};
  std::mt19937_64 rng(17);
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const int n = 1 + static_cast<int>(rng() % 10);
    for (int j = 0; j < n; ++j) s += atoms[rng() % atoms.size()];
    const std::string once = normalize_text(s, m, EntityTable::builtin());
    const std::string twice = normalize_text(once, m, EntityTable::builtin());
    REQUIRE_MESSAGE(once == twice, "input: " << s);
  }
}

TEST_CASE("clean_corpus") {
  const CharMapping m = t2s();
  SUBCASE("counting contract") {
    std::vector<SentencePair> raw = {{"a", "b", 1}, {"c", "d", 2}, {"\xFF", "e", 3}, {"f", "g", 4}};
    const CleanResult r = clean_corpus(raw, m);
    CHECK(r.pairs.size() == 3);
    CHECK(r.report.input == 4);
    CHECK(r.report.kept == 3);
    CHECK(r.report.dropped_encoding == 1);
    CHECK(r.report.kept + r.report.dropped_encoding + r.report.dropped_empty == r.report.input);
    CHECK(r.pairs[2].line_no == 4);
  }
  SUBCASE("composition") {
    const CleanResult r = clean_corpus({{"Ａ&gt;Ｂ", "x", 1}}, m);
    REQUIRE(r.pairs.size() == 1);
    CHECK(r.pairs[0].src == "A>B");
    CHECK(r.pairs[0].tgt == "x");
    CHECK(r.report.transformed.at("halfwidth") == 1);
    CHECK(r.report.transformed.at("html_refs") == 1);
  }
  SUBCASE("empty stream") {
    const CleanResult r = clean_corpus({}, m);
    CHECK(r.pairs.empty());
    CHECK(r.report.input == 0);
    CHECK(r.report.kept == 0);
    CHECK(r.report.dropped_encoding == 0);
  }
  SUBCASE("blank sides drop the pair") {
    const CleanResult r = clean_corpus({{"a", "  ", 1}, {cp(0x3000), "b", 2}}, m);
    CHECK(r.pairs.empty());
    CHECK(r.report.dropped_empty == 2);
  }
  SUBCASE("output invariants") {
    const CleanResult r = clean_corpus({{"ｘ　&#xFF41;", "a" + cp(0xFF5E), 1}}, m);
    REQUIRE(r.pairs.size() == 1);
    for (const auto* side : {&r.pairs[0].src, &r.pairs[0].tgt})
      for (char32_t c : utf8::decode(*side)) {
        CHECK(c != 0xFFFD);
        CHECK(c != 0x3000);
        CHECK_FALSE((c >= 0xFF01 && c <= 0xFF5E));
      }
  }
  SUBCASE("report merge") {
    CleaningReport a, b;
    a.input = 2, a.kept = 1, a.dropped_encoding = 1, a.transformed["map_chars"] = 1;
    b.input = 3, b.kept = 3, b.transformed["map_chars"] = 2, b.transformed["halfwidth"] = 1;
    a.merge(b);
    CHECK(a.input == 5);
    CHECK(a.kept == 4);
    CHECK(a.transformed["map_chars"] == 3);
    CHECK(a.transformed["halfwidth"] == 1);
  }
}

TEST_CASE("Segmenter longest match") {
  const Segmenter seg({"我们", "我", "学生", "学", "生活"});
  CHECK(seg.segment_line("我们学生活") == "我们 学生 活");
  CHECK(seg.segment_line("abc12我x") == "abc12 我 x");
  CHECK(seg.segment_line("  我们  学 ") == "我们 学");
  CHECK(seg.segment_line("") == "");
}
