#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "medcode/segmenter.hpp"
#include "medcode/util.hpp"

using namespace medcode;
using nlohmann::json;

TEST_CASE("split_sentences matches the pinned fixture file") {
  std::ifstream in(std::string(MEDCODE_TEST_DATA_DIR) + "/sentence_cases.jsonl");
  REQUIRE(in.good());
  std::string line;
  int cases = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json rec = json::parse(line);
    const std::string text = rec.at("text").get<std::string>();
    const auto expected = rec.at("sentences").get<std::vector<std::string>>();
    CAPTURE(text);
    const auto got = split_sentences(text).sentences;
    CHECK(got == expected);
    ++cases;
  }
  CHECK(cases == 50);
}

TEST_CASE("split_sentences offsets cover every non-whitespace character") {
  const std::string texts[] = {
      "Temp 98.6. BP stable.\nSeen by Dr. Lee. Plan: discharge.",
      "  One! Two?  Three glued.together  ",
      "single",
  };
  for (const auto& text : texts) {
    auto doc = split_sentences(text);
    REQUIRE(doc.sentences.size() == doc.offsets.size());
    size_t cursor = 0;
    for (size_t i = 0; i < doc.offsets.size(); ++i) {
      const auto span = doc.offsets[i];
      REQUIRE(span.begin >= cursor);
      for (size_t k = cursor; k < span.begin; ++k)
        CHECK(std::isspace(static_cast<unsigned char>(text[k])));
      CHECK(text.substr(span.begin, span.end - span.begin) == doc.sentences[i]);
      cursor = span.end;
    }
    for (size_t k = cursor; k < text.size(); ++k)
      CHECK(std::isspace(static_cast<unsigned char>(text[k])));
  }
}

TEST_CASE("split is idempotent over its own join") {
  Rng rng(2024);
  const std::vector<std::string> words = {"alpha", "beta", "gamma.delta", "x9", "98.6", "done."};
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    const int n = 1 + rng.uniform_int(30);
    for (int i = 0; i < n; ++i) {
      if (i) text += rng.uniform() < 0.2 ? "\n" : " ";
      text += words[size_t(rng.uniform_int(int(words.size())))];
    }
    auto first = split_sentences(text).sentences;
    auto second = split_sentences(join_sentences(first)).sentences;
    CHECK(second == first);
  }
}

TEST_CASE("make_segments basic shapes") {
  SentenceIndexedDocument doc;
  for (int i = 0; i < 20; ++i) doc.sentences.push_back("s" + std::to_string(i) + ".");

  SUBCASE("S=20 segn=10 gives 10 segments of 2") {
    auto segs = make_segments(doc, 10);
    REQUIRE(segs.size() == 10);
    for (const auto& s : segs) CHECK(s.sentence_count() == 2);
  }
  SUBCASE("segn larger than S caps at S") {
    doc.sentences.resize(7);
    auto segs = make_segments(doc, 10);
    REQUIRE(segs.size() == 7);
    for (const auto& s : segs) CHECK(s.sentence_count() == 1);
  }
  SUBCASE("segn=1 is the whole document") {
    auto segs = make_segments(doc, 1);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].first_global == 0);
    CHECK(segs[0].sentence_count() == 20);
    CHECK(segs[0].sentences == doc.sentences);
  }
  SUBCASE("segn below 1 is an error") { CHECK_THROWS_AS(make_segments(doc, 0), ConfigError); }
  SUBCASE("empty document yields no segments") {
    doc.sentences.clear();
    CHECK(make_segments(doc, 5).empty());
  }
}

TEST_CASE("make_segments partitions with size balance at most one") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    SentenceIndexedDocument doc;
    const int s = 1 + rng.uniform_int(60);
    for (int i = 0; i < s; ++i) doc.sentences.push_back("x");
    const int segn = 1 + rng.uniform_int(60);
    auto segs = make_segments(doc, segn);
    REQUIRE(int(segs.size()) == std::min(segn, s));
    int next = 0, mn = s, mx = 0;
    for (const auto& seg : segs) {
      CHECK(seg.first_global == next);
      next += seg.sentence_count();
      mn = std::min(mn, seg.sentence_count());
      mx = std::max(mx, seg.sentence_count());
    }
    CHECK(next == s);
    CHECK(mx - mn <= 1);
    // Earlier segments carry the remainder.
    for (size_t i = 1; i < segs.size(); ++i)
      CHECK(segs[i - 1].sentence_count() >= segs[i].sentence_count());
  }
}

TEST_CASE("segment local index mapping") {
  SentenceIndexedDocument doc;
  for (int i = 0; i < 9; ++i) doc.sentences.push_back("s");
  auto segs = make_segments(doc, 3);
  CHECK(segs[1].local_to_global(1) == 3);
  CHECK(segs[1].local_to_global(3) == 5);
  CHECK(segs[1].local_to_global(0) == -1);
  CHECK(segs[1].local_to_global(4) == -1);
  CHECK(segs[2].contains_global(8));
  CHECK(!segs[2].contains_global(5));
}
