#include <cstdio>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "medcode/corpus.hpp"
#include "medcode/segmenter.hpp"
#include "medcode/synthetic.hpp"

using namespace medcode;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() / ("medcode_corpus_test_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

LabelSpace two_codes() {
  return LabelSpace::from_codes({{"401.9", "essential hypertension"},
                                 {"556.8", "other ulcerative colitis"}});
}

}  // namespace

TEST_CASE("load_corpus reads valid records") {
  auto dir = temp_dir();
  const std::string path = (dir / "c.jsonl").string();
  write_file(path,
             "{\"id\": \"d1\", \"text\": \"BP elevated today.\", \"labels\": [\"401.9\"]}\n"
             "{\"id\": \"d2\", \"text\": \"CT abdomen showed colitis.\", \"labels\": "
             "[\"556.8\"], \"evidence\": {\"556.8\": [0]}}\n");
  Corpus c = load_corpus(path, two_codes());
  REQUIRE(c.size() == 2);
  CHECK(c.docs[0].gold_labels == std::vector<uint8_t>{1, 0});
  CHECK(c.docs[1].gold_evidence.at("556.8") == std::set<int>{0});
}

TEST_CASE("load_corpus names the offending line and code") {
  auto dir = temp_dir();
  const std::string path = (dir / "bad.jsonl").string();

  SUBCASE("unknown code") {
    write_file(path, "{\"id\": \"d1\", \"text\": \"x.\", \"labels\": [\"999.99\"]}\n");
    CHECK_THROWS_WITH_AS(load_corpus(path, two_codes()),
                         doctest::Contains("unknown code '999.99'"), CorpusError);
  }
  SUBCASE("malformed json names the line") {
    write_file(path, "{\"id\": \"d1\", \"text\": \"x.\", \"labels\": []}\n{broken\n");
    CHECK_THROWS_WITH_AS(load_corpus(path, two_codes()), doctest::Contains("line 2"),
                         CorpusError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_corpus((dir / "nope.jsonl").string(), two_codes()), IoError);
  }
}

TEST_CASE("empty corpus file loads with a warning") {
  auto dir = temp_dir();
  const std::string path = (dir / "empty.jsonl").string();
  write_file(path, "");
  std::vector<std::string> warnings;
  Corpus c = load_corpus(path, two_codes(), &warnings);
  CHECK(c.size() == 0);
  REQUIRE(warnings.size() == 1);
}

TEST_CASE("corpus round-trips through write and load") {
  SyntheticConfig cfg;
  cfg.n_docs = 12;
  cfg.n_codes = 6;
  cfg.sentences_per_doc = {5, 9};
  cfg.codes_per_doc = {0, 3};
  auto [corpus, labels] = generate_synthetic(cfg);

  auto dir = temp_dir();
  const std::string p1 = (dir / "a.jsonl").string();
  const std::string p2 = (dir / "b.jsonl").string();
  write_corpus(corpus, labels, p1);
  Corpus reloaded = load_corpus(p1, labels);
  write_corpus(reloaded, labels, p2);
  CHECK(read_file(p1) == read_file(p2));

  REQUIRE(reloaded.size() == corpus.size());
  for (int i = 0; i < corpus.size(); ++i) {
    CHECK(reloaded.docs[size_t(i)].id == corpus.docs[size_t(i)].id);
    CHECK(reloaded.docs[size_t(i)].text == corpus.docs[size_t(i)].text);
    CHECK(reloaded.docs[size_t(i)].gold_labels == corpus.docs[size_t(i)].gold_labels);
    CHECK(reloaded.docs[size_t(i)].gold_evidence == corpus.docs[size_t(i)].gold_evidence);
  }
}

TEST_CASE("label space io and invariants") {
  auto dir = temp_dir();
  const std::string path = (dir / "labels.json").string();
  LabelSpace labels = two_codes();
  write_labels(labels, path);
  LabelSpace reloaded = load_labels(path);
  CHECK(reloaded.size() == 2);
  CHECK(reloaded.index_of("401.9") == 0);
  CHECK(reloaded.index_of("556.8") == 1);
  CHECK(reloaded.index_of("nope") == -1);

  CHECK_THROWS_AS(LabelSpace::from_codes({{"a", "x"}, {"a", "y"}}), CorpusError);
  CHECK_THROWS_AS(LabelSpace::from_codes({{"", "x"}}), CorpusError);
  CHECK_THROWS_AS(LabelSpace::from_codes({{"a", ""}}), CorpusError);
  CHECK_THROWS_AS(LabelSpace::from_codes({}), CorpusError);
}

TEST_CASE("validate_corpus reports invariant violations") {
  LabelSpace labels = two_codes();
  Document d;
  d.id = "doc-x";
  d.text = "First sentence. Second sentence.";
  d.gold_labels = {1, 0};

  SUBCASE("valid document yields an empty report") {
    d.gold_evidence["401.9"] = {0, 1};
    Corpus c{{d}};
    CHECK(validate_corpus(c, labels).ok());
  }
  SUBCASE("evidence index beyond the sentence count") {
    d.gold_evidence["401.9"] = {5};
    Corpus c{{d}};
    auto report = validate_corpus(c, labels);
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].doc_id == "doc-x");
    CHECK(report.violations[0].message.find("index 5") != std::string::npos);
  }
  SUBCASE("evidence on a code with gold label zero") {
    d.gold_evidence["556.8"] = {0};
    Corpus c{{d}};
    auto report = validate_corpus(c, labels);
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].message.find("556.8") != std::string::npos);
  }
}

TEST_CASE("generate_synthetic is a pure function of its config") {
  SyntheticConfig cfg;
  cfg.n_docs = 20;
  cfg.n_codes = 10;
  auto [c1, l1] = generate_synthetic(cfg);
  auto [c2, l2] = generate_synthetic(cfg);
  CHECK(corpus_content_hash(c1) == corpus_content_hash(c2));
  CHECK(labels_content_hash(l1) == labels_content_hash(l2));

  auto dir = temp_dir();
  write_corpus(c1, l1, (dir / "r1.jsonl").string());
  write_corpus(c2, l2, (dir / "r2.jsonl").string());
  CHECK(read_file((dir / "r1.jsonl").string()) == read_file((dir / "r2.jsonl").string()));

  SyntheticConfig other = cfg;
  other.doc_seed = cfg.doc_seed + 1;
  auto [c3, l3] = generate_synthetic(other);
  CHECK(corpus_content_hash(c3) != corpus_content_hash(c1));
  CHECK(labels_content_hash(l3) == labels_content_hash(l1));  // label space shared
}

TEST_CASE("synthetic gold labels equal the planted evidence key set") {
  SyntheticConfig cfg;
  cfg.n_docs = 40;
  cfg.n_codes = 12;
  cfg.codes_per_doc = {1, 4};
  auto [corpus, labels] = generate_synthetic(cfg);
  CHECK(validate_corpus(corpus, labels).ok());
  for (const auto& d : corpus.docs) {
    std::set<std::string> from_labels;
    for (int c = 0; c < labels.size(); ++c)
      if (d.gold_labels[size_t(c)]) from_labels.insert(labels.at(c).id);
    std::set<std::string> from_evidence;
    for (const auto& [code, sents] : d.gold_evidence) {
      CHECK(!sents.empty());
      from_evidence.insert(code);
    }
    CHECK(from_labels == from_evidence);
  }
}

TEST_CASE("synthetic single planted code sets exactly one label") {
  SyntheticConfig cfg;
  cfg.n_docs = 10;
  cfg.n_codes = 8;
  cfg.codes_per_doc = {1, 1};
  auto [corpus, labels] = generate_synthetic(cfg);
  for (const auto& d : corpus.docs) {
    int ones = 0;
    for (auto v : d.gold_labels) ones += v;
    CHECK(ones == 1);
    REQUIRE(d.gold_evidence.size() == 1);
    auto sid = split_sentences(d.text);
    for (int s : d.gold_evidence.begin()->second) REQUIRE(s < sid.size());
  }
}

TEST_CASE("negation-only documents keep all-zero labels while keywords appear") {
  SyntheticConfig cfg;
  cfg.n_docs = 15;
  cfg.n_codes = 10;
  cfg.codes_per_doc = {0, 0};
  cfg.negation_rate = 1.0;
  auto [corpus, labels] = generate_synthetic(cfg);

  // Keyword phrase = description minus its category suffix.
  std::vector<std::string> phrases;
  for (const auto& c : labels.codes()) {
    const std::string& d = c.description;
    phrases.push_back(d.substr(0, d.rfind(' ')));
  }
  for (const auto& d : corpus.docs) {
    for (auto v : d.gold_labels) CHECK(v == 0);
    CHECK(d.gold_evidence.empty());
    bool any_keyword = false;
    for (const auto& ph : phrases)
      if (d.text.find(ph) != std::string::npos) any_keyword = true;
    CHECK(any_keyword);
  }
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig cfg;
  cfg.n_codes = 5;
  cfg.codes_per_doc = {2, 9};
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
  cfg.codes_per_doc = {2, 3};
  cfg.negation_rate = 1.5;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}
