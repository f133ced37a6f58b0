#include <cmath>
#include <map>
#include <filesystem>

#include "doctest.h"
#include "medcode/baselines.hpp"
#include "medcode/util.hpp"

using namespace medcode;
namespace fs = std::filesystem;

namespace {

LabelSpace three_codes() {
  return LabelSpace::from_codes({{"c1", "one"}, {"c2", "two"}, {"c3", "three"}});
}

}  // namespace

TEST_CASE("stage predictors read the proposal") {
  LabelSpace labels = three_codes();
  Proposal p;
  p.doc_id = "d";
  p.doc_codes = {"c1", "c2"};
  p.evidence_pairs = {{"c1", 0}, {"c1", 2}};

  CHECK(stage1a_predict(p, labels) == std::vector<uint8_t>{1, 1, 0});
  CHECK(stage1_predict(p, labels) == std::vector<uint8_t>{1, 0, 0});

  Proposal empty;
  CHECK(stage1a_predict(empty, labels) == std::vector<uint8_t>{0, 0, 0});
  CHECK(stage1_predict(empty, labels) == std::vector<uint8_t>{0, 0, 0});
}

TEST_CASE("occurrence matrix counts pairs per code") {
  LabelSpace labels = three_codes();
  Proposal p;
  p.doc_id = "d";
  p.doc_codes = {"c1", "c2"};
  p.evidence_pairs = {{"c1", 0}, {"c1", 2}, {"c2", 2}};
  Proposal empty;
  empty.doc_id = "e";

  OccurrenceMatrix m = build_occurrence_matrix({p, empty}, labels);
  CHECK(m.at(0, 0) == 2);
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(0, 2) == 0);
  CHECK(m.at(1, 0) == 0);

  // Pair order does not matter.
  Proposal shuffled = p;
  shuffled.evidence_pairs = {{"c2", 2}, {"c1", 2}, {"c1", 0}};
  OccurrenceMatrix m2 = build_occurrence_matrix({shuffled, empty}, labels);
  CHECK(m.a == m2.a);
}

TEST_CASE("single stump reproduces the exhaustive split search") {
  // One informative feature; remaining features are constant.
  OccurrenceMatrix x;
  x.n_docs = 8;
  x.n_codes = 1;
  x.a = {0, 1, 2, 2, 3, 4, 5, 6};
  BinaryMatrix y(8, 1);
  const std::vector<uint8_t> gold = {0, 0, 0, 0, 1, 1, 1, 1};
  for (int d = 0; d < 8; ++d) y.at(d, 0) = gold[size_t(d)];

  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.max_depth = 1;
  cfg.bootstrap = false;
  cfg.feature_subsample = 1.0;
  ForestModel model = train_forest(x, y, cfg);

  // Exhaustive oracle: every midpoint threshold, weighted Gini.
  auto gini = [](long pos, long n) {
    if (n == 0) return 0.0;
    const double p = double(pos) / double(n);
    return 2.0 * p * (1.0 - p);
  };
  double best_score = 1e18, best_threshold = 0;
  const std::vector<double> vals = {0, 1, 2, 2, 3, 4, 5, 6};
  std::vector<double> distinct = {0, 1, 2, 3, 4, 5, 6};
  for (size_t i = 0; i + 1 < distinct.size(); ++i) {
    const double t = 0.5 * (distinct[i] + distinct[i + 1]);
    long ln = 0, lp = 0, rn = 0, rp = 0;
    for (size_t k = 0; k < vals.size(); ++k) {
      if (vals[k] < t) {
        ++ln;
        lp += gold[k];
      } else {
        ++rn;
        rp += gold[k];
      }
    }
    const double score = (double(ln) * gini(lp, ln) + double(rn) * gini(rp, rn)) / 8.0;
    if (score < best_score) {
      best_score = score;
      best_threshold = t;
    }
  }
  const DecisionTree& tree = model.per_code[0].trees[0];
  REQUIRE(!tree.nodes[0].leaf);
  CHECK(tree.nodes[0].threshold == doctest::Approx(best_threshold));
  // The stump's training predictions equal the oracle stump's.
  for (size_t k = 0; k < vals.size(); ++k) {
    const uint8_t oracle_pred = vals[k] < best_threshold ? 0 : 1;
    CHECK(tree.predict({vals[k]}) == oracle_pred);
  }
}

TEST_CASE("separable features reach perfect training accuracy") {
  // occurrence > 0 exactly when the label is positive
  OccurrenceMatrix x;
  x.n_docs = 30;
  x.n_codes = 2;
  x.a.assign(60, 0);
  BinaryMatrix y(30, 2);
  Rng rng(5);
  for (int d = 0; d < 30; ++d)
    for (int c = 0; c < 2; ++c) {
      const bool pos = rng.uniform() < 0.5;
      y.at(d, c) = pos;
      x.at(d, c) = pos ? 1 + rng.uniform_int(3) : 0;
    }
  ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.seed = 1;
  ForestModel model = train_forest(x, y, cfg);
  ScoreMatrix scores = predict_forest(model, x);
  for (int d = 0; d < 30; ++d)
    for (int c = 0; c < 2; ++c) CHECK((scores.at(d, c) >= 0.5) == (y.at(d, c) != 0));
}

TEST_CASE("a single unlimited tree memorizes consistent data") {
  OccurrenceMatrix x;
  x.n_docs = 40;
  x.n_codes = 3;
  x.a.resize(120);
  BinaryMatrix y(40, 3);
  Rng rng(8);
  for (int d = 0; d < 40; ++d)
    for (int c = 0; c < 3; ++c) {
      x.at(d, c) = rng.uniform_int(12);
      y.at(d, c) = rng.uniform() < 0.5;
    }
  // Remove label conflicts: duplicate feature vectors take the labels of
  // their first occurrence.
  std::map<std::vector<double>, int> first;
  for (int d = 0; d < 40; ++d) {
    auto [it, inserted] = first.emplace(x.row(d), d);
    if (!inserted)
      for (int c = 0; c < 3; ++c) y.at(d, c) = y.at(it->second, c);
  }
  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.max_depth = 0;  // unlimited
  cfg.bootstrap = false;
  cfg.feature_subsample = 1.0;
  ForestModel model = train_forest(x, y, cfg);
  ScoreMatrix s = predict_forest(model, x);
  for (int d = 0; d < 40; ++d)
    for (int c = 0; c < 3; ++c) CHECK((s.at(d, c) >= 0.5) == (y.at(d, c) != 0));
}

TEST_CASE("forest scores are vote fractions in [0,1] and deterministic") {
  OccurrenceMatrix x;
  x.n_docs = 25;
  x.n_codes = 4;
  x.a.resize(100);
  BinaryMatrix y(25, 4);
  Rng rng(15);
  for (int d = 0; d < 25; ++d)
    for (int c = 0; c < 4; ++c) {
      x.at(d, c) = rng.uniform_int(5);
      y.at(d, c) = rng.uniform() < 0.4;
    }
  ForestConfig cfg;
  cfg.n_trees = 12;
  cfg.seed = 77;
  ForestModel a = train_forest(x, y, cfg);
  ForestModel b = train_forest(x, y, cfg);
  ScoreMatrix sa = predict_forest(a, x);
  ScoreMatrix sb = predict_forest(b, x);
  CHECK(sa.a == sb.a);
  for (double v : sa.a) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    // Vote fractions over 12 trees are multiples of 1/12.
    CHECK(std::fabs(v * 12.0 - std::round(v * 12.0)) < 1e-9);
  }
}

TEST_CASE("single-class codes become flagged constant predictors") {
  OccurrenceMatrix x;
  x.n_docs = 10;
  x.n_codes = 2;
  x.a.assign(20, 1);
  BinaryMatrix y(10, 2);
  for (int d = 0; d < 10; ++d) y.at(d, 1) = 1;  // code 1 all positive, code 0 all negative
  ForestModel model = train_forest(x, y, {});
  CHECK(model.flagged_constant == 2);
  ScoreMatrix s = predict_forest(model, x);
  CHECK(s.at(0, 0) == 0.0);
  CHECK(s.at(0, 1) == 1.0);
}

TEST_CASE("forest checkpoints round-trip with a distinct format tag") {
  OccurrenceMatrix x;
  x.n_docs = 12;
  x.n_codes = 2;
  x.a.resize(24);
  BinaryMatrix y(12, 2);
  Rng rng(3);
  for (int d = 0; d < 12; ++d)
    for (int c = 0; c < 2; ++c) {
      x.at(d, c) = rng.uniform_int(4);
      y.at(d, c) = rng.uniform() < 0.5;
    }
  ForestConfig cfg;
  cfg.n_trees = 5;
  cfg.seed = 2;
  ForestModel model = train_forest(x, y, cfg);

  auto dir = fs::temp_directory_path() / "medcode_forest";
  fs::create_directories(dir);
  const std::string path = (dir / "f.ckpt").string();
  save_forest(model, "fp-1", path);
  std::string fp;
  ForestModel loaded = load_forest(path, &fp);
  CHECK(fp == "fp-1");
  CHECK(predict_forest(loaded, x).a == predict_forest(model, x).a);

  // The verifier loader must reject this file and vice versa.
  std::string bytes = read_file(path);
  CHECK(bytes.substr(0, 8) == "MCFORST1");
}
