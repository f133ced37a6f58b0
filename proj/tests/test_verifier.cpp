#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "medcode/pipeline.hpp"
#include "medcode/synthetic.hpp"
#include "medcode/verifier.hpp"
#include "support/gradcheck.hpp"

using namespace medcode;
using nn::Mat;
using nn::Tape;
using nn::Var;
namespace fs = std::filesystem;

namespace {

VerifierConfig tiny_config(int emb = 6, int hidden = 8) {
  VerifierConfig cfg;
  cfg.emb_dim = emb;
  cfg.hidden_dim = hidden;
  return cfg;
}

VerifierModel tiny_model(uint64_t seed = 1) {
  Vocab v;
  v.tokens = {"<unk>", "alpha", "beta", "gamma", "delta", "fever", "no"};
  for (size_t i = 0; i < v.tokens.size(); ++i) v.index.emplace(v.tokens[i], int(i));
  return VerifierModel(v, tiny_config(), seed);
}

}  // namespace

TEST_CASE("encode_sentence is deterministic in eval mode with one row per token") {
  VerifierModel model = tiny_model();
  Mat h1 = model.encode_sentence_eval("alpha beta gamma");
  Mat h2 = model.encode_sentence_eval("alpha beta gamma");
  CHECK(h1.a == h2.a);
  CHECK(h1.rows == 3);
  CHECK(h1.cols == 8);
  CHECK(model.encode_sentence_eval("alpha").rows == 1);
  // Empty text maps to the single out-of-vocabulary token.
  CHECK(model.encode_sentence_eval("").rows == 1);
  CHECK(model.encode_sentence_eval("??").rows == 1);  // punctuation-only
}

TEST_CASE("encode_code shares the encoder and pools token states") {
  VerifierModel model = tiny_model();
  Mat a = model.encode_code_eval({"x1", "alpha beta"});
  Mat b = model.encode_code_eval({"x2", "alpha beta"});
  CHECK(a.a == b.a);  // identical descriptions, identical queries

  // Single-token description: the pooled query equals that token's state.
  Mat states = model.encode_sentence_eval("fever");
  Mat query = model.encode_code_eval({"x3", "fever"});
  REQUIRE(states.rows == 1);
  for (int j = 0; j < states.cols; ++j)
    CHECK(query(0, j) == doctest::Approx(states(0, j)).epsilon(1e-12));
}

TEST_CASE("perturbing an embedding entry moves H consistently with the gradient") {
  VerifierModel model = tiny_model(9);
  std::vector<int> tokens = encode_tokens(model.vocab(), "alpha beta fever");
  // Probe functional: sum of H in a fixed random direction.
  Rng rng(4);
  Mat probe(3, 8);
  for (double& v : probe.a) v = rng.uniform(-1, 1);

  nn::Param* emb = model.params()[0];
  auto loss = [&](bool backward) {
    Tape tape;
    Var h = model.encode_sentence(tape, tokens, {});
    // scalar = sum_ij H_ij * probe_ij via row-wise dots
    std::vector<Var> partials;
    for (int r = 0; r < 3; ++r) {
      Mat prow(1, 8);
      for (int j = 0; j < 8; ++j) prow(0, j) = probe(r, j);
      partials.push_back(tape.matvec_rows(tape.row(h, r), tape.leaf(prow)));
    }
    Var total = tape.sum(partials);
    const double v = tape.val(total)(0, 0);
    if (backward) tape.backward(total);
    return v;
  };
  const double err = testsupport::max_gradient_error(
      {emb}, [&]() { return loss(false); }, [&]() { loss(true); });
  CHECK(err < 1e-4);
}

TEST_CASE("attend matches a scalar hand computation on a 2-token 2-dim instance") {
  Vocab v;
  v.tokens = {"<unk>"};
  v.index.emplace("<unk>", 0);
  VerifierConfig cfg = tiny_config(2, 2);
  VerifierModel model(v, cfg, 0);

  // Freeze the head at small fixed values.
  nn::Param& w_head = model.raw_params()[4];
  nn::Param& b_head = model.raw_params()[5];
  const double w[6][2] = {{0.10, -0.20}, {0.30, 0.05},  {-0.15, 0.25},
                          {0.20, 0.10},  {-0.05, 0.15}, {0.08, -0.12}};
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 2; ++j) w_head.value(i, j) = w[i][j];
  b_head.value(0, 0) = 0.02;
  b_head.value(0, 1) = -0.03;

  const double h0[2] = {0.5, -1.0};
  const double h1[2] = {1.5, 0.25};
  const double q[2] = {0.8, 0.4};

  Tape tape;
  Mat hm(2, 2);
  hm(0, 0) = h0[0];
  hm(0, 1) = h0[1];
  hm(1, 0) = h1[0];
  hm(1, 1) = h1[1];
  Mat qm(1, 2);
  qm(0, 0) = q[0];
  qm(0, 1) = q[1];
  const Mat& z = tape.val(model.attend(tape, tape.leaf(hm), tape.leaf(qm)));

  // Independent scalar route.
  const double scale = 1.0 / std::sqrt(2.0);
  const double s0 = (h0[0] * q[0] + h0[1] * q[1]) * scale;
  const double s1 = (h1[0] * q[0] + h1[1] * q[1]) * scale;
  const double m = std::max(s0, s1);
  const double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
  const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
  const double ctx[2] = {a0 * h0[0] + a1 * h1[0], a0 * h0[1] + a1 * h1[1]};
  const double feats[6] = {ctx[0], ctx[1], q[0], q[1], ctx[0] * q[0], ctx[1] * q[1]};
  double expected[2] = {0.02, -0.03};
  for (int i = 0; i < 6; ++i) {
    expected[0] += feats[i] * w[i][0];
    expected[1] += feats[i] * w[i][1];
  }
  CHECK(z(0, 0) == doctest::Approx(expected[0]).epsilon(1e-6));
  CHECK(z(0, 1) == doctest::Approx(expected[1]).epsilon(1e-6));

  // T=1: the context is the lone row regardless of the query.
  Mat h_single(1, 2);
  h_single(0, 0) = 0.7;
  h_single(0, 1) = -0.2;
  Mat q2(1, 2);
  q2(0, 0) = -3.0;
  q2(0, 1) = 5.0;
  const Mat& z1 = tape.val(model.attend(tape, tape.leaf(h_single), tape.leaf(q2)));
  const double f1[6] = {0.7, -0.2, -3.0, 5.0, 0.7 * -3.0, -0.2 * 5.0};
  double exp1[2] = {0.02, -0.03};
  for (int i = 0; i < 6; ++i) {
    exp1[0] += f1[i] * w[i][0];
    exp1[1] += f1[i] * w[i][1];
  }
  CHECK(z1(0, 0) == doctest::Approx(exp1[0]).epsilon(1e-6));
  CHECK(z1(0, 1) == doctest::Approx(exp1[1]).epsilon(1e-6));
}

TEST_CASE("sentence weights match hand softmax values") {
  CHECK(sentence_weight_values({{0, 0}, {0, 0}}) == std::vector<double>{0.5, 0.5});
  CHECK(sentence_weight_values({{3, 1}}) == std::vector<double>{1.0});
  auto w = sentence_weight_values({{2, 0}, {0, 0}});
  CHECK(w[0] == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(w[1] == doctest::Approx(0.1192).epsilon(1e-4));
}

TEST_CASE("weights are normalized and shift invariant") {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const int s = 1 + rng.uniform_int(6);
    std::vector<std::array<double, 2>> zs, shifted;
    const double c = rng.uniform(-5, 5);
    for (int j = 0; j < s; ++j) {
      const double a = rng.uniform(-4, 4), b = rng.uniform(-4, 4);
      zs.push_back({a, b});
      shifted.push_back({a + c, b + c});
    }
    auto w1 = sentence_weight_values(zs);
    auto w2 = sentence_weight_values(shifted);
    double sum = 0;
    for (double x : w1) {
      CHECK(x > 0);
      sum += x;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    for (int j = 0; j < s; ++j) CHECK(w2[size_t(j)] == doctest::Approx(w1[size_t(j)]).epsilon(1e-9));
    CHECK(select_evidence(zs).first == select_evidence(shifted).first);
  }
}

TEST_CASE("loss components match the committed hand values") {
  Tape tape;
  auto z_at = [&](double a, double b) {
    Mat m(1, 2);
    m(0, 0) = a;
    m(0, 1) = b;
    return tape.leaf(std::move(m));
  };

  SUBCASE("single uniform sentence, positive gold: ln 2") {
    std::vector<Var> zs{z_at(0, 0)};
    Var w = sentence_weights(tape, zs);
    CHECK(tape.val(loss_gold(tape, zs, w, 1))(0, 0) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("saturated positive logit: loss under 1e-3") {
    std::vector<Var> zs{z_at(0, 20)};
    Var w = sentence_weights(tape, zs);
    CHECK(tape.val(loss_gold(tape, zs, w, 1))(0, 0) < 1e-3);
  }
  SUBCASE("two identical sentences equal one") {
    std::vector<Var> one{z_at(0.7, -0.3)};
    Var w1 = sentence_weights(tape, one);
    const double single = tape.val(loss_gold(tape, one, w1, 1))(0, 0);
    std::vector<Var> two{z_at(0.7, -0.3), z_at(0.7, -0.3)};
    Var w2 = sentence_weights(tape, two);
    CHECK(tape.val(loss_gold(tape, two, w2, 1))(0, 0) == doctest::Approx(single).epsilon(1e-9));
  }
  SUBCASE("silver: ln 2 at the zero logit for either label, saturation near zero") {
    std::vector<Var> zs{z_at(0, 0)};
    CHECK(tape.val(loss_silver(tape, zs, {1}))(0, 0) == doctest::Approx(std::log(2.0)));
    CHECK(tape.val(loss_silver(tape, zs, {0}))(0, 0) == doctest::Approx(std::log(2.0)));
    std::vector<Var> hot{z_at(0, 20)};
    CHECK(tape.val(loss_silver(tape, hot, {1}))(0, 0) < 1e-3);
  }
  SUBCASE("total is the plain sum and the ablation drops the silver term") {
    // Two uniform sentences, gold 1, both silver-positive:
    // gold = ln 2, silver = 2 ln 2, total = 3 ln 2.
    std::vector<Var> zs{z_at(0, 0), z_at(0, 0)};
    Var w = sentence_weights(tape, zs);
    const double total = tape.val(total_loss(tape, zs, w, 1, {1, 1}, true))(0, 0);
    CHECK(total == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-9));
    const double gold_only = tape.val(total_loss(tape, zs, w, 1, {1, 1}, false))(0, 0);
    CHECK(gold_only == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    const double gold = tape.val(loss_gold(tape, zs, w, 1))(0, 0);
    const double silver = tape.val(loss_silver(tape, zs, {1, 1}))(0, 0);
    CHECK(total == doctest::Approx(gold + silver).epsilon(1e-12));
  }
}

TEST_CASE("full verifier loss gradient matches finite differences") {
  VerifierModel model = tiny_model(21);
  std::vector<std::vector<int>> sentences = {
      encode_tokens(model.vocab(), "alpha fever beta"),
      encode_tokens(model.vocab(), "no fever"),
  };
  std::vector<int> desc = encode_tokens(model.vocab(), "fever delta");

  auto build = [&](bool backward) {
    Tape tape;
    std::vector<Var> zs;
    Var query = model.encode_code(tape, desc, {});
    for (const auto& toks : sentences) {
      Var h = model.encode_sentence(tape, toks, {});
      zs.push_back(model.attend(tape, h, query));
    }
    Var w = sentence_weights(tape, zs);
    Var loss = total_loss(tape, zs, w, 1, {1, 0}, true);
    const double v = tape.val(loss)(0, 0);
    if (backward) tape.backward(loss);
    return v;
  };
  const double err = testsupport::max_gradient_error(
      model.params(), [&]() { return build(false); }, [&]() { build(true); });
  CHECK(err < 1e-4);
}

TEST_CASE("select_evidence implements the decision rule") {
  SUBCASE("argmax weight picks the first sentence, score is softmax positive") {
    auto [j, score] = select_evidence({{0, 3}, {1, 0}});
    CHECK(j == 0);
    CHECK(score == doctest::Approx(0.9526).epsilon(1e-4));
  }
  SUBCASE("negative argmax yields a score under 0.5") {
    auto [j, score] = select_evidence({{3, 0}});
    CHECK(j == 0);
    CHECK(score == doctest::Approx(0.0474).epsilon(1e-4));
  }
  SUBCASE("ties go to the lowest index") {
    auto [j, score] = select_evidence({{1, 1}, {1, 1}, {1, 1}});
    CHECK(j == 0);
    CHECK(score == doctest::Approx(0.5));
  }
  SUBCASE("score is monotone in the selected positive logit") {
    double prev = -1;
    for (double zpos = -2; zpos < 3; zpos += 0.5) {
      auto [j, score] = select_evidence({{0.5, zpos}});
      CHECK(score > prev);
      prev = score;
    }
  }
}

TEST_CASE("predict handles empty candidate sets") {
  VerifierModel model = tiny_model();
  LabelSpace labels = LabelSpace::from_codes({{"1.0", "fever delta"}, {"2.0", "alpha beta"}});
  SentenceIndexedDocument sid = split_sentences("alpha beta. no fever.", "d");
  CandidateSet cs;
  cs.doc_id = "d";
  cs.n_codes = 2;
  auto preds = predict_document(model, sid, cs, labels);
  REQUIRE(preds.size() == 2);
  for (const auto& p : preds) {
    CHECK(p.score == 0.0);
    CHECK(!p.evidence_index.has_value());
  }
}

TEST_CASE("predicted evidence always comes from the candidate set") {
  SyntheticConfig cfg;
  cfg.n_docs = 10;
  cfg.n_codes = 6;
  auto [corpus, labels] = generate_synthetic(cfg);
  MockOracleBackend oracle(corpus, labels, {0.9, 0.5, 0.8, 0.0, 3});
  auto proposals = propose_corpus(corpus, labels, oracle, {});
  auto css = candidate_sets(proposals, labels);
  VerifierConfig vcfg = tiny_config();
  TrainingConfig tcfg;
  tcfg.epochs = 1;
  tcfg.learning_rate = 1e-3;
  TrainResult tr = train_verifier(corpus, css, labels, vcfg, tcfg);
  for (int d = 0; d < corpus.size(); ++d) {
    SentenceIndexedDocument sid = split_sentences(corpus.docs[size_t(d)].text);
    auto preds = predict_document(tr.model, sid, css[size_t(d)], labels);
    for (const auto& p : preds) {
      if (!p.evidence_index) continue;
      CHECK(std::count(css[size_t(d)].m.begin(), css[size_t(d)].m.end(), *p.evidence_index) ==
            1);
    }
  }
}

TEST_CASE("training is deterministic and the silver ablation changes parameters") {
  SyntheticConfig cfg;
  cfg.n_docs = 8;
  cfg.n_codes = 5;
  cfg.sentences_per_doc = {6, 10};
  auto [corpus, labels] = generate_synthetic(cfg);
  MockOracleBackend oracle(corpus, labels, {0.9, 0.3, 0.5, 0.0, 2});
  auto css = candidate_sets(propose_corpus(corpus, labels, oracle, {}), labels);

  VerifierConfig vcfg = tiny_config();
  TrainingConfig tcfg;
  tcfg.epochs = 2;
  tcfg.learning_rate = 2e-3;
  tcfg.seed = 99;

  TrainResult a = train_verifier(corpus, css, labels, vcfg, tcfg);
  TrainResult b = train_verifier(corpus, css, labels, vcfg, tcfg);
  for (size_t i = 0; i < a.model.raw_params().size(); ++i)
    CHECK(a.model.raw_params()[i].value.a == b.model.raw_params()[i].value.a);

  TrainResult c = train_verifier(corpus, css, labels, vcfg, tcfg, {false});
  bool any_diff = false;
  for (size_t i = 0; i < a.model.raw_params().size(); ++i)
    if (a.model.raw_params()[i].value.a != c.model.raw_params()[i].value.a) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("training learns a small separable task") {
  SyntheticConfig cfg;
  cfg.n_docs = 40;
  cfg.n_codes = 6;
  cfg.sentences_per_doc = {6, 10};
  cfg.codes_per_doc = {1, 3};
  auto [corpus, labels] = generate_synthetic(cfg);
  MockOracleBackend oracle(corpus, labels, {0.95, 0.0, 0.5, 0.0, 6});
  auto css = candidate_sets(propose_corpus(corpus, labels, oracle, {}), labels);

  VerifierConfig vcfg = tiny_config(16, 24);
  TrainingConfig tcfg;
  tcfg.epochs = 25;
  tcfg.learning_rate = 2e-2;
  tcfg.seed = 3;
  tcfg.clip_norm = 5.0;
  TrainResult tr = train_verifier(corpus, css, labels, vcfg, tcfg);

  long tp = 0, fp = 0, fn = 0;
  for (int d = 0; d < corpus.size(); ++d) {
    SentenceIndexedDocument sid = split_sentences(corpus.docs[size_t(d)].text);
    auto preds = predict_document(tr.model, sid, css[size_t(d)], labels);
    for (int c = 0; c < labels.size(); ++c) {
      const bool pred = preds[size_t(c)].score >= 0.5;
      const bool gold = corpus.docs[size_t(d)].gold_labels[size_t(c)] != 0;
      if (pred && gold) ++tp;
      else if (pred) ++fp;
      else if (gold) ++fn;
    }
  }
  const double f1 = 2.0 * double(tp) / double(2 * tp + fp + fn);
  CHECK(f1 >= 0.95);
}

TEST_CASE("exploding training aborts with a named diagnostic") {
  SyntheticConfig cfg;
  cfg.n_docs = 4;
  cfg.n_codes = 4;
  cfg.codes_per_doc = {1, 2};
  auto [corpus, labels] = generate_synthetic(cfg);
  MockOracleBackend oracle(corpus, labels, {1.0, 0.0, 0.0, 0.0, 1});
  auto css = candidate_sets(propose_corpus(corpus, labels, oracle, {}), labels);
  TrainingConfig tcfg;
  tcfg.epochs = 2;
  tcfg.learning_rate = 1e300;
  CHECK_THROWS_WITH_AS(train_verifier(corpus, css, labels, tiny_config(), tcfg),
                       doctest::Contains("doc"), TrainError);
}

TEST_CASE("checkpoints round-trip and reject foreign formats") {
  VerifierModel model = tiny_model(8);
  TrainingConfig tcfg;
  tcfg.seed = 42;
  tcfg.epochs = 7;
  auto dir = fs::temp_directory_path() / "medcode_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(model, tcfg, "fp-abc", path);

  std::string fp;
  TrainingConfig loaded_cfg;
  VerifierModel loaded = load_checkpoint(path, &fp, &loaded_cfg);
  CHECK(fp == "fp-abc");
  CHECK(loaded_cfg.epochs == 7);
  CHECK(loaded.vocab().tokens == model.vocab().tokens);
  REQUIRE(loaded.raw_params().size() == model.raw_params().size());
  for (size_t i = 0; i < model.raw_params().size(); ++i)
    CHECK(loaded.raw_params()[i].value.a == model.raw_params()[i].value.a);

  // Loaded models behave identically.
  CHECK(loaded.encode_sentence_eval("alpha fever").a ==
        model.encode_sentence_eval("alpha fever").a);

  // Byte-identical re-serialization.
  const std::string path2 = (dir / "m2.ckpt").string();
  save_checkpoint(loaded, tcfg, "fp-abc", path2);
  CHECK(read_file(path) == read_file(path2));

  // A corrupted magic tag is rejected.
  std::string bytes = read_file(path);
  bytes[0] = 'X';
  const std::string bad = (dir / "bad.ckpt").string();
  write_file(bad, bytes);
  CHECK_THROWS_AS(load_checkpoint(bad), IoError);
}

TEST_CASE("parameter count is reported") {
  VerifierModel model = tiny_model();
  // emb 7x6 + w_ih 6x32 + w_hh 8x32 + b 32 + head 24x2 + b_head 2
  CHECK(model.param_count() == size_t(7 * 6 + 6 * 32 + 8 * 32 + 32 + 48 + 2));
}
