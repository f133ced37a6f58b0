#include "medcode/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace medcode {

using nlohmann::json;

std::string fingerprint_hex(const std::string& canonical) {
  return to_hex(fnv1a64(canonical));
}

std::vector<Proposal> propose_corpus(const Corpus& corpus, const LabelSpace& labels,
                                     ProposalBackend& backend, const ProposeOptions& opts) {
  std::vector<Proposal> out;
  out.reserve(corpus.docs.size());
  for (const auto& d : corpus.docs) {
    SentenceIndexedDocument sid = split_sentences(d.text, d.id);
    out.push_back(propose_document(sid, labels, backend, opts));
  }
  return out;
}

std::vector<CandidateSet> candidate_sets(const std::vector<Proposal>& proposals,
                                         const LabelSpace& labels) {
  std::vector<CandidateSet> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) out.push_back(build_candidate_set(p, labels));
  return out;
}

std::vector<Proposal> align_proposals(const Corpus& corpus, std::vector<Proposal> proposals) {
  std::map<std::string, size_t> by_id;
  for (size_t i = 0; i < proposals.size(); ++i) by_id.emplace(proposals[i].doc_id, i);
  std::vector<Proposal> out;
  out.reserve(corpus.docs.size());
  for (const auto& d : corpus.docs) {
    auto it = by_id.find(d.id);
    if (it == by_id.end())
      throw IoError("no cached proposal for document '" + d.id + "'");
    out.push_back(std::move(proposals[it->second]));
  }
  return out;
}

BinaryMatrix gold_matrix(const Corpus& corpus, const LabelSpace& labels) {
  BinaryMatrix m(corpus.size(), labels.size());
  for (int d = 0; d < corpus.size(); ++d)
    for (int c = 0; c < labels.size(); ++c)
      m.at(d, c) = corpus.docs[size_t(d)].gold_labels[size_t(c)];
  return m;
}

PredictionSet predict_corpus(VerifierModel& model, const Corpus& corpus,
                             const std::vector<CandidateSet>& css, const LabelSpace& labels) {
  if (corpus.docs.size() != css.size())
    throw ConfigError("candidate sets are not aligned with the corpus");
  PredictionSet out;
  out.scores = ScoreMatrix(corpus.size(), labels.size());
  std::vector<nn::Mat> cache = encode_all_codes_eval(model, labels);
  for (int d = 0; d < corpus.size(); ++d) {
    const Document& doc = corpus.docs[size_t(d)];
    out.doc_ids.push_back(doc.id);
    SentenceIndexedDocument sid = split_sentences(doc.text, doc.id);
    auto preds = predict_document(model, sid, css[size_t(d)], labels, &cache);
    std::vector<int> ev(size_t(labels.size()), -1);
    for (int c = 0; c < labels.size(); ++c) {
      out.scores.at(d, c) = preds[size_t(c)].score;
      if (preds[size_t(c)].evidence_index) ev[size_t(c)] = *preds[size_t(c)].evidence_index;
    }
    out.evidence.push_back(std::move(ev));
  }
  return out;
}

void write_predictions(const PredictionSet& preds, const LabelSpace& labels,
                       const std::string& path) {
  std::ostringstream out;
  json meta{{"meta",
             {{"kind", "predictions"},
              {"fingerprint", preds.fingerprint},
              {"corpus_hash", preds.corpus_hash},
              {"n_codes", labels.size()}}}};
  out << meta.dump() << "\n";
  for (size_t d = 0; d < preds.doc_ids.size(); ++d) {
    std::vector<double> row(static_cast<size_t>(labels.size()));
    for (int c = 0; c < labels.size(); ++c) row[size_t(c)] = preds.scores.at(int(d), c);
    json rec{{"doc_id", preds.doc_ids[d]}, {"scores", row}, {"evidence", preds.evidence[d]}};
    out << rec.dump() << "\n";
  }
  write_file(path, out.str());
}

PredictionSet load_predictions(const std::string& path, const LabelSpace& labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions file: " + path);
  PredictionSet out;
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
    if (rec.contains("meta")) {
      out.fingerprint = rec["meta"].value("fingerprint", "");
      out.corpus_hash = rec["meta"].value("corpus_hash", "");
      if (rec["meta"].value("n_codes", labels.size()) != labels.size())
        throw IoError("predictions file was produced for a different label space");
      continue;
    }
    out.doc_ids.push_back(rec.at("doc_id").get<std::string>());
    rows.push_back(rec.at("scores").get<std::vector<double>>());
    out.evidence.push_back(rec.at("evidence").get<std::vector<int>>());
    if (int(rows.back().size()) != labels.size() ||
        int(out.evidence.back().size()) != labels.size())
      throw IoError("predictions line " + std::to_string(line_no) +
                    ": row width does not match the label space");
  }
  out.scores = ScoreMatrix(int(rows.size()), labels.size());
  for (size_t d = 0; d < rows.size(); ++d)
    for (int c = 0; c < labels.size(); ++c) out.scores.at(int(d), c) = rows[d][size_t(c)];
  return out;
}

namespace {

std::map<DocCode, std::set<int>> annotations_of(const Corpus& corpus) {
  std::map<DocCode, std::set<int>> out;
  for (const auto& d : corpus.docs)
    for (const auto& [code, sents] : d.gold_evidence)
      if (!sents.empty()) out[{d.id, code}] = sents;
  return out;
}

}  // namespace

EvidenceInputs evidence_inputs_from_predictions(const Corpus& corpus, const LabelSpace& labels,
                                                const BinaryMatrix& preds,
                                                const PredictionSet& pred_set) {
  EvidenceInputs in;
  in.annotated = annotations_of(corpus);
  for (int d = 0; d < corpus.size(); ++d) {
    for (int c = 0; c < labels.size(); ++c) {
      if (!preds.at(d, c)) continue;
      const int ev = pred_set.evidence[size_t(d)][size_t(c)];
      if (ev < 0) continue;
      in.predicted[{corpus.docs[size_t(d)].id, labels.at(c).id}].insert(ev);
    }
  }
  return in;
}

EvidenceInputs evidence_inputs_from_proposals(const Corpus& corpus, const LabelSpace& labels,
                                              const BinaryMatrix& preds,
                                              const std::vector<Proposal>& proposals,
                                              bool first_pair_only) {
  EvidenceInputs in;
  in.annotated = annotations_of(corpus);
  for (int d = 0; d < corpus.size(); ++d) {
    const Proposal& p = proposals[size_t(d)];
    std::map<std::string, std::set<int>> by_code;
    for (const auto& pair : p.evidence_pairs) by_code[pair.code].insert(pair.sentence);
    for (int c = 0; c < labels.size(); ++c) {
      if (!preds.at(d, c)) continue;
      auto it = by_code.find(labels.at(c).id);
      if (it == by_code.end() || it->second.empty()) continue;
      std::set<int>& dst = in.predicted[{corpus.docs[size_t(d)].id, labels.at(c).id}];
      if (first_pair_only)
        dst.insert(*it->second.begin());
      else
        dst = it->second;
    }
  }
  return in;
}

std::vector<std::pair<int, int>> evidence_positions(const Corpus& corpus,
                                                    const LabelSpace& labels,
                                                    const BinaryMatrix& preds,
                                                    const PredictionSet& pred_set) {
  std::vector<std::pair<int, int>> out;
  for (int d = 0; d < corpus.size(); ++d) {
    const int len = split_sentences(corpus.docs[size_t(d)].text).size();
    for (int c = 0; c < labels.size(); ++c) {
      if (!preds.at(d, c)) continue;
      const int ev = pred_set.evidence[size_t(d)][size_t(c)];
      if (ev >= 0) out.emplace_back(ev, len);
    }
  }
  return out;
}

FixtureSpec standard_fixture() {
  FixtureSpec f;
  f.train_cfg.n_docs = 500;
  f.train_cfg.n_codes = 50;
  f.train_cfg.keyword_vocab_seed = 7;
  f.train_cfg.doc_seed = 101;
  f.train_cfg.id_prefix = "tr";
  f.val_cfg = f.train_cfg;
  f.val_cfg.n_docs = 100;
  f.val_cfg.doc_seed = 102;
  f.val_cfg.id_prefix = "va";
  f.test_cfg = f.train_cfg;
  f.test_cfg.n_docs = 200;
  f.test_cfg.doc_seed = 103;
  f.test_cfg.id_prefix = "te";

  f.oracle.recall = 0.9;
  f.oracle.fp_code_rate = 0.8;
  f.oracle.fp_evidence_rate = 1.2;
  f.oracle.middle_miss_boost = 0.6;
  f.oracle.seed = 11;
  f.segn = 10;

  f.verifier.emb_dim = 32;
  f.verifier.hidden_dim = 64;

  f.training.learning_rate = 1e-2;
  f.training.weight_decay = 0.02;
  f.training.epochs = 6;
  f.training.seed = 5;
  f.training.clip_norm = 5.0;

  f.forest.seed = 13;
  return f;
}

namespace {

StageMetrics metrics_for(const Corpus& test, const LabelSpace& labels,
                         const BinaryMatrix& preds, const ScoreMatrix& scores,
                         const EvidenceInputs& evidence) {
  StageMetrics m;
  m.coding = coding_metrics(preds, scores, gold_matrix(test, labels));
  m.evidence = evidence_report(evidence);
  return m;
}

ScoreMatrix scores_from_binary(const BinaryMatrix& b) {
  ScoreMatrix s(b.n_docs, b.n_codes);
  for (size_t i = 0; i < b.a.size(); ++i) s.a[i] = double(b.a[i]);
  return s;
}

}  // namespace

StageComparison compare_stages(const StageComparisonInputs& in, const VerifierConfig& vcfg,
                               const TrainingConfig& tcfg, const ForestConfig& fcfg,
                               bool include_no_silver) {
  const Corpus& train = *in.train;
  const Corpus& val = *in.val;
  const Corpus& test = *in.test;
  const LabelSpace& labels = *in.labels;

  const auto train_cs = candidate_sets(*in.train_proposals, labels);
  const auto val_cs = candidate_sets(*in.val_proposals, labels);
  const auto test_cs = candidate_sets(*in.test_proposals, labels);

  StageComparison out;

  // Full verifier: train with dual supervision, tune thresholds on val.
  {
    TrainResult tr = train_verifier(train, train_cs, labels, vcfg, tcfg, {true}, &val, &val_cs);
    out.verifier_best_epoch = tr.best_epoch;
    PredictionSet val_preds = predict_corpus(tr.model, val, val_cs, labels);
    ThresholdTable table = optimize_thresholds(val_preds.scores, gold_matrix(val, labels));
    PredictionSet test_preds = predict_corpus(tr.model, test, test_cs, labels);
    BinaryMatrix bin = apply_thresholds(test_preds.scores, table);
    out.verifier = metrics_for(test, labels, bin, test_preds.scores,
                               evidence_inputs_from_predictions(test, labels, bin, test_preds));
  }

  if (include_no_silver) {
    TrainResult tr = train_verifier(train, train_cs, labels, vcfg, tcfg, {false}, &val, &val_cs);
    PredictionSet val_preds = predict_corpus(tr.model, val, val_cs, labels);
    ThresholdTable table = optimize_thresholds(val_preds.scores, gold_matrix(val, labels));
    PredictionSet test_preds = predict_corpus(tr.model, test, test_cs, labels);
    BinaryMatrix bin = apply_thresholds(test_preds.scores, table);
    out.no_silver = metrics_for(test, labels, bin, test_preds.scores,
                                evidence_inputs_from_predictions(test, labels, bin, test_preds));
  }

  // Stage-1 and stage-1a read the proposals directly.
  {
    BinaryMatrix bin(test.size(), labels.size());
    for (int d = 0; d < test.size(); ++d) {
      auto row = stage1_predict((*in.test_proposals)[size_t(d)], labels);
      for (int c = 0; c < labels.size(); ++c) bin.at(d, c) = row[size_t(c)];
    }
    out.stage1 = metrics_for(
        test, labels, bin, scores_from_binary(bin),
        evidence_inputs_from_proposals(test, labels, bin, *in.test_proposals, false));
  }
  {
    BinaryMatrix bin(test.size(), labels.size());
    for (int d = 0; d < test.size(); ++d) {
      auto row = stage1a_predict((*in.test_proposals)[size_t(d)], labels);
      for (int c = 0; c < labels.size(); ++c) bin.at(d, c) = row[size_t(c)];
    }
    out.stage1a = metrics_for(
        test, labels, bin, scores_from_binary(bin),
        evidence_inputs_from_proposals(test, labels, bin, *in.test_proposals, false));
  }

  // Random-forest verifier over occurrence counts, thresholds tuned on val.
  {
    OccurrenceMatrix train_occ = build_occurrence_matrix(*in.train_proposals, labels);
    OccurrenceMatrix val_occ = build_occurrence_matrix(*in.val_proposals, labels);
    OccurrenceMatrix test_occ = build_occurrence_matrix(*in.test_proposals, labels);
    ForestModel forest = train_forest(train_occ, gold_matrix(train, labels), fcfg);
    ThresholdTable table =
        optimize_thresholds(predict_forest(forest, val_occ), gold_matrix(val, labels));
    ScoreMatrix test_scores = predict_forest(forest, test_occ);
    BinaryMatrix bin = apply_thresholds(test_scores, table);
    out.forest = metrics_for(
        test, labels, bin, test_scores,
        evidence_inputs_from_proposals(test, labels, bin, *in.test_proposals, true));
  }
  return out;
}

std::vector<SegnSweepRow> sweep_segn(const Corpus& corpus, const LabelSpace& labels,
                                     ProposalBackend& backend, const ProposeOptions& base_opts,
                                     const std::vector<int>& segns) {
  std::vector<SegnSweepRow> out;
  const BinaryMatrix gold = gold_matrix(corpus, labels);
  for (int segn : segns) {
    ProposeOptions opts = base_opts;
    opts.segn = segn;
    std::vector<Proposal> proposals = propose_corpus(corpus, labels, backend, opts);
    BinaryMatrix bin(corpus.size(), labels.size());
    for (int d = 0; d < corpus.size(); ++d) {
      auto row = stage1a_predict(proposals[size_t(d)], labels);
      for (int c = 0; c < labels.size(); ++c) bin.at(d, c) = row[size_t(c)];
    }
    ScoreMatrix scores(corpus.size(), labels.size());
    for (size_t i = 0; i < bin.a.size(); ++i) scores.a[i] = double(bin.a[i]);
    CodingReport r = coding_metrics(bin, scores, gold);
    out.push_back({segn, r.micro_precision, r.micro_recall, r.micro_f1});
  }
  return out;
}

}  // namespace medcode
