#include "medcode/cli.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "medcode/pipeline.hpp"

namespace medcode {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitBackend = 4;
constexpr int kExitFingerprint = 5;

struct CliFailure : std::runtime_error {
  int code;
  CliFailure(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

void update_manifest(const std::string& artifact_path, const std::string& kind,
                     const std::string& fingerprint) {
  fs::path p(artifact_path);
  fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
  fs::path manifest = dir / "manifest.json";
  json m;
  if (fs::exists(manifest)) {
    m = json::parse(read_file(manifest.string()), nullptr, false);
    if (!m.is_object()) m = json::object();
  }
  if (!m.contains("artifacts") || !m["artifacts"].is_array()) m["artifacts"] = json::array();
  json entry{{"path", p.filename().string()}, {"kind", kind}, {"fingerprint", fingerprint}};
  auto& arr = m["artifacts"];
  for (auto& e : arr) {
    if (e.is_object() && e.value("path", "") == entry["path"]) {
      e = entry;
      write_file(manifest.string(), m.dump(2) + "\n");
      return;
    }
  }
  arr.push_back(entry);
  write_file(manifest.string(), m.dump(2) + "\n");
}

struct OracleFlags {
  double recall = 0.9;
  double fp_code_rate = 0.8;
  double fp_evidence_rate = 1.2;
  double middle_miss_boost = 0.6;
  uint64_t seed = 11;

  void attach(CLI::App* cmd) {
    cmd->add_option("--oracle-recall", recall, "Mock oracle per-sentence recall");
    cmd->add_option("--oracle-fp-code-rate", fp_code_rate,
                    "Spurious codes per nominal segment");
    cmd->add_option("--oracle-fp-evidence-rate", fp_evidence_rate,
                    "Spurious evidence pairs per nominal segment");
    cmd->add_option("--oracle-middle-miss-boost", middle_miss_boost,
                    "Extra miss probability in the middle of long segments");
    cmd->add_option("--oracle-seed", seed, "Mock oracle seed");
  }
  OracleConfig config() const {
    return {recall, fp_code_rate, fp_evidence_rate, middle_miss_boost, seed};
  }
};

struct BackendFlags {
  std::string kind = "mock";
  std::string endpoint;
  double temperature = 0.1;
  int max_tokens = 1024;
  int retries = 2;
  int timeout_ms = 30000;
  int in_flight = 1;
  OracleFlags oracle;

  void attach(CLI::App* cmd) {
    cmd->add_option("--backend", kind, "Proposal backend: mock or http")
        ->check(CLI::IsMember({"mock", "http"}));
    cmd->add_option("--endpoint", endpoint, "HTTP backend endpoint, e.g. http://host:port/v1");
    cmd->add_option("--temperature", temperature, "Sampling temperature");
    cmd->add_option("--max-tokens", max_tokens, "Response token cap");
    cmd->add_option("--retries", retries, "Transport retries / parse re-asks");
    cmd->add_option("--timeout-ms", timeout_ms, "HTTP timeout");
    cmd->add_option("--in-flight", in_flight, "Concurrent per-segment calls");
    oracle.attach(cmd);
  }

  BackendConfig backend_config() const {
    BackendConfig cfg;
    cfg.endpoint = endpoint;
    cfg.temperature = temperature;
    cfg.max_tokens = max_tokens;
    cfg.retries = retries;
    cfg.timeout_ms = timeout_ms;
    cfg.max_in_flight = in_flight;
    return cfg;
  }

  std::unique_ptr<ProposalBackend> make(const Corpus& corpus, const LabelSpace& labels) const {
    if (kind == "http") {
      if (endpoint.empty())
        throw CliFailure(kExitUsage, "--endpoint is required with --backend http");
      return std::make_unique<HttpBackend>(backend_config());
    }
    return std::make_unique<MockOracleBackend>(corpus, labels, oracle.config());
  }

  std::string fingerprint_fields() const {
    std::ostringstream s;
    s << kind << "|" << temperature << "|" << max_tokens;
    if (kind == "mock") {
      s << "|" << oracle.recall << "|" << oracle.fp_code_rate << "|"
        << oracle.fp_evidence_rate << "|" << oracle.middle_miss_boost << "|" << oracle.seed;
    } else {
      s << "|" << endpoint;
    }
    return s.str();
  }
};

Corpus load_corpus_or_fail(const std::string& path, const LabelSpace& labels) {
  std::vector<std::string> warnings;
  Corpus corpus = load_corpus(path, labels, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return corpus;
}

int do_gen_corpus(const std::string& out_dir, int n_train, int n_val, int n_test, int n_codes,
                  uint64_t keyword_seed, uint64_t doc_seed, int min_sents, int max_sents,
                  int min_codes, int max_codes, double distractor_rate, double negation_rate) {
  fs::create_directories(out_dir);
  SyntheticConfig base;
  base.n_codes = n_codes;
  base.keyword_vocab_seed = keyword_seed;
  base.sentences_per_doc = {min_sents, max_sents};
  base.codes_per_doc = {min_codes, max_codes};
  base.distractor_rate = distractor_rate;
  base.negation_rate = negation_rate;

  struct Split {
    const char* name;
    int n;
    uint64_t seed_offset;
    const char* prefix;
  };
  const Split splits[] = {{"train", n_train, 0, "tr"}, {"val", n_val, 1, "va"},
                          {"test", n_test, 2, "te"}};
  LabelSpace labels;
  for (const auto& s : splits) {
    if (s.n <= 0) continue;
    SyntheticConfig cfg = base;
    cfg.n_docs = s.n;
    cfg.doc_seed = doc_seed + s.seed_offset;
    cfg.id_prefix = s.prefix;
    auto [corpus, lab] = generate_synthetic(cfg);
    labels = lab;
    const std::string path = out_dir + "/" + s.name + ".jsonl";
    write_corpus(corpus, labels, path);
    update_manifest(path, "corpus", to_hex(corpus_content_hash(corpus)));
    std::cout << "wrote " << path << " (" << corpus.size() << " docs)\n";
  }
  if (labels.size() == 0) labels = synthetic_labels(base);
  write_labels(labels, out_dir + "/labels.json");
  update_manifest(out_dir + "/labels.json", "labels", to_hex(labels_content_hash(labels)));
  std::cout << "wrote " << out_dir << "/labels.json (" << labels.size() << " codes)\n";
  return 0;
}

int do_propose(const std::string& corpus_path, const std::string& labels_path,
               const std::string& out_path, int segn, const BackendFlags& backend_flags,
               int max_note_tokens) {
  LabelSpace labels = load_labels(labels_path);
  Corpus corpus = load_corpus_or_fail(corpus_path, labels);
  auto backend = backend_flags.make(corpus, labels);

  ProposeOptions opts;
  opts.segn = segn;
  opts.backend = backend_flags.backend_config();
  opts.max_note_tokens = max_note_tokens;

  std::vector<Proposal> proposals;
  try {
    proposals = propose_corpus(corpus, labels, *backend, opts);
  } catch (const ProposeError& e) {
    throw CliFailure(kExitBackend, e.what());
  } catch (const BackendError& e) {
    throw CliFailure(kExitBackend, e.what());
  }

  ProposalsMeta meta;
  meta.segn = segn;
  meta.backend = backend->name();
  meta.corpus_hash = to_hex(corpus_content_hash(corpus));
  meta.labels_hash = to_hex(labels_content_hash(labels));
  meta.fingerprint = fingerprint_hex(meta.corpus_hash + "|" + meta.labels_hash + "|" +
                                     std::to_string(segn) + "|" +
                                     backend_flags.fingerprint_fields());
  write_proposals(proposals, meta, out_path);
  update_manifest(out_path, "proposals", meta.fingerprint);

  ParseWarnings totals;
  for (const auto& p : proposals) totals += p.warnings;
  std::cout << "wrote " << out_path << " (" << proposals.size() << " docs); warnings:"
            << " dropped_codes=" << totals.dropped_codes
            << " out_of_range=" << totals.out_of_range
            << " parse_failures=" << totals.parse_failures << " retried=" << totals.retried
            << " truncated=" << totals.truncated_segments
            << " skipped_docs=" << totals.skipped_docs << "\n";
  return 0;
}

struct TrainFlags {
  int epochs = 20;
  double lr = 5e-4;
  double weight_decay = 0.02;
  uint64_t seed = 5;
  double clip_norm = 0.0;
  int emb_dim = 100;
  int hidden_dim = 512;
  double emb_dropout = 0.2;
  double rep_dropout = 0.2;
  std::string pooling = "mean";
  bool no_silver = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", lr, "Learning rate");
    cmd->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    cmd->add_option("--seed", seed, "Training seed");
    cmd->add_option("--clip-norm", clip_norm, "Gradient clip norm (0 = off)");
    cmd->add_option("--emb-dim", emb_dim, "Embedding size");
    cmd->add_option("--hidden-dim", hidden_dim, "Encoder hidden size");
    cmd->add_option("--emb-dropout", emb_dropout, "Embedding dropout");
    cmd->add_option("--rep-dropout", rep_dropout, "Representation dropout");
    cmd->add_option("--pooling", pooling, "Code-description pooling: mean or last")
        ->check(CLI::IsMember({"mean", "last"}));
    cmd->add_flag("--no-silver", no_silver, "Train without the silver loss term");
  }
  VerifierConfig verifier_config() const {
    VerifierConfig v;
    v.emb_dim = emb_dim;
    v.hidden_dim = hidden_dim;
    v.emb_dropout = emb_dropout;
    v.rep_dropout = rep_dropout;
    v.pooling = pooling == "last" ? VerifierConfig::Pooling::last : VerifierConfig::Pooling::mean;
    return v;
  }
  TrainingConfig training_config() const { return {lr, weight_decay, epochs, seed, clip_norm}; }
};

void check_proposals_match(const ProposalsMeta& meta, const Corpus& corpus,
                           const LabelSpace& labels, bool force, const char* what) {
  if (force) return;
  const std::string ch = to_hex(corpus_content_hash(corpus));
  const std::string lh = to_hex(labels_content_hash(labels));
  if (!meta.corpus_hash.empty() && meta.corpus_hash != ch)
    throw CliFailure(kExitFingerprint, std::string(what) +
                                           ": proposals were made on a different corpus "
                                           "(use --force to override)");
  if (!meta.labels_hash.empty() && meta.labels_hash != lh)
    throw CliFailure(kExitFingerprint, std::string(what) +
                                           ": proposals were made on a different label space "
                                           "(use --force to override)");
}

int do_train(const std::string& corpus_path, const std::string& labels_path,
             const std::string& proposals_path, const std::string& val_corpus_path,
             const std::string& val_proposals_path, const std::string& out_path,
             const TrainFlags& flags, bool force) {
  LabelSpace labels = load_labels(labels_path);
  Corpus corpus = load_corpus_or_fail(corpus_path, labels);
  ProposalsMeta meta;
  std::vector<Proposal> unaligned = load_proposals(proposals_path, &meta);
  check_proposals_match(meta, corpus, labels, force, "train");
  std::vector<Proposal> proposals = align_proposals(corpus, std::move(unaligned));
  auto css = candidate_sets(proposals, labels);

  Corpus val;
  std::vector<CandidateSet> val_css;
  const bool has_val = !val_corpus_path.empty();
  if (has_val) {
    if (val_proposals_path.empty())
      throw CliFailure(kExitUsage, "--val-proposals is required with --val-corpus");
    val = load_corpus_or_fail(val_corpus_path, labels);
    ProposalsMeta vmeta;
    std::vector<Proposal> vp_raw = load_proposals(val_proposals_path, &vmeta);
    check_proposals_match(vmeta, val, labels, force, "train (validation)");
    val_css = candidate_sets(align_proposals(val, std::move(vp_raw)), labels);
  }

  TrainResult result = train_verifier(corpus, css, labels, flags.verifier_config(),
                                      flags.training_config(), {!flags.no_silver},
                                      has_val ? &val : nullptr, has_val ? &val_css : nullptr);

  const std::string fingerprint = fingerprint_hex(
      meta.fingerprint + "|" + std::to_string(flags.seed) + "|" + std::to_string(flags.epochs) +
      "|" + std::to_string(flags.lr) + "|" + std::to_string(flags.weight_decay) + "|" +
      std::to_string(flags.emb_dim) + "|" + std::to_string(flags.hidden_dim) + "|" +
      (flags.no_silver ? "nosilver" : "full"));
  save_checkpoint(result.model, flags.training_config(), fingerprint, out_path);
  update_manifest(out_path, "checkpoint", fingerprint);

  json log = json::array();
  for (const auto& e : result.log)
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"val_micro_f1", e.val_micro_f1}});
  json j{{"log", log},
         {"skipped_docs", result.skipped_docs},
         {"best_epoch", result.best_epoch},
         {"fingerprint", fingerprint},
         {"parameters", result.model.param_count()}};
  write_file(out_path + ".log.json", j.dump(2) + "\n");

  std::cout << "wrote " << out_path << " (" << result.model.param_count() << " parameters, "
            << "best epoch " << result.best_epoch << ", skipped " << result.skipped_docs
            << " empty docs)\n";
  return 0;
}

int do_predict(const std::string& corpus_path, const std::string& labels_path,
               const std::string& proposals_path, const std::string& model_path,
               const std::string& out_path, bool force) {
  LabelSpace labels = load_labels(labels_path);
  Corpus corpus = load_corpus_or_fail(corpus_path, labels);
  ProposalsMeta meta;
  std::vector<Proposal> unaligned = load_proposals(proposals_path, &meta);
  check_proposals_match(meta, corpus, labels, force, "predict");
  std::vector<Proposal> proposals = align_proposals(corpus, std::move(unaligned));
  std::string model_fp;
  VerifierModel model = load_checkpoint(model_path, &model_fp);
  auto css = candidate_sets(proposals, labels);
  PredictionSet preds = predict_corpus(model, corpus, css, labels);
  preds.corpus_hash = to_hex(corpus_content_hash(corpus));
  preds.fingerprint = fingerprint_hex(model_fp + "|" + meta.fingerprint + "|" + preds.corpus_hash);
  write_predictions(preds, labels, out_path);
  update_manifest(out_path, "predictions", preds.fingerprint);
  std::cout << "wrote " << out_path << " (" << preds.doc_ids.size() << " docs)\n";
  return 0;
}

int do_evaluate(const std::string& corpus_path, const std::string& labels_path,
                const std::string& predictions_path, const std::string& val_corpus_path,
                const std::string& val_predictions_path, const std::string& out_dir,
                int n_bins, bool force) {
  LabelSpace labels = load_labels(labels_path);
  Corpus corpus = load_corpus_or_fail(corpus_path, labels);
  PredictionSet preds = load_predictions(predictions_path, labels);
  if (!force && !preds.corpus_hash.empty() &&
      preds.corpus_hash != to_hex(corpus_content_hash(corpus)))
    throw CliFailure(kExitFingerprint,
                     "predictions were made on a different corpus (use --force to override)");
  if (int(preds.doc_ids.size()) != corpus.size())
    throw CliFailure(kExitData, "predictions row count does not match the corpus");

  ThresholdTable table;
  if (!val_corpus_path.empty()) {
    if (val_predictions_path.empty())
      throw CliFailure(kExitUsage, "--val-predictions is required with --val-corpus");
    Corpus val = load_corpus_or_fail(val_corpus_path, labels);
    PredictionSet val_preds = load_predictions(val_predictions_path, labels);
    if (!force && !val_preds.corpus_hash.empty() &&
        val_preds.corpus_hash != to_hex(corpus_content_hash(val)))
      throw CliFailure(kExitFingerprint,
                       "validation predictions were made on a different corpus");
    table = optimize_thresholds(val_preds.scores, gold_matrix(val, labels));
    table.provenance = val_preds.fingerprint;
  } else {
    table.tau.assign(size_t(labels.size()), 0.5);
    table.defaulted.assign(size_t(labels.size()), 1);
  }

  BinaryMatrix bin = apply_thresholds(preds.scores, table);
  EvalReport report;
  report.coding = coding_metrics(bin, preds.scores, gold_matrix(corpus, labels));
  EvidenceInputs ev = evidence_inputs_from_predictions(corpus, labels, bin, preds);
  report.has_evidence = !ev.annotated.empty() || !ev.predicted.empty();
  if (report.has_evidence) report.evidence = evidence_report(ev);
  bool empty_hist = false;
  report.histogram =
      evidence_location_histogram(evidence_positions(corpus, labels, bin, preds), n_bins,
                                  &empty_hist);
  if (empty_hist) std::cerr << "warning: no evidence predictions; histogram is all zeros\n";
  report.thresholds = table;
  report.fingerprint = fingerprint_hex(preds.fingerprint + "|" + table.provenance);

  std::vector<std::string> ids;
  for (const auto& c : labels.codes()) ids.push_back(c.id);
  write_report(report, ids, out_dir);
  update_manifest(out_dir + "/report.json", "report", report.fingerprint);

  std::cout << "micro_f1=" << report.coding.micro_f1 << " macro_f1=" << report.coding.macro_f1
            << " micro_rocauc=" << report.coding.micro_rocauc
            << " macro_rocauc=" << report.coding.macro_rocauc;
  if (report.has_evidence)
    std::cout << " evidence_f1(at_least_one)=" << report.evidence.at_least_one.f1;
  std::cout << "\n";
  return 0;
}

int do_ablate_segn(const std::string& corpus_path, const std::string& labels_path,
                   const std::string& out_path, std::vector<int> segns,
                   const BackendFlags& backend_flags) {
  LabelSpace labels = load_labels(labels_path);
  Corpus corpus = load_corpus_or_fail(corpus_path, labels);
  auto backend = backend_flags.make(corpus, labels);
  ProposeOptions opts;
  opts.backend = backend_flags.backend_config();
  if (segns.empty()) segns = {1, 10, 25, 50};
  auto rows = sweep_segn(corpus, labels, *backend, opts, segns);
  std::ostringstream csv;
  csv << "segn,precision,recall,f1\n";
  std::cout << "segn  precision  recall  f1\n";
  for (const auto& r : rows) {
    csv << r.segn << "," << r.precision << "," << r.recall << "," << r.f1 << "\n";
    std::cout << r.segn << "  " << r.precision << "  " << r.recall << "  " << r.f1 << "\n";
  }
  write_file(out_path, csv.str());
  update_manifest(out_path, "segn_sweep", "");
  return 0;
}

int do_ablate_stages(const std::string& out_dir, const TrainFlags& train_flags,
                     const OracleFlags& oracle_flags, int segn, int n_train, int n_val,
                     int n_test, uint64_t corpus_seed, bool with_no_silver) {
  FixtureSpec fx = standard_fixture();
  fx.oracle = oracle_flags.config();
  fx.segn = segn;
  fx.train_cfg.n_docs = n_train;
  fx.val_cfg.n_docs = n_val;
  fx.test_cfg.n_docs = n_test;
  fx.train_cfg.keyword_vocab_seed = corpus_seed;
  fx.val_cfg.keyword_vocab_seed = corpus_seed;
  fx.test_cfg.keyword_vocab_seed = corpus_seed;

  auto [train, labels] = generate_synthetic(fx.train_cfg);
  Corpus val = generate_synthetic(fx.val_cfg).first;
  Corpus test = generate_synthetic(fx.test_cfg).first;

  ProposeOptions opts;
  opts.segn = fx.segn;
  MockOracleBackend train_backend(train, labels, fx.oracle);
  MockOracleBackend val_backend(val, labels, fx.oracle);
  MockOracleBackend test_backend(test, labels, fx.oracle);
  auto train_props = propose_corpus(train, labels, train_backend, opts);
  auto val_props = propose_corpus(val, labels, val_backend, opts);
  auto test_props = propose_corpus(test, labels, test_backend, opts);

  StageComparisonInputs in;
  in.train = &train;
  in.val = &val;
  in.test = &test;
  in.labels = &labels;
  in.train_proposals = &train_props;
  in.val_proposals = &val_props;
  in.test_proposals = &test_props;
  StageComparison cmp = compare_stages(in, train_flags.verifier_config(),
                                       train_flags.training_config(), fx.forest,
                                       with_no_silver);

  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "model,f1,precision,recall\n";
  auto emit = [&](const std::string& name, const StageMetrics& m) {
    csv << name << "," << m.coding.micro_f1 << "," << m.coding.micro_precision << ","
        << m.coding.micro_recall << "\n";
    std::cout << name << ": f1=" << m.coding.micro_f1
              << " precision=" << m.coding.micro_precision
              << " recall=" << m.coding.micro_recall << "\n";
  };
  emit("verifier", cmp.verifier);
  emit("stage1+forest", cmp.forest);
  emit("stage1", cmp.stage1);
  emit("stage1a", cmp.stage1a);
  if (cmp.no_silver) emit("verifier_no_silver", *cmp.no_silver);
  write_file(out_dir + "/stages.csv", csv.str());
  update_manifest(out_dir + "/stages.csv", "stage_ablation", "");
  return 0;
}

int do_sweep(const std::string& corpus_path, const std::string& labels_path,
             const std::string& proposals_path, const std::string& val_corpus_path,
             const std::string& val_proposals_path, const std::string& test_corpus_path,
             const std::string& test_proposals_path, const std::string& out_dir, int n_runs,
             const TrainFlags& base_flags, bool force) {
  LabelSpace labels = load_labels(labels_path);
  Corpus train = load_corpus_or_fail(corpus_path, labels);
  Corpus val = load_corpus_or_fail(val_corpus_path, labels);
  Corpus test = load_corpus_or_fail(test_corpus_path, labels);
  ProposalsMeta meta;
  auto raw_props = load_proposals(proposals_path, &meta);
  check_proposals_match(meta, train, labels, force, "sweep");
  auto train_props = align_proposals(train, std::move(raw_props));
  ProposalsMeta vmeta, tmeta;
  auto val_props = align_proposals(val, load_proposals(val_proposals_path, &vmeta));
  auto test_props = align_proposals(test, load_proposals(test_proposals_path, &tmeta));
  auto train_css = candidate_sets(train_props, labels);
  auto val_css = candidate_sets(val_props, labels);
  auto test_css = candidate_sets(test_props, labels);

  std::vector<double> micro_f1s, macro_f1s, micro_aucs, macro_aucs;
  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "run,seed,micro_f1,macro_f1,micro_rocauc,macro_rocauc\n";
  for (int run = 0; run < n_runs; ++run) {
    TrainFlags flags = base_flags;
    flags.seed = base_flags.seed + uint64_t(run);
    TrainResult tr =
        train_verifier(train, train_css, labels, flags.verifier_config(),
                       flags.training_config(), {!flags.no_silver}, &val, &val_css);
    PredictionSet val_preds = predict_corpus(tr.model, val, val_css, labels);
    ThresholdTable table = optimize_thresholds(val_preds.scores, gold_matrix(val, labels));
    PredictionSet test_preds = predict_corpus(tr.model, test, test_css, labels);
    CodingReport r = coding_metrics(apply_thresholds(test_preds.scores, table),
                                    test_preds.scores, gold_matrix(test, labels));
    micro_f1s.push_back(r.micro_f1);
    macro_f1s.push_back(r.macro_f1);
    micro_aucs.push_back(r.micro_rocauc);
    macro_aucs.push_back(r.macro_rocauc);
    csv << run << "," << flags.seed << "," << r.micro_f1 << "," << r.macro_f1 << ","
        << r.micro_rocauc << "," << r.macro_rocauc << "\n";
    std::cout << "run " << run << " (seed " << flags.seed << "): micro_f1=" << r.micro_f1
              << "\n";
  }
  auto mean_std = [](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    var = v.size() > 1 ? var / double(v.size() - 1) : 0.0;
    return std::pair<double, double>(mean, std::sqrt(var));
  };
  json summary;
  auto put = [&](const char* name, const std::vector<double>& v) {
    auto [m, s] = mean_std(v);
    summary[name] = {{"mean", m}, {"std", s}};
    std::cout << name << ": " << m << " +/- " << s << "\n";
  };
  put("micro_f1", micro_f1s);
  put("macro_f1", macro_f1s);
  put("micro_rocauc", micro_aucs);
  put("macro_rocauc", macro_aucs);
  summary["runs"] = n_runs;
  write_file(out_dir + "/sweep.csv", csv.str());
  write_file(out_dir + "/sweep.json", summary.dump(2) + "\n");
  update_manifest(out_dir + "/sweep.json", "sweep", "");
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Two-stage propose-and-verify medical coding pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Config file (TOML/INI; flags override it)");

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus with planted codes");
  std::string gen_out = "runs/corpus";
  int n_train = 500, n_val = 100, n_test = 200, n_codes = 50;
  uint64_t keyword_seed = 7, doc_seed = 101;
  int min_sents = 24, max_sents = 40, min_codes = 2, max_codes = 5;
  double distractor_rate = 0.7, negation_rate = 0.15;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--n-train", n_train, "Training documents");
  gen->add_option("--n-val", n_val, "Validation documents");
  gen->add_option("--n-test", n_test, "Test documents");
  gen->add_option("--n-codes", n_codes, "Label-space size");
  gen->add_option("--seed", keyword_seed, "Keyword vocabulary seed");
  gen->add_option("--doc-seed", doc_seed, "Document stream seed (val/test use +1/+2)");
  gen->add_option("--min-sentences", min_sents, "Minimum sentences per document");
  gen->add_option("--max-sentences", max_sents, "Maximum sentences per document");
  gen->add_option("--min-codes", min_codes, "Minimum planted codes per document");
  gen->add_option("--max-codes", max_codes, "Maximum planted codes per document");
  gen->add_option("--distractor-rate", distractor_rate, "Word-soup share of filler sentences");
  gen->add_option("--negation-rate", negation_rate, "Negated-keyword share of filler sentences");

  // propose
  auto* propose = app.add_subcommand("propose", "Run stage 1 and cache proposals");
  std::string p_corpus, p_labels, p_out = "proposals.jsonl";
  int p_segn = 10, p_max_note_tokens = 0;
  BackendFlags p_backend;
  propose->add_option("--corpus", p_corpus, "Corpus file")->required();
  propose->add_option("--labels", p_labels, "Label-space file")->required();
  propose->add_option("--out", p_out, "Proposals output path");
  propose->add_option("--segn", p_segn, "Segments per document");
  propose->add_option("--max-note-tokens", p_max_note_tokens,
                      "Per-segment token budget (0 = off)");
  p_backend.attach(propose);

  // train
  auto* train = app.add_subcommand("train", "Train the verifier from cached proposals");
  std::string t_corpus, t_labels, t_proposals, t_val_corpus, t_val_proposals,
      t_out = "model.ckpt";
  TrainFlags t_flags;
  bool t_force = false;
  train->add_option("--corpus", t_corpus, "Training corpus")->required();
  train->add_option("--labels", t_labels, "Label-space file")->required();
  train->add_option("--proposals", t_proposals, "Cached proposals for the corpus")->required();
  train->add_option("--val-corpus", t_val_corpus, "Validation corpus (best-epoch selection)");
  train->add_option("--val-proposals", t_val_proposals, "Cached proposals for validation");
  train->add_option("--out", t_out, "Checkpoint output path");
  train->add_flag("--force", t_force, "Skip fingerprint checks");
  t_flags.attach(train);

  // predict
  auto* predict = app.add_subcommand("predict", "Score codes and select evidence per document");
  std::string pr_corpus, pr_labels, pr_proposals, pr_model, pr_out = "predictions.jsonl";
  bool pr_force = false;
  predict->add_option("--corpus", pr_corpus, "Corpus file")->required();
  predict->add_option("--labels", pr_labels, "Label-space file")->required();
  predict->add_option("--proposals", pr_proposals, "Cached proposals")->required();
  predict->add_option("--model", pr_model, "Verifier checkpoint")->required();
  predict->add_option("--out", pr_out, "Predictions output path");
  predict->add_flag("--force", pr_force, "Skip fingerprint checks");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate predictions against gold labels");
  std::string e_corpus, e_labels, e_preds, e_val_corpus, e_val_preds, e_out = "runs/report";
  int e_bins = 20;
  bool e_force = false;
  evaluate->add_option("--corpus", e_corpus, "Test corpus")->required();
  evaluate->add_option("--labels", e_labels, "Label-space file")->required();
  evaluate->add_option("--predictions", e_preds, "Test predictions")->required();
  evaluate->add_option("--val-corpus", e_val_corpus, "Validation corpus for threshold tuning");
  evaluate->add_option("--val-predictions", e_val_preds, "Validation predictions");
  evaluate->add_option("--out", e_out, "Report directory");
  evaluate->add_option("--bins", e_bins, "Evidence-location histogram bins");
  evaluate->add_flag("--force", e_force, "Skip fingerprint checks");

  // ablate-segn
  auto* absegn = app.add_subcommand("ablate-segn", "Stage-1a metrics per segment count");
  std::string as_corpus, as_labels, as_out = "segn_sweep.csv";
  std::vector<int> as_segns;
  BackendFlags as_backend;
  absegn->add_option("--corpus", as_corpus, "Corpus file")->required();
  absegn->add_option("--labels", as_labels, "Label-space file")->required();
  absegn->add_option("--out", as_out, "CSV output path");
  absegn->add_option("--segns", as_segns, "Segment counts to sweep (default 1 10 25 50)");
  as_backend.attach(absegn);

  // ablate-stages
  auto* abstages =
      app.add_subcommand("ablate-stages", "Compare verifier, stage-1, stage-1a and forest");
  std::string ast_out = "runs/stages";
  TrainFlags ast_flags;
  {
    FixtureSpec fx = standard_fixture();
    ast_flags.epochs = fx.training.epochs;
    ast_flags.lr = fx.training.learning_rate;
    ast_flags.seed = fx.training.seed;
    ast_flags.clip_norm = fx.training.clip_norm;
    ast_flags.emb_dim = fx.verifier.emb_dim;
    ast_flags.hidden_dim = fx.verifier.hidden_dim;
  }
  OracleFlags ast_oracle;
  int ast_segn = 10, ast_train = 500, ast_val = 100, ast_test = 200;
  uint64_t ast_corpus_seed = 7;
  bool ast_no_silver = false;
  abstages->add_option("--out", ast_out, "Output directory");
  abstages->add_option("--segn", ast_segn, "Segments per document");
  abstages->add_option("--n-train", ast_train, "Training documents");
  abstages->add_option("--n-val", ast_val, "Validation documents");
  abstages->add_option("--n-test", ast_test, "Test documents");
  abstages->add_option("--corpus-seed", ast_corpus_seed, "Synthetic keyword seed");
  abstages->add_flag("--with-no-silver", ast_no_silver, "Also run the no-silver ablation");
  ast_oracle.attach(abstages);
  ast_flags.attach(abstages);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Repeat train/predict/evaluate over derived seeds");
  std::string sw_corpus, sw_labels, sw_proposals, sw_val_corpus, sw_val_proposals,
      sw_test_corpus, sw_test_proposals, sw_out = "runs/sweep";
  int sw_n = 20;
  TrainFlags sw_flags;
  bool sw_force = false;
  sweep->add_option("--n", sw_n, "Number of runs");
  sweep->add_option("--corpus", sw_corpus, "Training corpus")->required();
  sweep->add_option("--labels", sw_labels, "Label-space file")->required();
  sweep->add_option("--proposals", sw_proposals, "Training proposals")->required();
  sweep->add_option("--val-corpus", sw_val_corpus, "Validation corpus")->required();
  sweep->add_option("--val-proposals", sw_val_proposals, "Validation proposals")->required();
  sweep->add_option("--test-corpus", sw_test_corpus, "Test corpus")->required();
  sweep->add_option("--test-proposals", sw_test_proposals, "Test proposals")->required();
  sweep->add_option("--out", sw_out, "Output directory");
  sweep->add_flag("--force", sw_force, "Skip fingerprint checks");
  sw_flags.attach(sweep);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      return 0;
    }
    std::cerr << json{{"error", {{"code", kExitUsage}, {"message", e.what()}}}}.dump() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed())
      return do_gen_corpus(gen_out, n_train, n_val, n_test, n_codes, keyword_seed, doc_seed,
                           min_sents, max_sents, min_codes, max_codes, distractor_rate,
                           negation_rate);
    if (propose->parsed())
      return do_propose(p_corpus, p_labels, p_out, p_segn, p_backend, p_max_note_tokens);
    if (train->parsed())
      return do_train(t_corpus, t_labels, t_proposals, t_val_corpus, t_val_proposals, t_out,
                      t_flags, t_force);
    if (predict->parsed())
      return do_predict(pr_corpus, pr_labels, pr_proposals, pr_model, pr_out, pr_force);
    if (evaluate->parsed())
      return do_evaluate(e_corpus, e_labels, e_preds, e_val_corpus, e_val_preds, e_out, e_bins,
                         e_force);
    if (absegn->parsed())
      return do_ablate_segn(as_corpus, as_labels, as_out, as_segns, as_backend);
    if (abstages->parsed())
      return do_ablate_stages(ast_out, ast_flags, ast_oracle, ast_segn, ast_train, ast_val,
                              ast_test, ast_corpus_seed, ast_no_silver);
    if (sweep->parsed())
      return do_sweep(sw_corpus, sw_labels, sw_proposals, sw_val_corpus, sw_val_proposals,
                      sw_test_corpus, sw_test_proposals, sw_out, sw_n, sw_flags, sw_force);
    std::cerr << json{{"error", {{"code", kExitUsage}, {"message", "no subcommand"}}}}.dump()
              << "\n";
    return kExitUsage;
  } catch (const CliFailure& e) {
    std::cerr << json{{"error", {{"code", e.code}, {"message", e.what()}}}}.dump() << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    std::cerr << json{{"error", {{"code", kExitUsage}, {"message", e.what()}}}}.dump() << "\n";
    return kExitUsage;
  } catch (const BackendError& e) {
    std::cerr << json{{"error", {{"code", kExitBackend}, {"message", e.what()}}}}.dump() << "\n";
    return kExitBackend;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", kExitData}, {"message", e.what()}}}}.dump() << "\n";
    return kExitData;
  }
}

}  // namespace medcode
