#pragma once

#include <optional>
#include <string>
#include <vector>

#include "medcode/baselines.hpp"
#include "medcode/corpus.hpp"
#include "medcode/evaluation.hpp"
#include "medcode/proposer.hpp"
#include "medcode/synthetic.hpp"
#include "medcode/verifier.hpp"

namespace medcode {

std::string fingerprint_hex(const std::string& canonical);

// Stage-1 proposals for every document, in corpus order.
std::vector<Proposal> propose_corpus(const Corpus& corpus, const LabelSpace& labels,
                                     ProposalBackend& backend, const ProposeOptions& opts);

std::vector<CandidateSet> candidate_sets(const std::vector<Proposal>& proposals,
                                         const LabelSpace& labels);

// Reorders proposals to match corpus document order; throws when a document
// has no proposal.
std::vector<Proposal> align_proposals(const Corpus& corpus, std::vector<Proposal> proposals);

BinaryMatrix gold_matrix(const Corpus& corpus, const LabelSpace& labels);

struct PredictionSet {
  std::vector<std::string> doc_ids;
  ScoreMatrix scores;
  std::vector<std::vector<int>> evidence;  // docs x codes, -1 = none
  std::string fingerprint;
  std::string corpus_hash;
};

PredictionSet predict_corpus(VerifierModel& model, const Corpus& corpus,
                             const std::vector<CandidateSet>& css, const LabelSpace& labels);

void write_predictions(const PredictionSet& preds, const LabelSpace& labels,
                       const std::string& path);
PredictionSet load_predictions(const std::string& path, const LabelSpace& labels);

// Single-evidence inputs from a prediction set (the verifier path).
EvidenceInputs evidence_inputs_from_predictions(const Corpus& corpus, const LabelSpace& labels,
                                                const BinaryMatrix& preds,
                                                const PredictionSet& pred_set);
// Multi-evidence inputs from raw proposals (stage-1 style predictors).
EvidenceInputs evidence_inputs_from_proposals(const Corpus& corpus, const LabelSpace& labels,
                                              const BinaryMatrix& preds,
                                              const std::vector<Proposal>& proposals,
                                              bool first_pair_only);

std::vector<std::pair<int, int>> evidence_positions(const Corpus& corpus,
                                                    const LabelSpace& labels,
                                                    const BinaryMatrix& preds,
                                                    const PredictionSet& pred_set);

// ---------------------------------------------------------------------------
// Standard synthetic experiment wiring, shared by the CLI ablations and the
// acceptance suite. One place holds the tuned defaults.
// ---------------------------------------------------------------------------

struct FixtureSpec {
  SyntheticConfig train_cfg;
  SyntheticConfig val_cfg;
  SyntheticConfig test_cfg;
  OracleConfig oracle;
  int segn = 10;
  VerifierConfig verifier;
  TrainingConfig training;
  ForestConfig forest;
};

// 500 train / 100 val / 200 test documents over 50 codes with pinned seeds.
FixtureSpec standard_fixture();

struct StageMetrics {
  CodingReport coding;
  EvidenceReport evidence;
};

struct StageComparison {
  StageMetrics verifier;
  StageMetrics stage1;
  StageMetrics stage1a;
  StageMetrics forest;
  std::optional<StageMetrics> no_silver;
  int verifier_best_epoch = 0;
};

struct StageComparisonInputs {
  const Corpus* train = nullptr;
  const Corpus* val = nullptr;
  const Corpus* test = nullptr;
  const LabelSpace* labels = nullptr;
  const std::vector<Proposal>* train_proposals = nullptr;
  const std::vector<Proposal>* val_proposals = nullptr;
  const std::vector<Proposal>* test_proposals = nullptr;
};

StageComparison compare_stages(const StageComparisonInputs& in, const VerifierConfig& vcfg,
                               const TrainingConfig& tcfg, const ForestConfig& fcfg,
                               bool include_no_silver);

struct SegnSweepRow {
  int segn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Stage-1a coding metrics per segmentation granularity.
std::vector<SegnSweepRow> sweep_segn(const Corpus& corpus, const LabelSpace& labels,
                                     ProposalBackend& backend, const ProposeOptions& base_opts,
                                     const std::vector<int>& segns);

}  // namespace medcode
