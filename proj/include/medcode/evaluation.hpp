#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "medcode/util.hpp"

namespace medcode {

// Dense doc x code matrices used across the evaluation operations.
struct ScoreMatrix {
  int n_docs = 0;
  int n_codes = 0;
  std::vector<double> a;
  ScoreMatrix() = default;
  ScoreMatrix(int d, int c) : n_docs(d), n_codes(c), a(size_t(d) * size_t(c), 0.0) {}
  double& at(int d, int c) { return a[size_t(d) * size_t(n_codes) + size_t(c)]; }
  double at(int d, int c) const { return a[size_t(d) * size_t(n_codes) + size_t(c)]; }
};

struct BinaryMatrix {
  int n_docs = 0;
  int n_codes = 0;
  std::vector<uint8_t> a;
  BinaryMatrix() = default;
  BinaryMatrix(int d, int c) : n_docs(d), n_codes(c), a(size_t(d) * size_t(c), 0) {}
  uint8_t& at(int d, int c) { return a[size_t(d) * size_t(n_codes) + size_t(c)]; }
  uint8_t at(int d, int c) const { return a[size_t(d) * size_t(n_codes) + size_t(c)]; }
};

struct ThresholdTable {
  std::vector<double> tau;        // one per code
  std::vector<uint8_t> defaulted; // 1 when no validation positives existed
  std::string provenance;         // validation-set fingerprint
};

// Per-code threshold maximizing validation F1 over the candidate set
// {midpoints of consecutive distinct scores} U {0.5}; ties pick the largest
// (most conservative) threshold. Prediction rule everywhere: score >= tau.
ThresholdTable optimize_thresholds(const ScoreMatrix& scores, const BinaryMatrix& gold);

BinaryMatrix apply_thresholds(const ScoreMatrix& scores, const ThresholdTable& table);

struct PerCodeMetrics {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double f1 = 0.0;
  double rocauc = 0.5;
  bool has_auc = false;  // both classes present
};

struct CodingReport {
  double micro_precision = 0.0;
  double micro_recall = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double micro_rocauc = 0.5;
  double macro_rocauc = 0.5;
  long tp = 0, fp = 0, fn = 0, tn = 0;
  int auc_excluded_codes = 0;  // single-class codes skipped by macro ROCAUC
  std::vector<PerCodeMetrics> per_code;
};

// Micro metrics pool every (doc, code) cell; macro averages per-code values,
// excluding single-class codes from macro ROCAUC. ROCAUC uses the midrank
// Mann-Whitney statistic.
CodingReport coding_metrics(const BinaryMatrix& preds, const ScoreMatrix& scores,
                            const BinaryMatrix& gold);

double rocauc_midrank(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

struct Prf {
  long tp = 0, fp = 0, fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

using DocCode = std::pair<std::string, std::string>;  // (doc id, code id)

// Evidence evaluated only on annotated (doc, code) pairs; predictions for
// codes with no annotation at all are counted separately (they are coding
// false positives, not evidence ones).
struct EvidenceInputs {
  std::map<DocCode, std::set<int>> predicted;   // emitted evidence per predicted-positive pair
  std::map<DocCode, std::set<int>> annotated;   // expert-annotated sentence indices
};

struct EvidenceReport {
  Prf at_least_one;
  Prf comprehensive;
  long unannotated_predictions = 0;  // excluded pairs
};

// Unit = (doc, code); a prediction scores a true positive when any predicted
// index hits the annotated set.
Prf evidence_metrics_at_least_one(const EvidenceInputs& in, long* excluded = nullptr);
// Unit = individual annotated sentence; extra predictions are false
// positives, unmatched annotations are false negatives.
Prf evidence_metrics_comprehensive(const EvidenceInputs& in, long* excluded = nullptr);

EvidenceReport evidence_report(const EvidenceInputs& in);

struct HistogramBin {
  double lo = 0.0, hi = 0.0;
  long count = 0;
  double density = 0.0;
};

// Relative evidence positions (index / sentence count) binned over [0, 1).
// Empty input yields zero densities and sets the empty flag.
std::vector<HistogramBin> evidence_location_histogram(
    const std::vector<std::pair<int, int>>& index_and_doc_len, int n_bins, bool* empty = nullptr);

std::string histogram_csv(const std::vector<HistogramBin>& bins);

struct EvalReport {
  CodingReport coding;
  EvidenceReport evidence;
  bool has_evidence = false;
  std::vector<HistogramBin> histogram;
  ThresholdTable thresholds;
  std::string fingerprint;
};

// report.json plus per_code.csv, thresholds.csv and histogram.csv.
void write_report(const EvalReport& report, const std::vector<std::string>& code_ids,
                  const std::string& dir);

}  // namespace medcode
