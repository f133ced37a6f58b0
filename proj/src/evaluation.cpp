#include "medcode/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace medcode {

using nlohmann::json;

namespace {

double f1_from_counts(long tp, long fp, long fn) {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
}

double f1_at_threshold(const std::vector<std::pair<double, uint8_t>>& col, double tau) {
  long tp = 0, fp = 0, fn = 0;
  for (const auto& [score, gold] : col) {
    const bool pred = score >= tau;
    if (pred && gold) ++tp;
    else if (pred) ++fp;
    else if (gold) ++fn;
  }
  return f1_from_counts(tp, fp, fn);
}

}  // namespace

ThresholdTable optimize_thresholds(const ScoreMatrix& scores, const BinaryMatrix& gold) {
  if (scores.n_docs != gold.n_docs || scores.n_codes != gold.n_codes)
    throw ConfigError("score and gold matrices disagree in shape");
  ThresholdTable table;
  table.tau.assign(size_t(scores.n_codes), 0.5);
  table.defaulted.assign(size_t(scores.n_codes), 0);
  for (int c = 0; c < scores.n_codes; ++c) {
    std::vector<std::pair<double, uint8_t>> col;
    bool any_pos = false;
    for (int d = 0; d < scores.n_docs; ++d) {
      col.emplace_back(scores.at(d, c), gold.at(d, c));
      any_pos = any_pos || gold.at(d, c);
    }
    if (!any_pos || col.empty()) {
      table.defaulted[size_t(c)] = 1;
      continue;
    }
    std::vector<double> distinct;
    for (const auto& [s, g] : col) distinct.push_back(s);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<double> candidates{0.5};
    for (size_t i = 0; i + 1 < distinct.size(); ++i)
      candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
    double best_tau = 0.5, best_f1 = -1.0;
    for (double tau : candidates) {
      const double f1 = f1_at_threshold(col, tau);
      if (f1 > best_f1 || (f1 == best_f1 && tau > best_tau)) {
        best_f1 = f1;
        best_tau = tau;
      }
    }
    table.tau[size_t(c)] = best_tau;
  }
  return table;
}

BinaryMatrix apply_thresholds(const ScoreMatrix& scores, const ThresholdTable& table) {
  if (size_t(scores.n_codes) != table.tau.size())
    throw ConfigError("threshold table does not match the score matrix");
  BinaryMatrix out(scores.n_docs, scores.n_codes);
  for (int d = 0; d < scores.n_docs; ++d)
    for (int c = 0; c < scores.n_codes; ++c)
      out.at(d, c) = scores.at(d, c) >= table.tau[size_t(c)] ? 1 : 0;
  return out;
}

double rocauc_midrank(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  long pos = 0, neg = 0;
  for (uint8_t l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0) return 0.5;
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[size_t(a)] < scores[size_t(b)]; });
  // Midranks over tied scores, then the Mann-Whitney statistic.
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() &&
           scores[size_t(order[j + 1])] == scores[size_t(order[i])])
      ++j;
    const double midrank = 0.5 * (double(i + 1) + double(j + 1));
    for (size_t k = i; k <= j; ++k)
      if (labels[size_t(order[k])]) pos_rank_sum += midrank;
    i = j + 1;
  }
  return (pos_rank_sum - double(pos) * (double(pos) + 1.0) / 2.0) /
         (double(pos) * double(neg));
}

CodingReport coding_metrics(const BinaryMatrix& preds, const ScoreMatrix& scores,
                            const BinaryMatrix& gold) {
  if (preds.n_docs != gold.n_docs || preds.n_codes != gold.n_codes ||
      scores.n_docs != gold.n_docs || scores.n_codes != gold.n_codes)
    throw ConfigError("prediction, score and gold matrices disagree in shape");
  CodingReport r;
  r.per_code.resize(size_t(gold.n_codes));

  std::vector<double> all_scores;
  std::vector<uint8_t> all_gold;
  all_scores.reserve(size_t(gold.n_docs) * size_t(gold.n_codes));
  all_gold.reserve(all_scores.capacity());

  double macro_f1_sum = 0.0;
  double macro_auc_sum = 0.0;
  int auc_codes = 0;
  for (int c = 0; c < gold.n_codes; ++c) {
    PerCodeMetrics& pc = r.per_code[size_t(c)];
    std::vector<double> col_scores;
    std::vector<uint8_t> col_gold;
    for (int d = 0; d < gold.n_docs; ++d) {
      const bool p = preds.at(d, c), g = gold.at(d, c);
      if (p && g) ++pc.tp;
      else if (p) ++pc.fp;
      else if (g) ++pc.fn;
      else ++pc.tn;
      col_scores.push_back(scores.at(d, c));
      col_gold.push_back(gold.at(d, c));
      all_scores.push_back(scores.at(d, c));
      all_gold.push_back(gold.at(d, c));
    }
    pc.f1 = f1_from_counts(pc.tp, pc.fp, pc.fn);
    macro_f1_sum += pc.f1;
    long pos = pc.tp + pc.fn, neg = pc.fp + pc.tn;
    if (pos > 0 && neg > 0) {
      pc.rocauc = rocauc_midrank(col_scores, col_gold);
      pc.has_auc = true;
      macro_auc_sum += pc.rocauc;
      ++auc_codes;
    } else {
      ++r.auc_excluded_codes;
    }
    r.tp += pc.tp;
    r.fp += pc.fp;
    r.fn += pc.fn;
    r.tn += pc.tn;
  }
  r.micro_precision = (r.tp + r.fp) == 0 ? 0.0 : double(r.tp) / double(r.tp + r.fp);
  r.micro_recall = (r.tp + r.fn) == 0 ? 0.0 : double(r.tp) / double(r.tp + r.fn);
  r.micro_f1 = f1_from_counts(r.tp, r.fp, r.fn);
  r.macro_f1 = gold.n_codes == 0 ? 0.0 : macro_f1_sum / double(gold.n_codes);
  r.micro_rocauc = rocauc_midrank(all_scores, all_gold);
  r.macro_rocauc = auc_codes == 0 ? 0.5 : macro_auc_sum / double(auc_codes);
  return r;
}

namespace {

Prf finish_prf(long tp, long fp, long fn) {
  Prf p;
  p.tp = tp;
  p.fp = fp;
  p.fn = fn;
  p.precision = (tp + fp) == 0 ? 0.0 : double(tp) / double(tp + fp);
  p.recall = (tp + fn) == 0 ? 0.0 : double(tp) / double(tp + fn);
  p.f1 = f1_from_counts(tp, fp, fn);
  return p;
}

}  // namespace

Prf evidence_metrics_at_least_one(const EvidenceInputs& in, long* excluded) {
  long tp = 0, fp = 0, fn = 0, skipped = 0;
  for (const auto& [key, pred] : in.predicted) {
    auto it = in.annotated.find(key);
    if (it == in.annotated.end()) {
      ++skipped;
      continue;
    }
    bool hit = std::any_of(pred.begin(), pred.end(),
                           [&](int s) { return it->second.count(s) != 0; });
    if (hit) ++tp;
    else ++fp;
  }
  for (const auto& [key, ann] : in.annotated) {
    auto it = in.predicted.find(key);
    bool hit = it != in.predicted.end() &&
               std::any_of(it->second.begin(), it->second.end(),
                           [&](int s) { return ann.count(s) != 0; });
    if (!hit) ++fn;
  }
  if (excluded) *excluded = skipped;
  return finish_prf(tp, fp, fn);
}

Prf evidence_metrics_comprehensive(const EvidenceInputs& in, long* excluded) {
  long tp = 0, fp = 0, fn = 0, skipped = 0;
  for (const auto& [key, pred] : in.predicted) {
    auto it = in.annotated.find(key);
    if (it == in.annotated.end()) {
      ++skipped;
      continue;
    }
    for (int s : pred) (it->second.count(s) ? tp : fp)++;
  }
  for (const auto& [key, ann] : in.annotated) {
    auto it = in.predicted.find(key);
    for (int s : ann) {
      if (it == in.predicted.end() || !it->second.count(s)) ++fn;
    }
  }
  if (excluded) *excluded = skipped;
  return finish_prf(tp, fp, fn);
}

EvidenceReport evidence_report(const EvidenceInputs& in) {
  EvidenceReport r;
  long excluded = 0;
  r.at_least_one = evidence_metrics_at_least_one(in, &excluded);
  r.comprehensive = evidence_metrics_comprehensive(in);
  r.unannotated_predictions = excluded;
  return r;
}

std::vector<HistogramBin> evidence_location_histogram(
    const std::vector<std::pair<int, int>>& index_and_doc_len, int n_bins, bool* empty) {
  if (n_bins < 1) throw ConfigError("histogram needs at least one bin");
  std::vector<HistogramBin> bins(static_cast<size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    bins[size_t(b)].lo = double(b) / double(n_bins);
    bins[size_t(b)].hi = double(b + 1) / double(n_bins);
  }
  long total = 0;
  for (const auto& [idx, len] : index_and_doc_len) {
    if (len <= 0 || idx < 0 || idx >= len) continue;
    const double rel = double(idx) / double(len);
    int b = std::min(int(rel * n_bins), n_bins - 1);
    ++bins[size_t(b)].count;
    ++total;
  }
  if (empty) *empty = total == 0;
  if (total > 0)
    for (auto& b : bins) b.density = double(b.count) / double(total);
  return bins;
}

std::string histogram_csv(const std::vector<HistogramBin>& bins) {
  std::ostringstream out;
  out << "bin_start,bin_end,density\n";
  for (const auto& b : bins) out << b.lo << "," << b.hi << "," << b.density << "\n";
  return out.str();
}

void write_report(const EvalReport& report, const std::vector<std::string>& code_ids,
                  const std::string& dir) {
  std::filesystem::create_directories(dir);
  json j;
  j["fingerprint"] = report.fingerprint;
  j["coding"] = {{"micro_precision", report.coding.micro_precision},
                 {"micro_recall", report.coding.micro_recall},
                 {"micro_f1", report.coding.micro_f1},
                 {"macro_f1", report.coding.macro_f1},
                 {"micro_rocauc", report.coding.micro_rocauc},
                 {"macro_rocauc", report.coding.macro_rocauc},
                 {"tp", report.coding.tp},
                 {"fp", report.coding.fp},
                 {"fn", report.coding.fn},
                 {"tn", report.coding.tn},
                 {"auc_excluded_codes", report.coding.auc_excluded_codes}};
  if (report.has_evidence) {
    auto prf_json = [](const Prf& p) {
      return json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1},
                  {"tp", p.tp},               {"fp", p.fp},         {"fn", p.fn}};
    };
    j["evidence"] = {{"at_least_one", prf_json(report.evidence.at_least_one)},
                     {"comprehensive", prf_json(report.evidence.comprehensive)},
                     {"unannotated_predictions", report.evidence.unannotated_predictions}};
  }
  write_file(dir + "/report.json", j.dump(2) + "\n");

  std::ostringstream per_code;
  per_code << "code,tp,fp,fn,tn,f1,rocauc,has_auc\n";
  for (size_t c = 0; c < report.coding.per_code.size(); ++c) {
    const auto& pc = report.coding.per_code[c];
    per_code << (c < code_ids.size() ? code_ids[c] : std::to_string(c)) << "," << pc.tp << ","
             << pc.fp << "," << pc.fn << "," << pc.tn << "," << pc.f1 << "," << pc.rocauc << ","
             << int(pc.has_auc) << "\n";
  }
  write_file(dir + "/per_code.csv", per_code.str());

  if (!report.thresholds.tau.empty()) {
    std::ostringstream th;
    th << "code,tau,defaulted\n";
    for (size_t c = 0; c < report.thresholds.tau.size(); ++c) {
      th << (c < code_ids.size() ? code_ids[c] : std::to_string(c)) << ","
         << report.thresholds.tau[c] << "," << int(report.thresholds.defaulted[c]) << "\n";
    }
    write_file(dir + "/thresholds.csv", th.str());
  }
  if (!report.histogram.empty())
    write_file(dir + "/histogram.csv", histogram_csv(report.histogram));
}

}  // namespace medcode
