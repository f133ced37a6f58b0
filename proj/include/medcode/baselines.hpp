#pragma once

#include <string>
#include <vector>

#include "medcode/corpus.hpp"
#include "medcode/evaluation.hpp"
#include "medcode/proposer.hpp"

namespace medcode {

// Code positive iff stage 1a proposed it anywhere in the document.
std::vector<uint8_t> stage1a_predict(const Proposal& p, const LabelSpace& labels);
// Code positive iff stage 1b produced at least one evidence pair for it.
std::vector<uint8_t> stage1_predict(const Proposal& p, const LabelSpace& labels);

// Per document, entry c = number of proposed evidence pairs for code c.
struct OccurrenceMatrix {
  int n_docs = 0;
  int n_codes = 0;
  std::vector<int> a;
  int& at(int d, int c) { return a[size_t(d) * size_t(n_codes) + size_t(c)]; }
  int at(int d, int c) const { return a[size_t(d) * size_t(n_codes) + size_t(c)]; }
  std::vector<double> row(int d) const;
};

OccurrenceMatrix build_occurrence_matrix(const std::vector<Proposal>& proposals,
                                         const LabelSpace& labels);

struct ForestConfig {
  int n_trees = 100;
  int max_depth = 8;
  int min_samples_leaf = 1;
  double feature_subsample = -1.0;  // fraction of features per split; <0 = sqrt(F)/F
  bool bootstrap = true;
  uint64_t seed = 0;
};

struct TreeNode {
  bool leaf = true;
  int feature = -1;
  double threshold = 0.0;  // left: value < threshold
  int left = -1, right = -1;
  uint8_t vote = 0;  // majority class at the leaf; ties vote positive
};

struct DecisionTree {
  std::vector<TreeNode> nodes;
  uint8_t predict(const std::vector<double>& x) const;
};

// Bagged Gini-split trees, one binary forest per code over the full
// occurrence vector. Scores are the fraction of trees voting positive.
struct CodeForest {
  std::vector<DecisionTree> trees;
  bool constant = false;   // single-class training labels
  uint8_t constant_value = 0;
  double predict(const std::vector<double>& x) const;
};

DecisionTree train_tree(const std::vector<std::vector<double>>& x,
                        const std::vector<uint8_t>& y, const std::vector<int>& sample_idx,
                        const ForestConfig& cfg, Rng& rng);

struct ForestModel {
  std::vector<CodeForest> per_code;
  ForestConfig cfg;
  int flagged_constant = 0;
};

ForestModel train_forest(const OccurrenceMatrix& features, const BinaryMatrix& gold,
                         const ForestConfig& cfg);

ScoreMatrix predict_forest(const ForestModel& model, const OccurrenceMatrix& features);

// Checkpoints share the verifier's container shape but a distinct tag.
void save_forest(const ForestModel& model, const std::string& fingerprint,
                 const std::string& path);
ForestModel load_forest(const std::string& path, std::string* fingerprint = nullptr);

}  // namespace medcode
