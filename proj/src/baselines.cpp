#include "medcode/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

namespace medcode {

using nlohmann::json;

std::vector<uint8_t> stage1a_predict(const Proposal& p, const LabelSpace& labels) {
  std::vector<uint8_t> out(size_t(labels.size()), 0);
  for (const auto& id : p.doc_codes) {
    const int c = labels.index_of(id);
    if (c >= 0) out[size_t(c)] = 1;
  }
  return out;
}

std::vector<uint8_t> stage1_predict(const Proposal& p, const LabelSpace& labels) {
  std::vector<uint8_t> out(size_t(labels.size()), 0);
  for (const auto& pair : p.evidence_pairs) {
    const int c = labels.index_of(pair.code);
    if (c >= 0) out[size_t(c)] = 1;
  }
  return out;
}

std::vector<double> OccurrenceMatrix::row(int d) const {
  std::vector<double> out(static_cast<size_t>(n_codes));
  for (int c = 0; c < n_codes; ++c) out[size_t(c)] = double(at(d, c));
  return out;
}

OccurrenceMatrix build_occurrence_matrix(const std::vector<Proposal>& proposals,
                                         const LabelSpace& labels) {
  OccurrenceMatrix m;
  m.n_docs = int(proposals.size());
  m.n_codes = labels.size();
  m.a.assign(size_t(m.n_docs) * size_t(m.n_codes), 0);
  for (int d = 0; d < m.n_docs; ++d) {
    for (const auto& pair : proposals[size_t(d)].evidence_pairs) {
      const int c = labels.index_of(pair.code);
      if (c >= 0) ++m.at(d, c);
    }
  }
  return m;
}

uint8_t DecisionTree::predict(const std::vector<double>& x) const {
  int node = 0;
  for (;;) {
    const TreeNode& n = nodes[size_t(node)];
    if (n.leaf) return n.vote;
    node = x[size_t(n.feature)] < n.threshold ? n.left : n.right;
  }
}

double CodeForest::predict(const std::vector<double>& x) const {
  if (constant || trees.empty()) return double(constant_value);
  int pos = 0;
  for (const auto& t : trees) pos += t.predict(x);
  return double(pos) / double(trees.size());
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gini = 1e18;
};

double gini_impurity(long pos, long total) {
  if (total == 0) return 0.0;
  const double p = double(pos) / double(total);
  return 2.0 * p * (1.0 - p);
}

uint8_t majority(const std::vector<uint8_t>& y, const std::vector<int>& idx) {
  long pos = 0;
  for (int i : idx) pos += y[size_t(i)];
  return 2 * pos >= long(idx.size()) ? 1 : 0;  // ties vote positive
}

Split best_split(const std::vector<std::vector<double>>& x, const std::vector<uint8_t>& y,
                 const std::vector<int>& idx, const std::vector<int>& features,
                 int min_samples_leaf) {
  Split best;
  const long total = long(idx.size());
  for (int f : features) {
    // Sort sample values on this feature; candidate thresholds are the
    // midpoints between consecutive distinct values.
    std::vector<std::pair<double, uint8_t>> vals;
    vals.reserve(idx.size());
    for (int i : idx) vals.emplace_back(x[size_t(i)][size_t(f)], y[size_t(i)]);
    std::sort(vals.begin(), vals.end());
    long left_n = 0, left_pos = 0, total_pos = 0;
    for (const auto& [v, g] : vals) total_pos += g;
    for (size_t i = 0; i + 1 < vals.size(); ++i) {
      ++left_n;
      left_pos += vals[i].second;
      if (vals[i].first == vals[i + 1].first) continue;
      const long right_n = total - left_n;
      if (left_n < min_samples_leaf || right_n < min_samples_leaf) continue;
      const double g = (double(left_n) * gini_impurity(left_pos, left_n) +
                        double(right_n) * gini_impurity(total_pos - left_pos, right_n)) /
                       double(total);
      const double threshold = 0.5 * (vals[i].first + vals[i + 1].first);
      if (g < best.gini - 1e-12 ||
          (std::fabs(g - best.gini) <= 1e-12 &&
           (f < best.feature || (f == best.feature && threshold < best.threshold)))) {
        best.gini = g;
        best.feature = f;
        best.threshold = threshold;
      }
    }
  }
  return best;
}

int grow(DecisionTree& tree, const std::vector<std::vector<double>>& x,
         const std::vector<uint8_t>& y, std::vector<int> idx, int depth,
         const ForestConfig& cfg, int mtry, Rng& rng) {
  const int me = int(tree.nodes.size());
  tree.nodes.push_back({});
  tree.nodes[size_t(me)].vote = majority(y, idx);

  long pos = 0;
  for (int i : idx) pos += y[size_t(i)];
  const bool pure = pos == 0 || pos == long(idx.size());
  if (pure || int(idx.size()) < 2 * cfg.min_samples_leaf ||
      (cfg.max_depth > 0 && depth >= cfg.max_depth)) {
    return me;
  }

  const int n_features = int(x[0].size());
  std::vector<int> features(static_cast<size_t>(n_features));
  for (int f = 0; f < n_features; ++f) features[size_t(f)] = f;
  if (mtry < n_features) {
    // Partial Fisher-Yates draw of mtry distinct features.
    for (int i = 0; i < mtry; ++i) {
      const int j = i + rng.uniform_int(n_features - i);
      std::swap(features[size_t(i)], features[size_t(j)]);
    }
    features.resize(size_t(mtry));
    std::sort(features.begin(), features.end());
  }

  Split split = best_split(x, y, idx, features, cfg.min_samples_leaf);
  if (split.feature < 0) return me;

  std::vector<int> left, right;
  for (int i : idx)
    (x[size_t(i)][size_t(split.feature)] < split.threshold ? left : right).push_back(i);
  if (left.empty() || right.empty()) return me;

  tree.nodes[size_t(me)].leaf = false;
  tree.nodes[size_t(me)].feature = split.feature;
  tree.nodes[size_t(me)].threshold = split.threshold;
  const int l = grow(tree, x, y, std::move(left), depth + 1, cfg, mtry, rng);
  tree.nodes[size_t(me)].left = l;
  const int r = grow(tree, x, y, std::move(right), depth + 1, cfg, mtry, rng);
  tree.nodes[size_t(me)].right = r;
  return me;
}

}  // namespace

DecisionTree train_tree(const std::vector<std::vector<double>>& x,
                        const std::vector<uint8_t>& y, const std::vector<int>& sample_idx,
                        const ForestConfig& cfg, Rng& rng) {
  DecisionTree tree;
  const int n_features = x.empty() ? 0 : int(x[0].size());
  int mtry = n_features;
  if (cfg.feature_subsample > 0)
    mtry = std::max(1, int(std::lround(cfg.feature_subsample * n_features)));
  else if (cfg.feature_subsample < 0)
    mtry = std::max(1, int(std::lround(std::sqrt(double(n_features)))));
  grow(tree, x, y, sample_idx, 0, cfg, mtry, rng);
  return tree;
}

ForestModel train_forest(const OccurrenceMatrix& features, const BinaryMatrix& gold,
                         const ForestConfig& cfg) {
  if (features.n_docs != gold.n_docs || features.n_codes != gold.n_codes)
    throw ConfigError("occurrence matrix and gold labels disagree in shape");
  if (features.n_docs < 1) throw ConfigError("forest training needs at least one document");
  if (cfg.n_trees < 1) throw ConfigError("n_trees must be >= 1");

  std::vector<std::vector<double>> x;
  x.reserve(size_t(features.n_docs));
  for (int d = 0; d < features.n_docs; ++d) x.push_back(features.row(d));

  ForestModel model;
  model.cfg = cfg;
  model.per_code.resize(size_t(features.n_codes));
  for (int c = 0; c < features.n_codes; ++c) {
    std::vector<uint8_t> y(static_cast<size_t>(features.n_docs));
    long pos = 0;
    for (int d = 0; d < features.n_docs; ++d) {
      y[size_t(d)] = gold.at(d, c);
      pos += y[size_t(d)];
    }
    CodeForest& forest = model.per_code[size_t(c)];
    if (pos == 0 || pos == features.n_docs) {
      forest.constant = true;
      forest.constant_value = pos == 0 ? 0 : 1;
      ++model.flagged_constant;
      continue;
    }
    for (int t = 0; t < cfg.n_trees; ++t) {
      Rng rng(splitmix64(cfg.seed) ^ splitmix64(uint64_t(c) * 1315423911ull + uint64_t(t)));
      std::vector<int> sample;
      sample.reserve(size_t(features.n_docs));
      if (cfg.bootstrap) {
        for (int i = 0; i < features.n_docs; ++i) sample.push_back(rng.uniform_int(features.n_docs));
        std::sort(sample.begin(), sample.end());
      } else {
        for (int i = 0; i < features.n_docs; ++i) sample.push_back(i);
      }
      forest.trees.push_back(train_tree(x, y, sample, cfg, rng));
    }
  }
  return model;
}

ScoreMatrix predict_forest(const ForestModel& model, const OccurrenceMatrix& features) {
  ScoreMatrix out(features.n_docs, features.n_codes);
  for (int d = 0; d < features.n_docs; ++d) {
    const std::vector<double> row = features.row(d);
    for (int c = 0; c < features.n_codes && c < int(model.per_code.size()); ++c)
      out.at(d, c) = model.per_code[size_t(c)].predict(row);
  }
  return out;
}

namespace {
constexpr char kForestMagic[8] = {'M', 'C', 'F', 'O', 'R', 'S', 'T', '1'};
}

void save_forest(const ForestModel& model, const std::string& fingerprint,
                 const std::string& path) {
  json j;
  j["fingerprint"] = fingerprint;
  j["config"] = {{"n_trees", model.cfg.n_trees},
                 {"max_depth", model.cfg.max_depth},
                 {"min_samples_leaf", model.cfg.min_samples_leaf},
                 {"feature_subsample", model.cfg.feature_subsample},
                 {"bootstrap", model.cfg.bootstrap},
                 {"seed", model.cfg.seed}};
  j["flagged_constant"] = model.flagged_constant;
  json codes = json::array();
  for (const auto& forest : model.per_code) {
    json f{{"constant", forest.constant}, {"constant_value", int(forest.constant_value)}};
    json trees = json::array();
    for (const auto& t : forest.trees) {
      json nodes = json::array();
      for (const auto& n : t.nodes)
        nodes.push_back({n.leaf, n.feature, n.threshold, n.left, n.right, int(n.vote)});
      trees.push_back(std::move(nodes));
    }
    f["trees"] = std::move(trees);
    codes.push_back(std::move(f));
  }
  j["per_code"] = std::move(codes);
  const std::string body = j.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write forest checkpoint: " + path);
  out.write(kForestMagic, 8);
  const uint64_t len = body.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(body.data(), std::streamsize(body.size()));
  if (!out) throw IoError("short write: " + path);
}

ForestModel load_forest(const std::string& path, std::string* fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open forest checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kForestMagic, 8) != 0)
    throw IoError("forest checkpoint " + path + " has an unknown format tag");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string body(len, '\0');
  in.read(body.data(), std::streamsize(len));
  if (!in) throw IoError("forest checkpoint " + path + " is truncated");
  json j = json::parse(body);
  ForestModel model;
  if (fingerprint) *fingerprint = j.value("fingerprint", "");
  model.cfg.n_trees = j.at("config").at("n_trees").get<int>();
  model.cfg.max_depth = j.at("config").at("max_depth").get<int>();
  model.cfg.min_samples_leaf = j.at("config").at("min_samples_leaf").get<int>();
  model.cfg.feature_subsample = j.at("config").at("feature_subsample").get<double>();
  model.cfg.bootstrap = j.at("config").at("bootstrap").get<bool>();
  model.cfg.seed = j.at("config").at("seed").get<uint64_t>();
  model.flagged_constant = j.value("flagged_constant", 0);
  for (const auto& f : j.at("per_code")) {
    CodeForest forest;
    forest.constant = f.at("constant").get<bool>();
    forest.constant_value = uint8_t(f.at("constant_value").get<int>());
    for (const auto& t : f.at("trees")) {
      DecisionTree tree;
      for (const auto& n : t) {
        TreeNode node;
        node.leaf = n.at(0).get<bool>();
        node.feature = n.at(1).get<int>();
        node.threshold = n.at(2).get<double>();
        node.left = n.at(3).get<int>();
        node.right = n.at(4).get<int>();
        node.vote = uint8_t(n.at(5).get<int>());
        tree.nodes.push_back(node);
      }
      forest.trees.push_back(std::move(tree));
    }
    model.per_code.push_back(std::move(forest));
  }
  return model;
}

}  // namespace medcode
