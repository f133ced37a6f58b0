#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "medcode/util.hpp"

namespace medcode {

struct Code {
  std::string id;
  std::string description;
};

class LabelSpace {
 public:
  LabelSpace() = default;
  static LabelSpace from_codes(std::vector<Code> codes);

  int size() const { return int(codes_.size()); }
  const Code& at(int i) const { return codes_[size_t(i)]; }
  const std::vector<Code>& codes() const { return codes_; }
  // -1 when the id is unknown.
  int index_of(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? -1 : it->second;
  }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

 private:
  std::vector<Code> codes_;
  std::unordered_map<std::string, int> index_;
};

struct Document {
  std::string id;
  std::string text;
  std::vector<uint8_t> gold_labels;              // one per label-space code
  std::map<std::string, std::set<int>> gold_evidence;  // code id -> sentence indices
};

struct Corpus {
  std::vector<Document> docs;
  int size() const { return int(docs.size()); }
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Violation {
  std::string doc_id;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

// Label-space file: {"codes": [{"id": ..., "description": ...}, ...]}.
LabelSpace load_labels(const std::string& path);
void write_labels(const LabelSpace& labels, const std::string& path);

// Corpus file: one JSON record per line with fields id, text, labels and
// optional evidence (code id -> list of sentence indices). The loaded corpus
// is fully validated; structural problems name the line, invariant problems
// name the document.
Corpus load_corpus(const std::string& path, const LabelSpace& labels,
                   std::vector<std::string>* warnings = nullptr);
void write_corpus(const Corpus& corpus, const LabelSpace& labels, const std::string& path);

ValidationReport validate_corpus(const Corpus& corpus, const LabelSpace& labels);

uint64_t corpus_content_hash(const Corpus& corpus);
uint64_t labels_content_hash(const LabelSpace& labels);

}  // namespace medcode
