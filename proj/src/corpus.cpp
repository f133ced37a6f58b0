#include "medcode/corpus.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "medcode/segmenter.hpp"

namespace medcode {

using nlohmann::json;

LabelSpace LabelSpace::from_codes(std::vector<Code> codes) {
  if (codes.empty()) throw CorpusError("label space must contain at least one code");
  LabelSpace out;
  for (auto& c : codes) {
    if (c.id.empty()) throw CorpusError("label space contains a code with empty id");
    if (c.description.empty())
      throw CorpusError("code '" + c.id + "' has an empty description");
    if (out.index_.count(c.id)) throw CorpusError("duplicate code id '" + c.id + "'");
    out.index_.emplace(c.id, int(out.codes_.size()));
    out.codes_.push_back(std::move(c));
  }
  return out;
}

LabelSpace load_labels(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw CorpusError("labels file " + path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("codes") || !j["codes"].is_array())
    throw CorpusError("labels file " + path + ": expected {\"codes\": [...]}");
  std::vector<Code> codes;
  for (const auto& c : j["codes"]) {
    codes.push_back({c.at("id").get<std::string>(), c.at("description").get<std::string>()});
  }
  return LabelSpace::from_codes(std::move(codes));
}

void write_labels(const LabelSpace& labels, const std::string& path) {
  json arr = json::array();
  for (const auto& c : labels.codes()) {
    arr.push_back({{"id", c.id}, {"description", c.description}});
  }
  json j{{"codes", arr}};
  write_file(path, j.dump(2) + "\n");
}

namespace {

json document_to_json(const Document& d, const LabelSpace& labels) {
  json labs = json::array();
  for (int c = 0; c < labels.size(); ++c)
    if (d.gold_labels[size_t(c)]) labs.push_back(labels.at(c).id);
  json rec{{"id", d.id}, {"text", d.text}, {"labels", labs}};
  if (!d.gold_evidence.empty()) {
    json ev = json::object();
    for (const auto& [code, sents] : d.gold_evidence) {
      ev[code] = json(std::vector<int>(sents.begin(), sents.end()));
    }
    rec["evidence"] = ev;
  }
  return rec;
}

Document document_from_json(const json& rec, const LabelSpace& labels, int line_no) {
  auto fail = [&](const std::string& msg) {
    throw CorpusError("line " + std::to_string(line_no) + ": " + msg);
  };
  if (!rec.is_object()) fail("record is not an object");
  Document d;
  if (!rec.contains("id") || !rec["id"].is_string()) fail("missing string field 'id'");
  d.id = rec["id"].get<std::string>();
  if (!rec.contains("text") || !rec["text"].is_string()) fail("missing string field 'text'");
  d.text = rec["text"].get<std::string>();
  d.gold_labels.assign(size_t(labels.size()), 0);
  if (!rec.contains("labels") || !rec["labels"].is_array()) fail("missing list field 'labels'");
  for (const auto& l : rec["labels"]) {
    if (!l.is_string()) fail("labels must be code id strings");
    int idx = labels.index_of(l.get<std::string>());
    if (idx < 0) fail("unknown code '" + l.get<std::string>() + "'");
    d.gold_labels[size_t(idx)] = 1;
  }
  if (rec.contains("evidence")) {
    if (!rec["evidence"].is_object()) fail("'evidence' must map code ids to index lists");
    for (const auto& [code, idxs] : rec["evidence"].items()) {
      if (labels.index_of(code) < 0) fail("unknown code '" + code + "' in evidence");
      std::set<int>& sents = d.gold_evidence[code];
      for (const auto& v : idxs) {
        if (!v.is_number_integer()) fail("evidence indices must be integers");
        sents.insert(v.get<int>());
      }
    }
  }
  return d;
}

}  // namespace

Corpus load_corpus(const std::string& path, const LabelSpace& labels,
                   std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw CorpusError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    corpus.docs.push_back(document_from_json(rec, labels, line_no));
  }
  if (corpus.docs.empty() && warnings)
    warnings->push_back("corpus file " + path + " contains no documents");
  ValidationReport report = validate_corpus(corpus, labels);
  if (!report.ok()) {
    std::ostringstream msg;
    msg << "corpus " << path << " failed validation:";
    for (const auto& v : report.violations) msg << "\n  [" << v.doc_id << "] " << v.message;
    throw CorpusError(msg.str());
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const LabelSpace& labels, const std::string& path) {
  std::ostringstream out;
  for (const auto& d : corpus.docs) out << document_to_json(d, labels).dump() << "\n";
  write_file(path, out.str());
}

ValidationReport validate_corpus(const Corpus& corpus, const LabelSpace& labels) {
  ValidationReport report;
  auto add = [&](const std::string& id, std::string msg) {
    report.violations.push_back({id, std::move(msg)});
  };
  for (const auto& d : corpus.docs) {
    if (d.gold_labels.size() != size_t(labels.size())) {
      add(d.id, "gold label vector length " + std::to_string(d.gold_labels.size()) +
                    " does not match label space size " + std::to_string(labels.size()));
      continue;
    }
    const int n_sents = split_sentences(d.text).size();
    for (const auto& [code, sents] : d.gold_evidence) {
      const int idx = labels.index_of(code);
      if (idx < 0) {
        add(d.id, "evidence references unknown code '" + code + "'");
        continue;
      }
      if (!d.gold_labels[size_t(idx)])
        add(d.id, "evidence present for code '" + code + "' whose gold label is 0");
      for (int s : sents) {
        if (s < 0 || s >= n_sents)
          add(d.id, "evidence index " + std::to_string(s) + " for code '" + code +
                        "' outside sentence range [0, " + std::to_string(n_sents) + ")");
      }
    }
  }
  return report;
}

uint64_t corpus_content_hash(const Corpus& corpus) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& d : corpus.docs) {
    h = fnv1a64(d.id, h);
    h = fnv1a64(d.text, h);
    h = fnv1a64(std::string(d.gold_labels.begin(), d.gold_labels.end()), h);
    for (const auto& [code, sents] : d.gold_evidence) {
      h = fnv1a64(code, h);
      for (int s : sents) h = fnv1a64(std::to_string(s), h);
    }
  }
  return h;
}

uint64_t labels_content_hash(const LabelSpace& labels) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& c : labels.codes()) {
    h = fnv1a64(c.id, h);
    h = fnv1a64(c.description, h);
  }
  return h;
}

}  // namespace medcode
