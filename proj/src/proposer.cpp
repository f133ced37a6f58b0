#include "medcode/proposer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <future>
#include <sstream>

#include "json.hpp"

namespace medcode {

using nlohmann::json;

namespace {

const char* kCodeTemplate =
    "As a proficient clinical coding professionals, it is your responsibility to assign "
    "ICD 9 codes given the CLINICAL NOTE from the CANDIDATE LIST provided below.\n"
    "\n"
    "---\n"
    "\n"
    "CLINICAL NOTE (or partial):\n"
    "\n"
    "[text note]\n"
    "\n"
    "---\n"
    "\n"
    "Here is a CANDIDATE LIST of [candidate count] ICD 9 codes and their associated "
    "descriptions to assign:\n"
    "\n"
    "[candidates]\n"
    "\n"
    "---\n"
    "\n"
    "For each disease/procedure based on the context in CLINICAL NOTE, you must generate "
    "a list of strings containing the ICD 9 codes you assigned.\n";

const char* kEvidenceTemplate =
    "As a proficient clinical coding professional, it is your responsibility to extract "
    "evidence when assigning ICD code. Given the list of ICD 9 CANDIDATE codes "
    "(diseases/procedures) to assign, you need to verify each code by extracting "
    "associated evidence sentence from CLINICAL NOTE.\n"
    "You could inference based on basic medical commonsense, such as prescription of "
    "metformin is evidence to type 2 diabetes.\n"
    "\n"
    "---\n"
    "\n"
    "ICD 9 CANDIDATE codes and descriptions: [diseases].\n"
    "\n"
    "---\n"
    "\n"
    "Here is the CLINICAL NOTE split by sentence, each sentence starts with an index "
    "number surrounded by parentheses: [text note]\n"
    "\n"
    "---\n"
    "\n"
    "When assigning ICD code, you should:\n"
    "\n"
    "1. Carefully assign ICD code to each sentence as evidence even ICD code is already "
    "assigned in the previous sentence;\n"
    "\n"
    "2. If multiple ICD code found in one sentence, label them all and separate them by "
    "semicolon;\n"
    "\n"
    "3. Do not assign ICD code if it is negated or ruled out in the CLINICAL NOTE, for "
    "example you should not assign \"287.5\" if \"No leukemia or thrombocytopenia\";\n"
    "\n"
    "4. Include ICD code only, not the associated English description.\n";

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string with_icl_example(const PromptTemplate& tmpl) {
  std::string body = tmpl.body;
  if (!tmpl.icl_example.empty()) {
    size_t pos = body.find("\n---");
    std::string insert = "\nEXAMPLE:\n\n" + tmpl.icl_example + "\n";
    if (pos == std::string::npos)
      body += insert;
    else
      body.insert(pos + 1, insert);
  }
  return body;
}

// Candidate ICD-style id: alphanumerics and dots, at least one digit, and
// either a dot or three-plus characters ("401.9", "V15.82", "E888" yes;
// a lone "2" from prose no).
bool looks_like_code_id(std::string_view tok) {
  bool digit = false, dot = false;
  for (char c : tok) {
    if (std::isdigit(static_cast<unsigned char>(c))) digit = true;
    else if (c == '.') dot = true;
    else if (!std::isalnum(static_cast<unsigned char>(c))) return false;
  }
  return digit && (dot || tok.size() >= 3);
}

std::string strip_token(std::string_view tok) {
  size_t b = 0, e = tok.size();
  auto junk = [](char c) {
    return c == '\'' || c == '"' || c == '`' || c == ':' || c == '.' || c == ',' ||
           c == '(' || c == ')' || c == '*' || c == '-';
  };
  while (b < e && junk(tok[b])) ++b;
  while (e > b && junk(tok[e - 1])) --e;
  return std::string(tok.substr(b, e - b));
}

// First id-looking token of a fragment, or empty.
std::string first_code_token(std::string_view fragment) {
  std::string cur;
  auto flush = [&]() -> std::string {
    std::string t = strip_token(cur);
    cur.clear();
    return looks_like_code_id(t) ? t : std::string();
  };
  for (char c : fragment) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        std::string t = flush();
        if (!t.empty()) return t;
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) return flush();
  return "";
}

bool has_empty_marker(const std::string& text) {
  if (text.find("[]") != std::string::npos) return true;
  std::string t = lowercase(trim(text));
  return t.rfind("none", 0) == 0 || t == "no codes";
}

std::string truncate_words(const std::string& text, int budget, bool* truncated) {
  if (budget <= 0) return text;
  int count = 0;
  bool in_word = false;
  for (size_t i = 0; i < text.size(); ++i) {
    bool space = std::isspace(static_cast<unsigned char>(text[i])) != 0;
    if (!space && !in_word) {
      ++count;
      if (count > budget) {
        if (truncated) *truncated = true;
        return trim(text.substr(0, i));
      }
    }
    in_word = !space;
  }
  return text;
}

}  // namespace

PromptTemplate PromptTemplate::default_code() {
  return {PromptKind::code_extraction, kCodeTemplate, ""};
}

PromptTemplate PromptTemplate::default_evidence() {
  return {PromptKind::evidence_extraction, kEvidenceTemplate, ""};
}

std::string render_code_prompt(const Segment& segment, const LabelSpace& labels,
                               const PromptTemplate& tmpl) {
  std::string out = with_icl_example(tmpl);
  std::string candidates;
  for (const auto& c : labels.codes()) {
    candidates += c.id;
    candidates += ": ";
    candidates += c.description;
    candidates += "\n";
  }
  if (!candidates.empty()) candidates.pop_back();
  replace_all(out, "[candidate count]", std::to_string(labels.size()));
  replace_all(out, "[candidates]", candidates);
  replace_all(out, "[text note]", segment.text());
  return out;
}

std::string render_evidence_prompt(const Segment& segment, const std::vector<Code>& predicted,
                                   const PromptTemplate& tmpl) {
  std::string out = with_icl_example(tmpl);
  std::string diseases;
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (i) diseases += "; ";
    diseases += predicted[i].id + ": " + predicted[i].description;
  }
  std::string note;
  for (int i = 0; i < segment.sentence_count(); ++i) {
    if (i) note += "\n";
    note += "(" + std::to_string(i + 1) + ") " + segment.sentences[size_t(i)];
  }
  replace_all(out, "[diseases]", diseases);
  replace_all(out, "[text note]", note);
  return out;
}

ParseWarnings& ParseWarnings::operator+=(const ParseWarnings& o) {
  dropped_codes += o.dropped_codes;
  out_of_range += o.out_of_range;
  parse_failures += o.parse_failures;
  retried += o.retried;
  truncated_segments += o.truncated_segments;
  skipped_docs += o.skipped_docs;
  return *this;
}

int ParseWarnings::total() const {
  return dropped_codes + out_of_range + parse_failures + retried + truncated_segments +
         skipped_docs;
}

std::optional<std::set<std::string>> parse_code_response(const std::string& text,
                                                         const LabelSpace& labels,
                                                         ParseWarnings& warnings) {
  std::vector<std::string> candidates;
  std::string fragment;
  auto flush = [&]() {
    if (fragment.empty()) return;
    std::string id = first_code_token(fragment);
    if (!id.empty()) candidates.push_back(id);
    fragment.clear();
  };
  for (char c : text) {
    if (c == ',' || c == '\n' || c == ';' || c == '[' || c == ']') {
      flush();
    } else {
      fragment.push_back(c);
    }
  }
  flush();

  if (candidates.empty()) {
    if (has_empty_marker(text)) return std::set<std::string>{};
    return std::nullopt;
  }
  std::set<std::string> out;
  std::set<std::string> dropped;
  for (const auto& id : candidates) {
    if (labels.contains(id)) {
      out.insert(id);
    } else if (dropped.insert(id).second) {
      ++warnings.dropped_codes;
    }
  }
  return out;
}

std::optional<std::vector<EvidencePair>> parse_evidence_response(
    const std::string& text, const std::set<std::string>& allowed_codes,
    const Segment& segment, ParseWarnings& warnings) {
  std::set<EvidencePair> pairs;
  bool any_line = false;
  for (const std::string& raw_line : split_lines(text)) {
    std::string line = trim(raw_line);
    while (!line.empty() && (line[0] == '-' || line[0] == '*')) line = trim(line.substr(1));
    if (line.size() < 3 || line[0] != '(') continue;
    size_t close = line.find(')');
    if (close == std::string::npos || close < 2) continue;
    std::string digits = line.substr(1, close - 1);
    if (digits.empty() ||
        !std::all_of(digits.begin(), digits.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      continue;
    if (digits.size() > 6) continue;
    any_line = true;
    const int local = std::stoi(digits);
    const int global = segment.local_to_global(local);
    std::string rest = line.substr(close + 1);
    std::string fragment;
    auto handle = [&]() {
      if (fragment.empty()) return;
      std::string id = first_code_token(fragment);
      fragment.clear();
      if (id.empty()) return;
      if (!allowed_codes.count(id)) {
        ++warnings.dropped_codes;
        return;
      }
      if (global < 0) {
        ++warnings.out_of_range;
        return;
      }
      pairs.insert({id, global});
    };
    for (char c : rest) {
      if (c == ';' || c == ',') {
        handle();
      } else {
        fragment.push_back(c);
      }
    }
    handle();
  }
  if (!any_line && !trim(text).empty()) return std::nullopt;
  return std::vector<EvidencePair>(pairs.begin(), pairs.end());
}

namespace {

// One backend exchange with transport retries and parse re-asks. Returns the
// parsed payload via the supplied parser; on exhausted parse retries the
// result is empty rather than fatal (warnings keep it measurable).
template <typename T>
std::optional<T> exchange(ProposalBackend& backend, BackendRequest req, int retries,
                          ParseWarnings& warnings, std::string* raw_response,
                          const std::function<std::optional<T>(const std::string&)>& parse) {
  int transport_left = retries;
  int parse_left = retries;
  for (;;) {
    std::string text;
    try {
      text = backend.complete(req);
    } catch (const BackendError&) {
      if (transport_left-- > 0) continue;
      throw;
    }
    if (raw_response) *raw_response = text;
    auto parsed = parse(text);
    if (parsed.has_value()) return parsed;
    ++warnings.parse_failures;
    if (parse_left-- > 0) {
      ++warnings.retried;
      req.prompt += "\n\nRespond with only the list.";
      continue;
    }
    return std::nullopt;
  }
}

template <typename Fn>
void for_each_segment(int n, int max_in_flight, Fn&& fn) {
  if (max_in_flight <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  // Bounded fan-out; per-segment results land in per-index slots so the
  // caller's fold over segment ids is unaffected by scheduling.
  std::vector<std::future<void>> inflight;
  for (int i = 0; i < n; ++i) {
    inflight.push_back(std::async(std::launch::async, [&fn, i]() { fn(i); }));
    if (int(inflight.size()) >= max_in_flight) {
      inflight.front().get();
      inflight.erase(inflight.begin());
    }
  }
  for (auto& f : inflight) f.get();
}

}  // namespace

Proposal propose_document(const SentenceIndexedDocument& doc, const LabelSpace& labels,
                          ProposalBackend& backend, const ProposeOptions& opts) {
  Proposal p;
  p.doc_id = doc.doc_id;
  if (doc.size() == 0) {
    ++p.warnings.skipped_docs;
    return p;
  }
  std::vector<Segment> segments = make_segments(doc, opts.segn);
  const int n = int(segments.size());

  auto make_request = [&](const Segment& seg, PromptKind kind) {
    BackendRequest req;
    req.kind = kind;
    req.temperature = opts.backend.temperature;
    req.max_tokens = opts.backend.max_tokens;
    req.doc_id = doc.doc_id;
    req.segment_id = seg.segment_id;
    req.first_global = seg.first_global;
    req.sentence_count = seg.sentence_count();
    return req;
  };

  // Stage 1a: per-segment code extraction, aggregated by union.
  struct CodeResult {
    std::set<std::string> codes;
    ParseWarnings warnings;
    std::string raw;
    std::string error;
  };
  std::vector<CodeResult> code_results(static_cast<size_t>(n));
  for_each_segment(n, opts.backend.max_in_flight, [&](int i) {
    Segment seg = segments[size_t(i)];
    CodeResult& r = code_results[size_t(i)];
    if (opts.max_note_tokens > 0) {
      bool truncated = false;
      std::string clipped = truncate_words(seg.text(), opts.max_note_tokens, &truncated);
      if (truncated) {
        ++r.warnings.truncated_segments;
        seg.sentences = split_sentences(clipped).sentences;
      }
    }
    BackendRequest req = make_request(seg, PromptKind::code_extraction);
    req.prompt = render_code_prompt(seg, labels, opts.code_template);
    try {
      auto parsed = exchange<std::set<std::string>>(
          backend, std::move(req), opts.backend.retries, r.warnings, &r.raw,
          [&](const std::string& text) { return parse_code_response(text, labels, r.warnings); });
      if (parsed) r.codes = std::move(*parsed);
    } catch (const BackendError& e) {
      r.error = e.what();
    }
  });
  for (int i = 0; i < n; ++i) {
    const CodeResult& r = code_results[size_t(i)];
    p.warnings += r.warnings;
    p.provenance.push_back({i, PromptKind::code_extraction, r.raw});
    p.doc_codes.insert(r.codes.begin(), r.codes.end());
  }
  for (int i = 0; i < n; ++i) {
    if (!code_results[size_t(i)].error.empty())
      throw ProposeError("code extraction failed on segment " + std::to_string(i) + ": " +
                             code_results[size_t(i)].error,
                         p);
  }

  // Stage 1b runs only over the document-level predictions.
  if (!p.doc_codes.empty()) {
    std::vector<Code> predicted;
    std::vector<std::string> allowed_vec(p.doc_codes.begin(), p.doc_codes.end());
    for (const auto& id : allowed_vec) predicted.push_back(labels.at(labels.index_of(id)));

    struct EvidenceResult {
      std::vector<EvidencePair> pairs;
      ParseWarnings warnings;
      std::string raw;
      std::string error;
    };
    std::vector<EvidenceResult> ev_results(static_cast<size_t>(n));
    for_each_segment(n, opts.backend.max_in_flight, [&](int i) {
      Segment seg = segments[size_t(i)];
      EvidenceResult& r = ev_results[size_t(i)];
      if (opts.max_note_tokens > 0) {
        int used = 0;
        size_t keep = 0;
        for (; keep < seg.sentences.size(); ++keep) {
          used += int(tokenize_words(seg.sentences[keep]).size());
          if (used > opts.max_note_tokens && keep > 0) break;
        }
        if (keep < seg.sentences.size()) {
          seg.sentences.resize(keep);
          ++r.warnings.truncated_segments;
        }
      }
      BackendRequest req = make_request(seg, PromptKind::evidence_extraction);
      req.allowed_codes = allowed_vec;
      req.prompt = render_evidence_prompt(seg, predicted, opts.evidence_template);
      try {
        auto parsed = exchange<std::vector<EvidencePair>>(
            backend, std::move(req), opts.backend.retries, r.warnings, &r.raw,
            [&](const std::string& text) {
              return parse_evidence_response(text, p.doc_codes, seg, r.warnings);
            });
        if (parsed) r.pairs = std::move(*parsed);
      } catch (const BackendError& e) {
        r.error = e.what();
      }
    });
    std::set<EvidencePair> merged;
    for (int i = 0; i < n; ++i) {
      const EvidenceResult& r = ev_results[size_t(i)];
      p.warnings += r.warnings;
      p.provenance.push_back({i, PromptKind::evidence_extraction, r.raw});
      merged.insert(r.pairs.begin(), r.pairs.end());
    }
    p.evidence_pairs.assign(merged.begin(), merged.end());
    for (int i = 0; i < n; ++i) {
      if (!ev_results[size_t(i)].error.empty())
        throw ProposeError("evidence extraction failed on segment " + std::to_string(i) + ": " +
                               ev_results[size_t(i)].error,
                           p);
    }
  }
  return p;
}

CandidateSet build_candidate_set(const Proposal& p, const LabelSpace& labels) {
  CandidateSet cs;
  cs.doc_id = p.doc_id;
  cs.n_codes = labels.size();
  std::set<int> sentences;
  for (const auto& pair : p.evidence_pairs) sentences.insert(pair.sentence);
  cs.m.assign(sentences.begin(), sentences.end());
  cs.silver.assign(size_t(cs.n_codes) * cs.m.size(), 0);
  for (const auto& pair : p.evidence_pairs) {
    const int c = labels.index_of(pair.code);
    if (c < 0) continue;
    const auto it = std::lower_bound(cs.m.begin(), cs.m.end(), pair.sentence);
    const int j = int(it - cs.m.begin());
    cs.silver[size_t(c) * cs.m.size() + size_t(j)] = 1;
  }
  return cs;
}

void write_proposals(const std::vector<Proposal>& proposals, const ProposalsMeta& meta,
                     const std::string& path) {
  std::ostringstream out;
  json m{{"meta",
          {{"kind", "proposals"}, {"segn", meta.segn}, {"backend", meta.backend},
           {"fingerprint", meta.fingerprint}, {"corpus_hash", meta.corpus_hash},
           {"labels_hash", meta.labels_hash}}}};
  out << m.dump() << "\n";
  for (const auto& p : proposals) {
    json pairs = json::array();
    for (const auto& pr : p.evidence_pairs) pairs.push_back({pr.code, pr.sentence});
    json rec{{"doc_id", p.doc_id},
             {"doc_codes", std::vector<std::string>(p.doc_codes.begin(), p.doc_codes.end())},
             {"evidence_pairs", pairs},
             {"warnings",
              {{"dropped_codes", p.warnings.dropped_codes},
               {"out_of_range", p.warnings.out_of_range},
               {"parse_failures", p.warnings.parse_failures},
               {"retried", p.warnings.retried},
               {"truncated_segments", p.warnings.truncated_segments},
               {"skipped_docs", p.warnings.skipped_docs}}}};
    out << rec.dump() << "\n";
  }
  write_file(path, out.str());
}

std::vector<Proposal> load_proposals(const std::string& path, ProposalsMeta* meta) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open proposals file: " + path);
  std::vector<Proposal> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("proposals line " + std::to_string(line_no) + ": " + e.what());
    }
    if (rec.contains("meta")) {
      if (meta) {
        meta->segn = rec["meta"].value("segn", 10);
        meta->backend = rec["meta"].value("backend", "");
        meta->fingerprint = rec["meta"].value("fingerprint", "");
        meta->corpus_hash = rec["meta"].value("corpus_hash", "");
        meta->labels_hash = rec["meta"].value("labels_hash", "");
      }
      continue;
    }
    Proposal p;
    p.doc_id = rec.at("doc_id").get<std::string>();
    for (const auto& c : rec.at("doc_codes")) p.doc_codes.insert(c.get<std::string>());
    for (const auto& pr : rec.at("evidence_pairs"))
      p.evidence_pairs.push_back({pr.at(0).get<std::string>(), pr.at(1).get<int>()});
    std::sort(p.evidence_pairs.begin(), p.evidence_pairs.end());
    if (rec.contains("warnings")) {
      const auto& w = rec["warnings"];
      p.warnings.dropped_codes = w.value("dropped_codes", 0);
      p.warnings.out_of_range = w.value("out_of_range", 0);
      p.warnings.parse_failures = w.value("parse_failures", 0);
      p.warnings.retried = w.value("retried", 0);
      p.warnings.truncated_segments = w.value("truncated_segments", 0);
      p.warnings.skipped_docs = w.value("skipped_docs", 0);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace medcode
