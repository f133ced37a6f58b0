#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "medcode/corpus.hpp"
#include "medcode/segmenter.hpp"

namespace medcode {

enum class PromptKind { code_extraction, evidence_extraction };

// Prompt bodies with [text note] / [candidates] / [diseases] placeholders.
// The optional in-context example slot is empty by default; when set it is
// inserted verbatim after the instruction header.
struct PromptTemplate {
  PromptKind kind = PromptKind::code_extraction;
  std::string body;
  std::string icl_example;

  static PromptTemplate default_code();
  static PromptTemplate default_evidence();
};

std::string render_code_prompt(const Segment& segment, const LabelSpace& labels,
                               const PromptTemplate& tmpl = PromptTemplate::default_code());
std::string render_evidence_prompt(const Segment& segment, const std::vector<Code>& predicted,
                                   const PromptTemplate& tmpl = PromptTemplate::default_evidence());

struct ParseWarnings {
  int dropped_codes = 0;      // ids outside the candidate/allowed set
  int out_of_range = 0;       // evidence indices outside the segment
  int parse_failures = 0;     // responses with nothing recognizable
  int retried = 0;            // re-asks after a parse failure
  int truncated_segments = 0; // segments clipped to the token budget
  int skipped_docs = 0;       // zero-sentence documents

  ParseWarnings& operator+=(const ParseWarnings& o);
  int total() const;
};

// nullopt = ParseFailure: nothing recognizable and no explicit empty marker.
// The parsers are total: any input yields a value or nullopt, never a throw.
std::optional<std::set<std::string>> parse_code_response(const std::string& text,
                                                         const LabelSpace& labels,
                                                         ParseWarnings& warnings);

struct EvidencePair {
  std::string code;
  int sentence = 0;  // global sentence index
  auto operator<=>(const EvidencePair&) const = default;
};

std::optional<std::vector<EvidencePair>> parse_evidence_response(
    const std::string& text, const std::set<std::string>& allowed_codes,
    const Segment& segment, ParseWarnings& warnings);

struct SegmentTrace {
  int segment_id = 0;
  PromptKind kind = PromptKind::code_extraction;
  std::string response;
};

struct Proposal {
  std::string doc_id;
  std::set<std::string> doc_codes;           // stage 1a aggregate
  std::vector<EvidencePair> evidence_pairs;  // stage 1b aggregate, sorted unique
  ParseWarnings warnings;
  std::vector<SegmentTrace> provenance;
};

// Wire contract is {prompt, temperature, max_tokens} -> free text; the other
// fields are in-process context so the mock oracle can locate its planted
// truth for the segment.
struct BackendRequest {
  PromptKind kind = PromptKind::code_extraction;
  std::string prompt;
  double temperature = 0.1;
  int max_tokens = 1024;
  std::string doc_id;
  int segment_id = 0;
  int first_global = 0;
  int sentence_count = 0;
  std::vector<std::string> allowed_codes;  // evidence kind only
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProposalBackend {
 public:
  virtual ~ProposalBackend() = default;
  virtual std::string complete(const BackendRequest& request) = 0;
  virtual std::string name() const = 0;
};

struct BackendConfig {
  std::string endpoint;        // http backend only, e.g. http://host:port/path
  double temperature = 0.1;
  int max_tokens = 1024;
  int retries = 2;             // re-asks on parse failure, retries on transport failure
  int timeout_ms = 30000;
  int max_in_flight = 1;       // per-segment call concurrency cap
};

// POSTs {"prompt","temperature","max_tokens"} as JSON and returns either the
// "text" field of a JSON reply or the raw body.
class HttpBackend : public ProposalBackend {
 public:
  explicit HttpBackend(BackendConfig cfg);
  std::string complete(const BackendRequest& request) override;
  std::string name() const override { return "http"; }

 private:
  BackendConfig cfg_;
  std::string host_;
  int port_ = 80;
  std::string path_;
};

// Deterministic stand-in for a live backend: recalls planted evidence with a
// configurable per-sentence probability, misses more often in the middle
// third of long segments, and injects spurious codes and pairs. Rates are
// calibrated per nominal 4-sentence segment and scale with segment length,
// so total noise volume does not depend on how a document is segmented.
struct OracleConfig {
  double recall = 1.0;
  double fp_code_rate = 0.0;       // expected spurious codes per nominal segment
  double fp_evidence_rate = 0.0;   // expected spurious pairs per nominal segment
  double middle_miss_boost = 0.0;  // extra miss probability, middle third of long segments
  uint64_t seed = 0;
};

class MockOracleBackend : public ProposalBackend {
 public:
  MockOracleBackend(const Corpus& corpus, const LabelSpace& labels, OracleConfig cfg);
  std::string complete(const BackendRequest& request) override;
  std::string name() const override { return "mock"; }

  const OracleConfig& config() const { return cfg_; }

 private:
  OracleConfig cfg_;
  std::vector<std::string> all_codes_;
  // doc id -> (code id -> planted global sentence indices)
  std::map<std::string, std::map<std::string, std::vector<int>>> truth_;
};

struct ProposeOptions {
  int segn = 10;
  BackendConfig backend;
  PromptTemplate code_template = PromptTemplate::default_code();
  PromptTemplate evidence_template = PromptTemplate::default_evidence();
  int max_note_tokens = 0;  // 0 = no per-segment truncation
};

class ProposeError : public std::runtime_error {
 public:
  ProposeError(const std::string& msg, Proposal partial)
      : std::runtime_error(msg), partial_result(std::move(partial)) {}
  Proposal partial_result;
};

Proposal propose_document(const SentenceIndexedDocument& doc, const LabelSpace& labels,
                          ProposalBackend& backend, const ProposeOptions& opts);

struct CandidateSet {
  std::string doc_id;
  std::vector<int> m;           // sorted unique evidence sentence indices
  int n_codes = 0;
  std::vector<uint8_t> silver;  // n_codes x m.size(), row-major

  int size() const { return int(m.size()); }
  uint8_t silver_at(int code, int j) const { return silver[size_t(code) * m.size() + size_t(j)]; }
};

CandidateSet build_candidate_set(const Proposal& p, const LabelSpace& labels);

// Line-delimited persistence so stage 2 runs offline from cached proposals.
// The first line is a meta record carrying the run fingerprint.
struct ProposalsMeta {
  int segn = 10;
  std::string backend;
  std::string fingerprint;
  std::string corpus_hash;
  std::string labels_hash;
};

void write_proposals(const std::vector<Proposal>& proposals, const ProposalsMeta& meta,
                     const std::string& path);
std::vector<Proposal> load_proposals(const std::string& path, ProposalsMeta* meta = nullptr);

}  // namespace medcode
