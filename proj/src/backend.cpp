#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "httplib.h"
#include "json.hpp"
#include "medcode/proposer.hpp"

namespace medcode {

using nlohmann::json;

// ---------------------------------------------------------------------------
// HTTP chat-completion style backend
// ---------------------------------------------------------------------------

namespace {

void parse_endpoint(const std::string& endpoint, std::string& host, int& port,
                    std::string& path) {
  std::string rest = endpoint;
  if (rest.rfind("https://", 0) == 0)
    throw ConfigError("https endpoints are not supported; use http: " + endpoint);
  const std::string scheme = "http://";
  if (rest.rfind(scheme, 0) == 0) rest = rest.substr(scheme.size());
  size_t slash = rest.find('/');
  std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  path = slash == std::string::npos ? "/" : rest.substr(slash);
  size_t colon = hostport.rfind(':');
  if (colon == std::string::npos) {
    host = hostport;
    port = 80;
  } else {
    host = hostport.substr(0, colon);
    port = std::stoi(hostport.substr(colon + 1));
  }
  if (host.empty()) throw ConfigError("invalid backend endpoint: " + endpoint);
}

}  // namespace

HttpBackend::HttpBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
  parse_endpoint(cfg_.endpoint, host_, port_, path_);
}

std::string HttpBackend::complete(const BackendRequest& request) {
  httplib::Client client(host_, port_);
  client.set_connection_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
  client.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
  json body{{"prompt", request.prompt},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res)
    throw BackendError("backend " + cfg_.endpoint + " unreachable: " +
                       httplib::to_string(res.error()));
  if (res->status != 200)
    throw BackendError("backend " + cfg_.endpoint + " returned status " +
                       std::to_string(res->status));
  if (auto parsed = json::parse(res->body, nullptr, false);
      parsed.is_object() && parsed.contains("text") && parsed["text"].is_string())
    return parsed["text"].get<std::string>();
  return res->body;
}

// ---------------------------------------------------------------------------
// Mock oracle backend
// ---------------------------------------------------------------------------

namespace {

constexpr int kNominalSegmentSentences = 4;  // rate calibration unit
constexpr int kLongSegmentSentences = 9;     // middle-miss applies at or above

// Independent unit draw for a named event, stable across segmentations.
double unit_draw(uint64_t seed, std::string_view tag, const std::string& doc_id,
                 const std::string& code, int sentence) {
  uint64_t h = fnv1a64(tag);
  h = fnv1a64(doc_id, h);
  h = fnv1a64(code, h);
  h = fnv1a64(std::to_string(sentence), h);
  return double(splitmix64(h ^ splitmix64(seed)) >> 11) * (1.0 / 9007199254740992.0);
}

bool middle_of_long_segment(int sentence, int first_global, int count) {
  if (count < kLongSegmentSentences) return false;
  const int pos = sentence - first_global;
  return pos >= count / 3 && pos < (2 * count) / 3;
}

}  // namespace

MockOracleBackend::MockOracleBackend(const Corpus& corpus, const LabelSpace& labels,
                                     OracleConfig cfg)
    : cfg_(cfg) {
  if (cfg_.recall < 0 || cfg_.recall > 1 || cfg_.middle_miss_boost < 0 ||
      cfg_.middle_miss_boost > 1)
    throw ConfigError("oracle probabilities must be in [0,1]");
  if (cfg_.fp_code_rate < 0 || cfg_.fp_evidence_rate < 0)
    throw ConfigError("oracle fp rates must be nonnegative");
  for (const auto& c : labels.codes()) all_codes_.push_back(c.id);
  for (const auto& d : corpus.docs) {
    auto& entry = truth_[d.id];
    for (const auto& [code, sents] : d.gold_evidence)
      entry[code] = std::vector<int>(sents.begin(), sents.end());
  }
}

std::string MockOracleBackend::complete(const BackendRequest& request) {
  auto it = truth_.find(request.doc_id);
  if (it == truth_.end())
    throw BackendError("mock oracle has no planted truth for document '" + request.doc_id + "'");
  const auto& planted = it->second;
  const int first = request.first_global;
  const int count = request.sentence_count;
  const double scale = double(count) / double(kNominalSegmentSentences);

  auto hit = [&](std::string_view stage, const std::string& code, int sentence) {
    if (unit_draw(cfg_.seed, stage, request.doc_id, code, sentence) >= cfg_.recall) return false;
    if (cfg_.middle_miss_boost > 0 && middle_of_long_segment(sentence, first, count)) {
      std::string boosted = std::string(stage) + ".boost";
      if (unit_draw(cfg_.seed, boosted, request.doc_id, code, sentence) < cfg_.middle_miss_boost)
        return false;
    }
    return true;
  };

  if (request.kind == PromptKind::code_extraction) {
    std::set<std::string> codes;
    for (const auto& [code, sents] : planted) {
      for (int s : sents) {
        if (s >= first && s < first + count && hit("code", code, s)) {
          codes.insert(code);
          break;
        }
      }
    }
    Rng rng(splitmix64(cfg_.seed) ^
            fnv1a64("fpc|" + request.doc_id + "|" + std::to_string(request.segment_id)));
    int n_fp = rng.poisson(cfg_.fp_code_rate * scale);
    if (n_fp > 0) {
      std::vector<std::string> complement;
      for (const auto& id : all_codes_)
        if (!planted.count(id)) complement.push_back(id);
      for (int i = 0; i < n_fp && !complement.empty(); ++i)
        codes.insert(complement[size_t(rng.uniform_int(int(complement.size())))]);
    }
    std::string out = "[";
    bool any = false;
    for (const auto& c : codes) {
      if (any) out += ", ";
      out += "'" + c + "'";
      any = true;
    }
    out += "]";
    return out;
  }

  // Evidence extraction: planted pairs restricted to the allowed code list,
  // plus spurious pairs drawn over (allowed code, segment sentence).
  std::set<std::string> allowed(request.allowed_codes.begin(), request.allowed_codes.end());
  std::map<int, std::set<std::string>> by_local;
  for (const auto& [code, sents] : planted) {
    if (!allowed.count(code)) continue;
    for (int s : sents) {
      if (s >= first && s < first + count && hit("evid", code, s))
        by_local[s - first + 1].insert(code);
    }
  }
  Rng rng(splitmix64(cfg_.seed) ^
          fnv1a64("fpe|" + request.doc_id + "|" + std::to_string(request.segment_id)));
  int n_fp = rng.poisson(cfg_.fp_evidence_rate * scale);
  if (!request.allowed_codes.empty() && count > 0) {
    for (int i = 0; i < n_fp; ++i) {
      const std::string& code =
          request.allowed_codes[size_t(rng.uniform_int(int(request.allowed_codes.size())))];
      int local = 1 + rng.uniform_int(count);
      by_local[local].insert(code);
    }
  }
  std::ostringstream out;
  bool first_line = true;
  for (const auto& [local, codes] : by_local) {
    if (!first_line) out << "\n";
    first_line = false;
    out << "(" << local << ") ";
    bool any = false;
    for (const auto& c : codes) {
      if (any) out << "; ";
      out << c;
      any = true;
    }
  }
  return out.str();
}

}  // namespace medcode
