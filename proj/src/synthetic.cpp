#include "medcode/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

namespace medcode {

namespace {

// Disjoint syllable alphabets keep keyword tokens out of the filler
// vocabulary, so a phrase match is never accidental.
const std::vector<std::string> kFillerSyllables = {
    "ta", "re", "mo", "li", "sa", "ne", "vo", "ki", "du", "pa", "lo", "mi"};
const std::vector<std::string> kKeywordSyllables = {
    "zyb", "qua", "xef", "jor", "wug", "fim", "bex", "nuz", "gry", "plo", "khi", "vex"};
const std::vector<std::string> kDescriptionSuffixes = {
    "disorder", "disease", "syndrome", "condition", "deficiency", "infection"};
const std::vector<std::string> kNegationCues = {"no", "denies", "ruled out"};
const std::vector<std::string> kBoilerplate = {
    "vital signs remained stable during the stay",
    "the patient was resting comfortably this morning",
    "labs were reviewed with the team on rounds",
    "plan discussed with the patient and family",
    "medications were continued at current doses",
    "follow up was arranged with the primary clinic"};

std::string make_word(Rng& rng, const std::vector<std::string>& syllables, int n_syll) {
  std::string w;
  for (int i = 0; i < n_syll; ++i) w += syllables[size_t(rng.uniform_int(int(syllables.size())))];
  return w;
}

std::vector<std::string> make_filler_vocab(uint64_t seed) {
  Rng rng(splitmix64(seed) ^ 0x66696c6c65721234ull);
  std::set<std::string> seen;
  std::vector<std::string> vocab;
  while (vocab.size() < 160) {
    std::string w = make_word(rng, kFillerSyllables, 2 + rng.uniform_int(2));
    if (seen.insert(w).second) vocab.push_back(std::move(w));
  }
  return vocab;
}

struct KeywordSet {
  std::vector<std::string> phrases;  // one two-token phrase per code
};

KeywordSet make_keywords(const SyntheticConfig& cfg) {
  Rng rng(cfg.keyword_vocab_seed);
  std::set<std::string> seen_tokens;
  KeywordSet out;
  for (int i = 0; i < cfg.n_codes; ++i) {
    std::string a, b;
    do {
      a = make_word(rng, kKeywordSyllables, 2);
    } while (!seen_tokens.insert(a).second);
    do {
      b = make_word(rng, kKeywordSyllables, 2);
    } while (!seen_tokens.insert(b).second);
    out.phrases.push_back(a + " " + b);
  }
  return out;
}

std::string filler_run(Rng& rng, const std::vector<std::string>& vocab, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (!out.empty()) out.push_back(' ');
    out += vocab[size_t(rng.uniform_int(int(vocab.size())))];
  }
  return out;
}

std::string join_nonempty(std::initializer_list<std::string> parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += p;
  }
  return out;
}

}  // namespace

void validate_config(const SyntheticConfig& cfg) {
  if (cfg.n_docs < 0) throw ConfigError("n_docs must be nonnegative");
  if (cfg.n_codes < 1) throw ConfigError("n_codes must be positive");
  if (!cfg.sentences_per_doc.valid() || cfg.sentences_per_doc.lo < 1)
    throw ConfigError("sentences_per_doc range invalid");
  if (!cfg.codes_per_doc.valid() || cfg.codes_per_doc.lo < 0)
    throw ConfigError("codes_per_doc range invalid");
  if (cfg.codes_per_doc.hi > cfg.n_codes)
    throw ConfigError("codes_per_doc exceeds n_codes");
  if (cfg.distractor_rate < 0 || cfg.distractor_rate > 1)
    throw ConfigError("distractor_rate must be in [0,1]");
  if (cfg.negation_rate < 0 || cfg.negation_rate > 1)
    throw ConfigError("negation_rate must be in [0,1]");
}

LabelSpace synthetic_labels(const SyntheticConfig& cfg) {
  validate_config(cfg);
  KeywordSet kw = make_keywords(cfg);
  Rng rng(splitmix64(cfg.keyword_vocab_seed) ^ 0x6465736372697074ull);
  std::vector<Code> codes;
  for (int i = 0; i < cfg.n_codes; ++i) {
    std::ostringstream id;
    id << (100 + i) << "." << (i % 10);
    const std::string& suffix =
        kDescriptionSuffixes[size_t(rng.uniform_int(int(kDescriptionSuffixes.size())))];
    codes.push_back({id.str(), kw.phrases[size_t(i)] + " " + suffix});
  }
  return LabelSpace::from_codes(std::move(codes));
}

std::pair<Corpus, LabelSpace> generate_synthetic(const SyntheticConfig& cfg) {
  validate_config(cfg);
  LabelSpace labels = synthetic_labels(cfg);
  KeywordSet kw = make_keywords(cfg);
  std::vector<std::string> filler = make_filler_vocab(cfg.keyword_vocab_seed);

  Corpus corpus;
  for (int k = 0; k < cfg.n_docs; ++k) {
    Rng rng(splitmix64(cfg.doc_seed) ^ splitmix64(uint64_t(k) * 0x9e3779b97f4a7c15ull));

    const int n_planted = rng.uniform_range(cfg.codes_per_doc);
    std::vector<int> planted;
    {
      std::set<int> chosen;
      while (int(chosen.size()) < n_planted) chosen.insert(rng.uniform_int(cfg.n_codes));
      planted.assign(chosen.begin(), chosen.end());
    }

    // Sentence payloads: first the evidence sentences (1-2 per planted
    // code), then negated / distractor / boilerplate slots up to the drawn
    // document length.
    struct Slot {
      std::string text;
      int evidence_code = -1;  // label-space index when this is gold evidence
    };
    std::vector<Slot> slots;
    for (int code : planted) {
      const int copies = 1 + (rng.uniform() < 0.4 ? 1 : 0);
      for (int r = 0; r < copies; ++r) {
        Slot s;
        s.evidence_code = code;
        s.text = join_nonempty({filler_run(rng, filler, rng.uniform_int(3)),
                                kw.phrases[size_t(code)],
                                filler_run(rng, filler, 1 + rng.uniform_int(3))}) +
                 ".";
        slots.push_back(std::move(s));
      }
    }
    int total = std::max(rng.uniform_range(cfg.sentences_per_doc), int(slots.size()) + 1);
    while (int(slots.size()) < total) {
      Slot s;
      if (rng.uniform() < cfg.negation_rate) {
        // Negate a keyword of a code that is not planted here.
        int code;
        do {
          code = rng.uniform_int(cfg.n_codes);
        } while (std::count(planted.begin(), planted.end(), code) && n_planted < cfg.n_codes);
        const std::string& cue = kNegationCues[size_t(rng.uniform_int(int(kNegationCues.size())))];
        s.text = join_nonempty({cue, kw.phrases[size_t(code)],
                                filler_run(rng, filler, 1 + rng.uniform_int(2))}) +
                 ".";
      } else if (rng.uniform() < cfg.distractor_rate) {
        s.text = filler_run(rng, filler, 4 + rng.uniform_int(5)) + ".";
      } else {
        s.text = kBoilerplate[size_t(rng.uniform_int(int(kBoilerplate.size())))] + ".";
      }
      slots.push_back(std::move(s));
    }

    // Fisher-Yates shuffle so evidence lands anywhere in the document.
    for (int i = int(slots.size()) - 1; i > 0; --i) {
      std::swap(slots[size_t(i)], slots[size_t(rng.uniform_int(i + 1))]);
    }

    Document d;
    {
      std::ostringstream id;
      id << cfg.id_prefix;
      char buf[8];
      std::snprintf(buf, sizeof buf, "%05d", k);
      id << buf;
      d.id = id.str();
    }
    d.gold_labels.assign(size_t(cfg.n_codes), 0);
    std::vector<std::string> sentences;
    for (size_t i = 0; i < slots.size(); ++i) {
      sentences.push_back(slots[i].text);
      if (slots[i].evidence_code >= 0) {
        d.gold_labels[size_t(slots[i].evidence_code)] = 1;
        d.gold_evidence[labels.at(slots[i].evidence_code).id].insert(int(i));
      }
    }
    std::string text;
    for (size_t i = 0; i < sentences.size(); ++i) {
      if (i) text.push_back(' ');
      text += sentences[i];
    }
    d.text = std::move(text);
    corpus.docs.push_back(std::move(d));
  }
  return {std::move(corpus), std::move(labels)};
}

}  // namespace medcode
