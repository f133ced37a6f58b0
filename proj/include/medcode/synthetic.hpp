#pragma once

#include <string>
#include <utility>
#include <vector>

#include "medcode/corpus.hpp"
#include "medcode/util.hpp"

namespace medcode {

// Generator for corpora with planted code keywords, so every pipeline stage
// can be exercised end to end without access-gated clinical data. Each code
// owns a unique two-token keyword phrase; a code's gold evidence sentences
// contain that phrase, distractor sentences contain no phrase at all, and
// negated sentences carry a phrase of an unplanted code behind a negation
// cue ("no", "denies", "ruled out") without setting the gold label.
struct SyntheticConfig {
  int n_docs = 100;
  int n_codes = 50;
  IntRange sentences_per_doc{24, 40};
  IntRange codes_per_doc{2, 5};
  uint64_t keyword_vocab_seed = 7;   // fixes the label space and keyword phrases
  uint64_t doc_seed = 1;             // fixes the document stream (vary per split)
  double distractor_rate = 0.7;      // non-evidence slot: word-soup filler vs boilerplate
  double negation_rate = 0.15;       // non-evidence slot carries a negated keyword
  std::string id_prefix = "doc";
};

void validate_config(const SyntheticConfig& cfg);

// The label space is a pure function of (keyword_vocab_seed, n_codes), so
// corpora generated with different doc seeds share it.
LabelSpace synthetic_labels(const SyntheticConfig& cfg);

std::pair<Corpus, LabelSpace> generate_synthetic(const SyntheticConfig& cfg);

}  // namespace medcode
