#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace medcode {

struct SentenceSpan {
  size_t begin = 0;  // byte offset into the raw text
  size_t end = 0;    // one past the last byte of the sentence
};

struct SentenceIndexedDocument {
  std::string doc_id;
  std::vector<std::string> sentences;
  std::vector<SentenceSpan> offsets;
  int size() const { return int(sentences.size()); }
};

// Rule-based splitter: terminal punctuation (. ! ?) followed by whitespace
// or end of text closes a sentence, newlines always close one, and a short
// abbreviation list plus the followed-by-nonspace rule guard decimals like
// "98.6" and ids like "401.9". The rule set is a deterministic stand-in for
// whatever splitter produced the published sentence indices; the fixture
// file under tests/data pins its behavior.
SentenceIndexedDocument split_sentences(std::string_view text, std::string doc_id = "");

// Inverse-ish of split_sentences: newline-joined, so re-splitting the join
// yields the same sentence list.
std::string join_sentences(const std::vector<std::string>& sentences);

struct Segment {
  int segment_id = 0;     // 0-based
  int first_global = 0;   // global index of the first sentence
  std::vector<std::string> sentences;

  int sentence_count() const { return int(sentences.size()); }
  bool contains_global(int g) const {
    return g >= first_global && g < first_global + sentence_count();
  }
  // 1-based prompt-local index -> global sentence index, or -1 if outside.
  int local_to_global(int local_1based) const {
    if (local_1based < 1 || local_1based > sentence_count()) return -1;
    return first_global + local_1based - 1;
  }
  std::string text() const { return join_sentences(sentences); }
};

// Order-preserving partition into min(segn, S) segments whose sizes differ
// by at most one; earlier segments take the extra sentence.
std::vector<Segment> make_segments(const SentenceIndexedDocument& doc, int segn);

}  // namespace medcode
