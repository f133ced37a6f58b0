#include "medcode/segmenter.hpp"

#include <array>
#include <cctype>
#include <stdexcept>

#include "medcode/util.hpp"

namespace medcode {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Words that end with a period without ending the sentence.
bool is_abbreviation(std::string_view word) {
  static const std::array<std::string_view, 15> kAbbrev = {
      "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr",
      "vs", "fig", "approx", "dept", "pt", "e.g", "i.e"};
  std::string w = lowercase(word);
  for (auto a : kAbbrev)
    if (w == a) return true;
  return false;
}

// The word immediately preceding text[dot], scanning back to whitespace.
std::string_view word_before(std::string_view text, size_t dot) {
  size_t b = dot;
  while (b > 0 && !is_space(text[b - 1])) --b;
  return text.substr(b, dot - b);
}

}  // namespace

SentenceIndexedDocument split_sentences(std::string_view text, std::string doc_id) {
  SentenceIndexedDocument out;
  out.doc_id = std::move(doc_id);

  size_t start = std::string_view::npos;
  size_t last_nonspace = 0;

  auto close = [&](size_t end_exclusive) {
    if (start == std::string_view::npos) return;
    if (end_exclusive > start) {
      out.offsets.push_back({start, end_exclusive});
      out.sentences.emplace_back(text.substr(start, end_exclusive - start));
    }
    start = std::string_view::npos;
  };

  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c == '\n') {
      close(last_nonspace + 1);
      continue;
    }
    if (is_space(c)) continue;
    if (start == std::string_view::npos) start = i;
    last_nonspace = i;
    if (c == '.' || c == '!' || c == '?') {
      bool at_end = i + 1 == text.size();
      bool next_space = !at_end && is_space(text[i + 1]);
      if (!at_end && !next_space) continue;  // "98.6", "401.9", "e.g.x"
      if (c == '.' && is_abbreviation(word_before(text, i))) continue;
      close(i + 1);
    }
  }
  close(text.empty() ? 0 : last_nonspace + 1);
  return out;
}

std::string join_sentences(const std::vector<std::string>& sentences) {
  std::string out;
  for (size_t i = 0; i < sentences.size(); ++i) {
    if (i) out.push_back('\n');
    out += sentences[i];
  }
  return out;
}

std::vector<Segment> make_segments(const SentenceIndexedDocument& doc, int segn) {
  if (segn < 1) throw ConfigError("segn must be >= 1");
  const int s = doc.size();
  std::vector<Segment> out;
  if (s == 0) return out;
  const int n = std::min(segn, s);
  const int base = s / n;
  const int extra = s % n;  // first `extra` segments get one more sentence
  int next = 0;
  for (int i = 0; i < n; ++i) {
    Segment seg;
    seg.segment_id = i;
    seg.first_global = next;
    const int len = base + (i < extra ? 1 : 0);
    seg.sentences.assign(doc.sentences.begin() + next, doc.sentences.begin() + next + len);
    next += len;
    out.push_back(std::move(seg));
  }
  return out;
}

}  // namespace medcode
