#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "citecat/error.hpp"
#include "citecat/io.hpp"

// Deterministic text processing: tokenization, sentence segmentation,
// stop words, section partitioning and citation-occurrence lookup.
namespace citecat::text {

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

inline bool is_token_byte(unsigned char c) {
  // ASCII letters/digits are token characters; bytes >= 0x80 (UTF-8
  // continuations and lead bytes) are kept so multi-byte words survive.
  return std::isalnum(c) || c >= 0x80;
}

// Lowercased maximal runs of letters/digits. Punctuation and whitespace
// separate tokens. "" -> {}.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (is_token_byte(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// ---------------------------------------------------------------------------
// Sentence segmentation
// ---------------------------------------------------------------------------

struct SentenceSpan {
  size_t begin = 0;  // byte offset of first non-whitespace char
  size_t end = 0;    // one past the last char (terminator included)
};

// Abbreviations that suppress a sentence split after '.'. Compared against
// the dotted word preceding the period, lowercased, final '.' stripped
// ("et al." -> "al", "e.g." -> "e.g", "Fig." -> "fig").
inline const std::unordered_set<std::string>& sentence_abbreviations() {
  static const std::unordered_set<std::string> abbrevs = {
      "al", "e.g", "i.e", "fig", "figs", "eq", "eqs", "etc",
      "vs", "cf", "ref", "refs", "sec", "dr", "prof", "st",
  };
  return abbrevs;
}

namespace detail {

inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }

// Word made of letters and interior dots ending right before `dot_pos`,
// used for the abbreviation guard.
inline std::string dotted_word_before(std::string_view text, size_t dot_pos) {
  size_t b = dot_pos;
  while (b > 0) {
    unsigned char c = static_cast<unsigned char>(text[b - 1]);
    if (std::isalpha(c) || c == '.') --b;
    else break;
  }
  std::string w(text.substr(b, dot_pos - b));
  for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  while (!w.empty() && w.back() == '.') w.pop_back();
  while (!w.empty() && w.front() == '.') w.erase(w.begin());
  return w;
}

}  // namespace detail

// Splits on '.', '!' or '?' followed by whitespace and an uppercase letter
// or digit. '.' after a known abbreviation does not split. Spans are
// non-overlapping, ordered, and together cover all non-whitespace text.
inline std::vector<SentenceSpan> split_sentences(std::string_view text) {
  std::vector<SentenceSpan> spans;
  const size_t n = text.size();
  size_t start = 0;
  while (start < n && detail::is_space(static_cast<unsigned char>(text[start]))) ++start;
  if (start >= n) return spans;

  size_t i = start;
  while (i < n) {
    char c = text[i];
    bool terminator = (c == '.' || c == '!' || c == '?');
    if (terminator) {
      size_t j = i + 1;
      while (j < n && detail::is_space(static_cast<unsigned char>(text[j]))) ++j;
      bool boundary = j > i + 1 && j < n &&
                      (std::isupper(static_cast<unsigned char>(text[j])) ||
                       std::isdigit(static_cast<unsigned char>(text[j])));
      if (boundary && c == '.' &&
          sentence_abbreviations().count(detail::dotted_word_before(text, i))) {
        boundary = false;
      }
      if (boundary) {
        spans.push_back({start, i + 1});
        start = j;
        i = j;
        continue;
      }
    }
    ++i;
  }
  // trailing sentence, trimmed of trailing whitespace
  size_t end = n;
  while (end > start && detail::is_space(static_cast<unsigned char>(text[end - 1]))) --end;
  if (end > start) spans.push_back({start, end});
  return spans;
}

// ---------------------------------------------------------------------------
// Stop words
// ---------------------------------------------------------------------------

// Snapshot of the standard 179-entry English stop-word list, also shipped
// as data/stopwords.txt (kept in sync by a test).
inline const std::vector<std::string>& builtin_stop_words() {
  static const std::vector<std::string> words = {
      "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you",
      "you're", "you've", "you'll", "you'd", "your", "yours", "yourself",
      "yourselves", "he", "him", "his", "himself", "she", "she's", "her",
      "hers", "herself", "it", "it's", "its", "itself", "they", "them",
      "their", "theirs", "themselves", "what", "which", "who", "whom",
      "this", "that", "that'll", "these", "those", "am", "is", "are", "was",
      "were", "be", "been", "being", "have", "has", "had", "having", "do",
      "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
      "because", "as", "until", "while", "of", "at", "by", "for", "with",
      "about", "against", "between", "into", "through", "during", "before",
      "after", "above", "below", "to", "from", "up", "down", "in", "out",
      "on", "off", "over", "under", "again", "further", "then", "once",
      "here", "there", "when", "where", "why", "how", "all", "any", "both",
      "each", "few", "more", "most", "other", "some", "such", "no", "nor",
      "not", "only", "own", "same", "so", "than", "too", "very", "s", "t",
      "can", "will", "just", "don", "don't", "should", "should've", "now",
      "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't",
      "couldn", "couldn't", "didn", "didn't", "doesn", "doesn't", "hadn",
      "hadn't", "hasn", "hasn't", "haven", "haven't", "isn", "isn't", "ma",
      "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't", "shan",
      "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren",
      "weren't", "won", "won't", "wouldn", "wouldn't",
  };
  return words;
}

class StopWordList {
 public:
  StopWordList() = default;
  explicit StopWordList(const std::vector<std::string>& words)
      : set_(words.begin(), words.end()) {}

  static const StopWordList& builtin() {
    static const StopWordList list(builtin_stop_words());
    return list;
  }

  // One token per line; blank lines ignored.
  static StopWordList load(const std::filesystem::path& path) {
    StopWordList list;
    for (const std::string& line : io::split_lines(io::read_file(path))) {
      if (!line.empty()) list.set_.insert(line);
    }
    return list;
  }

  bool contains(std::string_view token) const {
    return set_.count(std::string(token)) > 0;
  }
  size_t size() const { return set_.size(); }

 private:
  std::unordered_set<std::string> set_;
};

// Membership in the shipped English stop-word list. Expects a lowercased
// token.
inline bool is_stop_word(std::string_view token) {
  return StopWordList::builtin().contains(token);
}

// ---------------------------------------------------------------------------
// Section partitioning
// ---------------------------------------------------------------------------

enum class Section { introduction, methods, results, discussion, other };

inline constexpr std::array<Section, 5> kSections = {
    Section::introduction, Section::methods, Section::results,
    Section::discussion, Section::other};

inline const char* to_string(Section s) {
  switch (s) {
    case Section::introduction: return "introduction";
    case Section::methods: return "methods";
    case Section::results: return "results";
    case Section::discussion: return "discussion";
    case Section::other: return "other";
  }
  return "other";
}

// Canonical section -> recognized header lines (lowercased, numerals and
// trailing colons already stripped when matched). Shipped as
// data/section_synonyms.json; this table is the built-in default.
inline const std::vector<std::pair<Section, std::vector<std::string>>>&
builtin_section_synonyms() {
  static const std::vector<std::pair<Section, std::vector<std::string>>> table = {
      {Section::introduction, {"introduction"}},
      {Section::methods,
       {"methods", "method", "materials and methods", "methodology",
        "approach", "model"}},
      {Section::results,
       {"results", "experiments", "evaluation", "experimental results",
        "results and analysis"}},
      {Section::discussion,
       {"discussion", "conclusion", "conclusions", "concluding remarks",
        "discussion and conclusion", "summary"}},
      // Recognized headers that reset attribution to "other" so that e.g.
      // a related-work body is not counted as introduction material.
      {Section::other,
       {"related work", "abstract", "references", "bibliography",
        "acknowledgments", "acknowledgements", "appendix", "background"}},
  };
  return table;
}

class SectionSynonyms {
 public:
  SectionSynonyms() : SectionSynonyms(builtin_section_synonyms()) {}
  explicit SectionSynonyms(
      const std::vector<std::pair<Section, std::vector<std::string>>>& table) {
    for (const auto& [section, patterns] : table)
      for (const std::string& p : patterns) map_[p] = section;
  }

  static std::optional<Section> section_from_name(std::string_view name) {
    for (Section s : kSections)
      if (name == to_string(s)) return s;
    return std::nullopt;
  }

  // JSON file: {"introduction": ["introduction", ...], ...}
  static SectionSynonyms load(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("section synonyms " + path.string() + ": " + e.what());
    }
    if (!j.is_object())
      throw ConfigError("section synonyms " + path.string() + ": expected an object");
    std::vector<std::pair<Section, std::vector<std::string>>> table;
    for (const auto& [key, value] : j.items()) {
      auto section = section_from_name(key);
      if (!section)
        throw ConfigError("section synonyms " + path.string() +
                          ": unknown section \"" + key + "\"");
      if (!value.is_array())
        throw ConfigError("section synonyms " + path.string() + ": \"" + key +
                          "\" must list header patterns");
      std::vector<std::string> patterns;
      for (const auto& p : value) patterns.push_back(normalize(p.get<std::string>()));
      table.emplace_back(*section, std::move(patterns));
    }
    return SectionSynonyms(table);
  }

  std::optional<Section> match(std::string_view header_line) const {
    std::string key = normalize(header_line);
    if (key.empty()) return std::nullopt;
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  // Strips leading numeric enumeration ("3.", "2.1", "4)") and trailing
  // colons, lowercases, and collapses runs of whitespace.
  static std::string normalize(std::string_view line) {
    size_t b = 0, e = line.size();
    while (b < e && detail::is_space(static_cast<unsigned char>(line[b]))) ++b;
    while (e > b && (detail::is_space(static_cast<unsigned char>(line[e - 1])) ||
                     line[e - 1] == ':'))
      --e;
    while (b < e) {
      unsigned char c = static_cast<unsigned char>(line[b]);
      if (std::isdigit(c) || c == '.' || c == ')' || c == '(' || c == '-' ||
          detail::is_space(c))
        ++b;
      else
        break;
    }
    std::string out;
    bool prev_space = false;
    for (size_t i = b; i < e; ++i) {
      unsigned char c = static_cast<unsigned char>(line[i]);
      if (detail::is_space(c)) {
        prev_space = true;
        continue;
      }
      if (prev_space && !out.empty()) out.push_back(' ');
      prev_space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
  }

 private:
  std::map<std::string, Section> map_;
};

struct Sentence {
  size_t begin = 0;  // byte offsets into the original raw text
  size_t end = 0;
  std::string raw;   // the sentence substring
  std::vector<std::string> tokens;
};

struct SectionSpanRange {
  Section section = Section::other;
  size_t begin = 0;  // sentence indices, [begin, end)
  size_t end = 0;
};

// A full text split into sentences with every sentence assigned to exactly
// one canonical section.
struct SectionedDocument {
  std::string citing_paper_id;
  std::vector<Sentence> sentences;
  std::vector<SectionSpanRange> section_spans;  // ordered, disjoint, covering

  Section section_of(size_t sentence_index) const {
    for (const auto& span : section_spans)
      if (sentence_index >= span.begin && sentence_index < span.end)
        return span.section;
    return Section::other;
  }
};

namespace detail {

struct HeaderHit {
  size_t line_begin;  // byte offsets of the header line
  size_t line_end;
  Section section;
};

inline std::vector<HeaderHit> find_headers(std::string_view text,
                                           const SectionSynonyms& synonyms) {
  std::vector<HeaderHit> hits;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    size_t end = (nl == std::string_view::npos) ? text.size() : nl;
    std::string_view line = text.substr(pos, end - pos);
    if (auto section = synonyms.match(line))
      hits.push_back({pos, end, *section});
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return hits;
}

inline void append_sentences(std::string_view text, size_t seg_begin,
                             size_t seg_end, std::vector<Sentence>& out) {
  std::string_view segment = text.substr(seg_begin, seg_end - seg_begin);
  for (const SentenceSpan& span : split_sentences(segment)) {
    Sentence s;
    s.begin = seg_begin + span.begin;
    s.end = seg_begin + span.end;
    s.raw = std::string(text.substr(s.begin, s.end - s.begin));
    s.tokens = tokenize(s.raw);
    out.push_back(std::move(s));
  }
}

}  // namespace detail

// Partitions a raw article text into sentences grouped under canonical
// sections. A recognized header line becomes the first sentence of its
// section; text before the first header (or all text when no header is
// recognized) is "other".
inline SectionedDocument partition_sections(
    const std::string& citing_paper_id, std::string_view raw_text,
    const SectionSynonyms& synonyms = SectionSynonyms()) {
  SectionedDocument doc;
  doc.citing_paper_id = citing_paper_id;

  const auto headers = detail::find_headers(raw_text, synonyms);

  auto close_span = [&doc](Section section, size_t first_sentence) {
    if (doc.sentences.size() > first_sentence)
      doc.section_spans.push_back({section, first_sentence, doc.sentences.size()});
  };

  size_t cursor = 0;
  if (headers.empty()) {
    detail::append_sentences(raw_text, 0, raw_text.size(), doc.sentences);
    close_span(Section::other, 0);
    return doc;
  }

  size_t first = doc.sentences.size();
  detail::append_sentences(raw_text, 0, headers.front().line_begin, doc.sentences);
  close_span(Section::other, first);

  for (size_t h = 0; h < headers.size(); ++h) {
    const auto& hit = headers[h];
    size_t body_end =
        (h + 1 < headers.size()) ? headers[h + 1].line_begin : raw_text.size();
    first = doc.sentences.size();
    // header line as its own sentence
    detail::append_sentences(raw_text, hit.line_begin, hit.line_end, doc.sentences);
    detail::append_sentences(raw_text, hit.line_end, body_end, doc.sentences);
    close_span(hit.section, first);
    cursor = body_end;
  }
  (void)cursor;
  return doc;
}

// ---------------------------------------------------------------------------
// Citation occurrences
// ---------------------------------------------------------------------------

struct CitationOccurrence {
  size_t sentence_index = 0;
  Section section = Section::other;
  std::string match_text;  // matched surname token; empty for the
                           // context-overlap inclusion
};

// Surname used for matching: the last whitespace-separated word of the
// author string, reduced to its final token ("John Smith" -> "smith").
inline std::string surname_token(std::string_view author) {
  auto tokens = tokenize(author);
  if (tokens.empty()) return {};
  return tokens.back();
}

// Index of the sentence with the highest unique-token overlap with
// `context` (ties -> earliest). nullopt when the context has no tokens or
// the document is empty.
inline std::optional<size_t> best_context_sentence(const SectionedDocument& doc,
                                                   std::string_view context) {
  auto ctx_tokens = tokenize(context);
  if (ctx_tokens.empty() || doc.sentences.empty()) return std::nullopt;
  std::unordered_set<std::string> ctx(ctx_tokens.begin(), ctx_tokens.end());
  size_t best_idx = 0;
  size_t best_overlap = 0;
  bool found = false;
  for (size_t i = 0; i < doc.sentences.size(); ++i) {
    std::unordered_set<std::string> seen;
    size_t overlap = 0;
    for (const std::string& t : doc.sentences[i].tokens)
      if (ctx.count(t) && seen.insert(t).second) ++overlap;
    if (!found || overlap > best_overlap) {
      best_idx = i;
      best_overlap = overlap;
      found = true;
    }
  }
  return best_idx;
}

// Every sentence containing the cited first author's surname as a whole
// token, plus the sentence best matching the citation context. Sorted by
// sentence index, deduplicated (surname match wins the match_text).
inline std::vector<CitationOccurrence> locate_citation_occurrences(
    const SectionedDocument& doc, std::string_view cited_author,
    std::string_view context) {
  std::string surname = surname_token(cited_author);
  bool have_context = !tokenize(context).empty();
  if (surname.empty() && !have_context)
    throw Error("locate_citation_occurrences: empty cited_author and empty context");

  std::vector<CitationOccurrence> occurrences;
  for (size_t i = 0; i < doc.sentences.size(); ++i) {
    if (surname.empty()) break;
    const auto& tokens = doc.sentences[i].tokens;
    if (std::find(tokens.begin(), tokens.end(), surname) != tokens.end())
      occurrences.push_back({i, doc.section_of(i), surname});
  }

  if (have_context) {
    if (auto ctx_idx = best_context_sentence(doc, context)) {
      bool already = std::any_of(
          occurrences.begin(), occurrences.end(),
          [&](const CitationOccurrence& o) { return o.sentence_index == *ctx_idx; });
      if (!already)
        occurrences.push_back({*ctx_idx, doc.section_of(*ctx_idx), ""});
    }
  }

  std::sort(occurrences.begin(), occurrences.end(),
            [](const CitationOccurrence& a, const CitationOccurrence& b) {
              return a.sentence_index < b.sentence_index;
            });
  return occurrences;
}

}  // namespace citecat::text
