#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "citecat/corpus.hpp"
#include "citecat/error.hpp"
#include "citecat/textproc.hpp"

// The nine hand-generated scalar features computed per citation record.
namespace citecat::feat {

inline constexpr size_t kNumHandFeatures = 9;

// Column order is fixed and mirrored by the featurize CLI output.
inline constexpr std::array<const char*, kNumHandFeatures> kHandFeatureNames = {
    "n_cit_full",      "n_cit_intro",  "n_cit_methods",
    "n_cit_results",   "n_cit_discussion",
    "rel_pos_context", "rel_pos_first",
    "contrast_vocab_flag", "title_overlap"};

struct HandFeatureVector {
  double n_cit_full = 0;
  double n_cit_intro = 0;
  double n_cit_methods = 0;
  double n_cit_results = 0;
  double n_cit_discussion = 0;
  double rel_pos_context = 0;
  double rel_pos_first = 0;
  double contrast_vocab_flag = 0;
  double title_overlap = 0;

  std::array<double, kNumHandFeatures> as_array() const {
    return {n_cit_full,      n_cit_intro,   n_cit_methods,
            n_cit_results,   n_cit_discussion,
            rel_pos_context, rel_pos_first,
            contrast_vocab_flag, title_overlap};
  }

  bool operator==(const HandFeatureVector&) const = default;
};

// ---------------------------------------------------------------------------
// Section citation counts
// ---------------------------------------------------------------------------

struct SectionCounts {
  size_t full = 0;  // every occurrence, including section "other"
  size_t intro = 0;
  size_t methods = 0;
  size_t results = 0;
  size_t discussion = 0;
};

inline SectionCounts section_citation_counts(
    const std::vector<text::CitationOccurrence>& occurrences) {
  SectionCounts counts;
  for (const auto& occ : occurrences) {
    ++counts.full;
    switch (occ.section) {
      case text::Section::introduction: ++counts.intro; break;
      case text::Section::methods: ++counts.methods; break;
      case text::Section::results: ++counts.results; break;
      case text::Section::discussion: ++counts.discussion; break;
      case text::Section::other: break;
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Relative positions
// ---------------------------------------------------------------------------

// Positions use the (index + 1) / sentence_count convention so values lie
// in (0, 1] and a single-sentence document is well defined.
inline std::pair<double, double> relative_positions(
    const std::vector<text::CitationOccurrence>& occurrences,
    size_t context_sentence_index, size_t sentence_count) {
  if (occurrences.empty())
    throw Error("relative_positions: empty occurrence list");
  if (sentence_count == 0) throw Error("relative_positions: sentence_count == 0");
  if (context_sentence_index >= sentence_count)
    throw Error("relative_positions: context sentence index out of range");
  size_t first = occurrences.front().sentence_index;
  for (const auto& occ : occurrences)
    if (occ.sentence_index >= sentence_count)
      throw Error("relative_positions: occurrence index out of range");
  double denom = static_cast<double>(sentence_count);
  double rel_context = static_cast<double>(context_sentence_index + 1) / denom;
  double rel_first = static_cast<double>(first + 1) / denom;
  return {rel_context, rel_first};
}

// ---------------------------------------------------------------------------
// Contrast vocabulary
// ---------------------------------------------------------------------------

// The 13 phrases screened for COMPARES_CONTRASTS, also shipped verbatim as
// data/contrast_vocab.txt (kept in sync by a test).
inline const std::vector<std::string>& builtin_contrast_vocab() {
  static const std::vector<std::string> entries = {
      "recently", "recent",   "compared", "comparison", "similar",
      "studies",  "reported", "others",   "normally",   "showed",
      "in line with", "despite", "relationship",
  };
  return entries;
}

class ContrastVocabulary {
 public:
  ContrastVocabulary() : ContrastVocabulary(builtin_contrast_vocab()) {}
  explicit ContrastVocabulary(const std::vector<std::string>& entries) {
    for (const std::string& e : entries) {
      auto tokens = text::tokenize(e);
      if (tokens.empty()) continue;
      if (tokens.size() == 1) singles_.insert(tokens[0]);
      else phrases_.push_back(std::move(tokens));
    }
  }

  static ContrastVocabulary load(const std::filesystem::path& path) {
    std::vector<std::string> entries;
    for (const std::string& line : io::split_lines(io::read_file(path)))
      if (!line.empty()) entries.push_back(line);
    return ContrastVocabulary(entries);
  }

  // 1 iff any entry occurs in the text: single words as whole tokens,
  // multi-word entries as consecutive token runs.
  int flag(std::string_view context) const {
    auto tokens = text::tokenize(context);
    for (const std::string& t : tokens)
      if (singles_.count(t)) return 1;
    for (const auto& phrase : phrases_) {
      if (phrase.size() > tokens.size()) continue;
      for (size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
        if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<long>(i)))
          return 1;
      }
    }
    return 0;
  }

 private:
  std::unordered_set<std::string> singles_;
  std::vector<std::vector<std::string>> phrases_;
};

inline int contrast_vocab_flag(std::string_view context) {
  static const ContrastVocabulary vocab;
  return vocab.flag(context);
}

// ---------------------------------------------------------------------------
// Title overlap
// ---------------------------------------------------------------------------

// Number of distinct non-stop-word tokens shared by the two titles.
inline size_t title_overlap(std::string_view citing_title, std::string_view cited_title,
                            const text::StopWordList& stop_words = text::StopWordList::builtin()) {
  std::unordered_set<std::string> citing;
  for (const std::string& t : text::tokenize(citing_title))
    if (!stop_words.contains(t)) citing.insert(t);
  std::unordered_set<std::string> counted;
  size_t overlap = 0;
  for (const std::string& t : text::tokenize(cited_title))
    if (citing.count(t) && counted.insert(t).second) ++overlap;
  return overlap;
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

struct FeatureDiagnostics {
  size_t missing_fulltext = 0;  // records featurized without a document
  size_t no_occurrences = 0;    // documents where nothing matched
};

// Composes the hand features for one record. Without a full-text document
// the seven count/position features stay 0 and only the context/title
// features are informative; this never fails so prediction works on
// context-only input.
inline HandFeatureVector extract_hand_features(
    const corpus::CitationRecord& record,
    const text::SectionedDocument* doc,
    const ContrastVocabulary& contrast_vocab = ContrastVocabulary(),
    const text::StopWordList& stop_words = text::StopWordList::builtin(),
    FeatureDiagnostics* diagnostics = nullptr) {
  HandFeatureVector v;
  v.contrast_vocab_flag = contrast_vocab.flag(record.citation_context);
  v.title_overlap = static_cast<double>(
      title_overlap(record.citing_title, record.cited_title, stop_words));

  if (doc == nullptr || doc->sentences.empty()) {
    if (diagnostics) ++diagnostics->missing_fulltext;
    return v;
  }

  std::vector<text::CitationOccurrence> occurrences;
  try {
    occurrences = text::locate_citation_occurrences(*doc, record.cited_author,
                                                    record.citation_context);
  } catch (const Error&) {
    occurrences.clear();  // nothing to match on; degrade
  }
  if (occurrences.empty()) {
    if (diagnostics) ++diagnostics->no_occurrences;
    return v;
  }

  SectionCounts counts = section_citation_counts(occurrences);
  v.n_cit_full = static_cast<double>(counts.full);
  v.n_cit_intro = static_cast<double>(counts.intro);
  v.n_cit_methods = static_cast<double>(counts.methods);
  v.n_cit_results = static_cast<double>(counts.results);
  v.n_cit_discussion = static_cast<double>(counts.discussion);

  auto ctx_idx = text::best_context_sentence(*doc, record.citation_context);
  size_t context_sentence =
      ctx_idx ? *ctx_idx : occurrences.front().sentence_index;
  auto [rel_context, rel_first] =
      relative_positions(occurrences, context_sentence, doc->sentences.size());
  v.rel_pos_context = rel_context;
  v.rel_pos_first = rel_first;
  return v;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

// Per-feature mean and population standard deviation, fitted on the
// training split only. Zero-variance features standardize to 0.
struct StandardizerStats {
  std::array<double, kNumHandFeatures> mean{};
  std::array<double, kNumHandFeatures> std{};
  std::array<bool, kNumHandFeatures> zero_variance{};
};

inline StandardizerStats fit_standardizer(const std::vector<HandFeatureVector>& vectors) {
  if (vectors.empty()) throw Error("fit_standardizer: empty input");
  StandardizerStats stats;
  const double n = static_cast<double>(vectors.size());
  for (const auto& v : vectors) {
    auto a = v.as_array();
    for (size_t f = 0; f < kNumHandFeatures; ++f) stats.mean[f] += a[f];
  }
  for (size_t f = 0; f < kNumHandFeatures; ++f) stats.mean[f] /= n;
  for (const auto& v : vectors) {
    auto a = v.as_array();
    for (size_t f = 0; f < kNumHandFeatures; ++f) {
      double d = a[f] - stats.mean[f];
      stats.std[f] += d * d;
    }
  }
  for (size_t f = 0; f < kNumHandFeatures; ++f) {
    stats.std[f] = std::sqrt(stats.std[f] / n);
    if (stats.std[f] == 0.0) {
      stats.zero_variance[f] = true;
      stats.std[f] = 1.0;  // keeps standardize() a plain formula
    }
  }
  return stats;
}

inline std::array<double, kNumHandFeatures> standardize(const HandFeatureVector& v,
                                                        const StandardizerStats& stats) {
  std::array<double, kNumHandFeatures> out{};
  auto a = v.as_array();
  for (size_t f = 0; f < kNumHandFeatures; ++f)
    out[f] = stats.zero_variance[f] ? 0.0 : (a[f] - stats.mean[f]) / stats.std[f];
  return out;
}

}  // namespace citecat::feat
