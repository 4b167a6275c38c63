#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "citecat/error.hpp"
#include "citecat/io.hpp"
#include "citecat/textproc.hpp"

// TF-IDF over citation contexts extended by neighboring sentences.
// idf uses the smoothed form ln((1+n)/(1+df)) + 1 with natural log and raw
// occurrence counts for tf.
namespace citecat::tfidf {

struct SparseVector {
  size_t dim = 0;
  std::vector<std::pair<size_t, double>> entries;  // strictly increasing indices

  double norm2() const {
    double s = 0;
    for (const auto& [i, v] : entries) s += v * v;
    return std::sqrt(s);
  }
};

class TfidfModel {
 public:
  TfidfModel() = default;

  size_t vocabulary_size() const { return tokens_.size(); }
  size_t fitted_documents() const { return n_; }
  size_t max_features() const { return max_features_; }

  // nullopt for out-of-vocabulary tokens.
  std::optional<size_t> column(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  size_t df(size_t column) const { return df_[column]; }
  const std::string& token(size_t column) const { return tokens_[column]; }

  double idf(size_t column) const {
    return std::log((1.0 + static_cast<double>(n_)) /
                    (1.0 + static_cast<double>(df_[column]))) + 1.0;
  }

  friend TfidfModel fit_tfidf(const std::vector<std::string>& texts, size_t max_features);
  friend TfidfModel model_from_entries(size_t n, size_t max_features,
                                       std::vector<std::pair<std::string, size_t>> entries);

 private:
  size_t n_ = 0;
  size_t max_features_ = 0;
  std::vector<std::string> tokens_;      // by column
  std::vector<size_t> df_;               // by column
  std::unordered_map<std::string, size_t> index_;
};

// Rebuilds a model from persisted (token, df) pairs ordered by column.
inline TfidfModel model_from_entries(size_t n, size_t max_features,
                                     std::vector<std::pair<std::string, size_t>> entries) {
  TfidfModel m;
  m.n_ = n;
  m.max_features_ = max_features;
  for (auto& [token, df] : entries) {
    if (df < 1 || df > n)
      throw ConfigError("tfidf model: df out of range for token \"" + token + "\"");
    m.index_[token] = m.tokens_.size();
    m.tokens_.push_back(std::move(token));
    m.df_.push_back(df);
  }
  return m;
}

// Fits document frequencies over `texts`. Keeps the max_features tokens
// with highest df, ties broken lexicographically; columns are assigned in
// lexicographic token order.
inline TfidfModel fit_tfidf(const std::vector<std::string>& texts, size_t max_features) {
  if (texts.empty()) throw Error("fit_tfidf: empty corpus");
  if (max_features == 0) throw Error("fit_tfidf: max_features must be >= 1");

  std::map<std::string, size_t> df;
  for (const std::string& text : texts) {
    std::unordered_set<std::string> seen;
    for (std::string& token : text::tokenize(text))
      if (seen.insert(token).second) ++df[token];
  }

  std::vector<std::pair<std::string, size_t>> ranked(df.begin(), df.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > max_features) ranked.resize(max_features);
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  TfidfModel m;
  m.n_ = texts.size();
  m.max_features_ = max_features;
  for (auto& [token, count] : ranked) {
    m.index_[token] = m.tokens_.size();
    m.tokens_.push_back(token);
    m.df_.push_back(count);
  }
  return m;
}

// value(t) = tf(t, text) * idf(t); out-of-vocabulary tokens are ignored.
inline SparseVector transform(const TfidfModel& model, std::string_view text) {
  std::map<size_t, size_t> tf;
  for (const std::string& token : text::tokenize(text))
    if (auto col = model.column(token)) ++tf[*col];
  SparseVector v;
  v.dim = model.vocabulary_size();
  v.entries.reserve(tf.size());
  for (const auto& [col, count] : tf)
    v.entries.emplace_back(col, static_cast<double>(count) * model.idf(col));
  return v;
}

// v / ||v||2; the zero vector is returned unchanged.
inline SparseVector l2_normalize(const SparseVector& v) {
  double norm = v.norm2();
  if (norm == 0.0) return v;
  SparseVector out;
  out.dim = v.dim;
  out.entries.reserve(v.entries.size());
  for (const auto& [i, value] : v.entries) out.entries.emplace_back(i, value / norm);
  return out;
}

// The citation sentence widened by its neighbors (clamped at document
// boundaries), joined with single spaces.
inline std::string context_window(const text::SectionedDocument& doc,
                                  const text::CitationOccurrence& occurrence) {
  if (occurrence.sentence_index >= doc.sentences.size())
    throw Error("context_window: occurrence outside document");
  size_t i = occurrence.sentence_index;
  size_t first = (i == 0) ? 0 : i - 1;
  size_t last = std::min(i + 1, doc.sentences.size() - 1);
  std::string out;
  for (size_t s = first; s <= last; ++s) {
    if (!out.empty()) out.push_back(' ');
    out += doc.sentences[s].raw;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: tfidf.json
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const TfidfModel& model) {
  nlohmann::json entries = nlohmann::json::array();
  for (size_t c = 0; c < model.vocabulary_size(); ++c)
    entries.push_back({{"token", model.token(c)}, {"df", model.df(c)}, {"index", c}});
  return {{"n", model.fitted_documents()},
          {"max_features", model.max_features()},
          {"entries", entries}};
}

inline TfidfModel from_json(const nlohmann::json& j) {
  try {
    size_t n = j.at("n").get<size_t>();
    size_t max_features = j.at("max_features").get<size_t>();
    std::vector<std::pair<std::string, size_t>> entries;
    entries.resize(j.at("entries").size());
    for (const auto& e : j.at("entries")) {
      size_t index = e.at("index").get<size_t>();
      if (index >= entries.size())
        throw ConfigError("tfidf model: column index out of range");
      entries[index] = {e.at("token").get<std::string>(), e.at("df").get<size_t>()};
    }
    return model_from_entries(n, max_features, std::move(entries));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("tfidf model: malformed JSON: ") + e.what());
  }
}

inline void save(const TfidfModel& model, const std::filesystem::path& path) {
  io::write_file(path, to_json(model).dump(2) + "\n");
}

inline TfidfModel load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace citecat::tfidf
