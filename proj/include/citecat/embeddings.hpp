#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "citecat/error.hpp"
#include "citecat/io.hpp"

// Static word vectors (published text format) and the trainable second
// channel concatenated with them.
namespace citecat::emb {

// Frozen lookup table loaded from "token v1 v2 ... vd" lines. Unknown
// tokens map to the component-wise mean of all loaded vectors.
class WordVectorTable {
 public:
  size_t dimension() const { return dim_; }
  size_t size() const { return vectors_.size(); }

  const std::vector<double>& lookup(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return unk_;
    return vectors_[it->second];
  }

  bool contains(std::string_view token) const {
    return index_.count(std::string(token)) > 0;
  }

  const std::vector<double>& unk() const { return unk_; }

  friend WordVectorTable load_word_vectors(const std::filesystem::path&,
                                           std::optional<size_t>);

 private:
  size_t dim_ = 0;
  std::unordered_map<std::string, size_t> index_;
  std::vector<std::vector<double>> vectors_;
  std::vector<double> unk_;
};

inline WordVectorTable load_word_vectors(const std::filesystem::path& path,
                                         std::optional<size_t> expected_dim = std::nullopt) {
  WordVectorTable table;
  const auto lines = io::split_lines(io::read_file(path));
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) continue;
    const size_t line_no = i + 1;

    size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0)
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": expected \"token v1 v2 ...\"");
    std::string token = line.substr(0, sp);

    std::vector<double> values;
    const char* p = line.c_str() + sp;
    char* end = nullptr;
    while (*p) {
      while (*p == ' ' || *p == '\t') ++p;
      if (!*p) break;
      double v = std::strtod(p, &end);
      if (end == p)
        throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                          ": malformed number");
      values.push_back(v);
      p = end;
    }
    if (values.empty())
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": no vector components");
    if (table.dim_ == 0) {
      table.dim_ = values.size();
      if (expected_dim && *expected_dim != table.dim_)
        throw ConfigError(path.string() + ": dimension " + std::to_string(table.dim_) +
                          " does not match expected " + std::to_string(*expected_dim));
    } else if (values.size() != table.dim_) {
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": dimension " + std::to_string(values.size()) +
                        " differs from earlier lines (" + std::to_string(table.dim_) + ")");
    }
    if (!table.index_.emplace(token, table.vectors_.size()).second)
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": duplicate token \"" + token + "\"");
    table.vectors_.push_back(std::move(values));
  }
  if (table.vectors_.empty())
    throw ConfigError(path.string() + ": no word vectors found");

  table.unk_.assign(table.dim_, 0.0);
  for (const auto& v : table.vectors_)
    for (size_t d = 0; d < table.dim_; ++d) table.unk_[d] += v[d];
  for (double& x : table.unk_) x /= static_cast<double>(table.vectors_.size());
  return table;
}

// Trainable embedding channel: a (V + 1) x d matrix whose last row is the
// UNK entry. The matrix is owned elsewhere during training; this type is
// the standalone form used for encoding and tests.
struct TrainableEmbedding {
  std::unordered_map<std::string, size_t> vocabulary;  // token -> row
  size_t dimension = 0;
  std::vector<double> matrix;  // (vocabulary.size() + 1) x dimension, row-major

  size_t rows() const { return vocabulary.size() + 1; }
  size_t unk_row() const { return vocabulary.size(); }

  size_t row_of(std::string_view token) const {
    auto it = vocabulary.find(std::string(token));
    return it == vocabulary.end() ? unk_row() : it->second;
  }

  const double* row(size_t r) const { return matrix.data() + r * dimension; }
};

// Per-token concatenation [static(token) ; trainable(token)].
inline std::vector<std::vector<double>> encode_tokens(
    const std::vector<std::string>& tokens, const WordVectorTable& statics,
    const TrainableEmbedding& trainable) {
  if (tokens.empty()) throw Error("encode_tokens: empty token list");
  std::vector<std::vector<double>> out;
  out.reserve(tokens.size());
  for (const std::string& token : tokens) {
    const auto& s = statics.lookup(token);
    const double* t = trainable.row(trainable.row_of(token));
    std::vector<double> x;
    x.reserve(statics.dimension() + trainable.dimension);
    x.insert(x.end(), s.begin(), s.end());
    x.insert(x.end(), t, t + trainable.dimension);
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace citecat::emb
