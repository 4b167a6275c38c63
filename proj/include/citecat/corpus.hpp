#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "citecat/error.hpp"
#include "citecat/io.hpp"

// Data model for citation records, full texts and auxiliary scaffold
// examples, plus leakage-free grouped splitting.
namespace citecat::corpus {

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

// The six citation purposes, in the documented label order used everywhere
// (class indices, probability columns, argmax tie-breaking).
enum class PurposeLabel {
  BACKGROUND = 0,
  USES = 1,
  COMPARES_CONTRASTS = 2,
  MOTIVATION = 3,
  EXTENSION = 4,
  FUTURE = 5,
};

inline constexpr size_t kNumPurposeLabels = 6;

inline constexpr std::array<const char*, kNumPurposeLabels> kPurposeLabelNames = {
    "BACKGROUND", "USES", "COMPARES_CONTRASTS", "MOTIVATION", "EXTENSION", "FUTURE"};

inline const char* to_string(PurposeLabel label) {
  return kPurposeLabelNames[static_cast<size_t>(label)];
}

inline std::optional<PurposeLabel> parse_purpose_label(std::string_view text) {
  for (size_t i = 0; i < kNumPurposeLabels; ++i)
    if (text == kPurposeLabelNames[i]) return static_cast<PurposeLabel>(i);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct CitationRecord {
  std::string record_id;
  std::string citing_paper_id;
  std::string citing_title;
  std::string citing_author;
  std::string cited_title;
  std::string cited_author;
  std::string citation_context;  // the sentence containing the citation
  std::optional<PurposeLabel> label;

  bool operator==(const CitationRecord&) const = default;
};

struct FullTextDocument {
  std::string citing_paper_id;
  std::string raw_text;
};

struct WorthinessExample {
  std::string sentence;
  bool has_citation = false;
};

// Scaffold section labels (distinct from the coarser full-text partition).
inline constexpr std::array<const char*, 7> kScaffoldSectionNames = {
    "introduction", "methods", "results", "discussion",
    "related_work", "conclusion",  "other"};

struct SectionExample {
  std::string sentence;
  int section_label = 0;  // index into kScaffoldSectionNames

  const char* section_name() const { return kScaffoldSectionNames[static_cast<size_t>(section_label)]; }
};

inline std::optional<int> parse_scaffold_section(std::string_view name) {
  for (size_t i = 0; i < kScaffoldSectionNames.size(); ++i)
    if (name == kScaffoldSectionNames[i]) return static_cast<int>(i);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

enum class RecordFormat { jsonl, csv };

namespace detail {

inline void validate_record(const CitationRecord& r, size_t line_no) {
  if (r.record_id.empty())
    throw ConfigError("line " + std::to_string(line_no) + ": empty record_id");
  if (r.citation_context.empty())
    throw ConfigError("line " + std::to_string(line_no) + ": record \"" +
                      r.record_id + "\" has empty citation_context");
}

inline std::vector<CitationRecord> load_jsonl_records(const std::string& content,
                                                      const std::string& origin) {
  std::vector<CitationRecord> records;
  const auto lines = io::split_lines(content);
  for (size_t i = 0; i < lines.size(); ++i) {
    const size_t line_no = i + 1;
    if (lines[i].empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(origin + " line " + std::to_string(line_no) +
                        ": invalid JSON: " + e.what());
    }
    if (!row.is_object())
      throw ConfigError(origin + " line " + std::to_string(line_no) +
                        ": expected a JSON object");
    CitationRecord r;
    auto get_string = [&](const char* field, std::string& out, bool required) {
      auto it = row.find(field);
      if (it == row.end() || it->is_null()) {
        if (required)
          throw ConfigError(origin + " line " + std::to_string(line_no) +
                            ": missing field \"" + field + "\"");
        return;
      }
      if (!it->is_string())
        throw ConfigError(origin + " line " + std::to_string(line_no) +
                          ": field \"" + field + "\" must be a string");
      out = it->get<std::string>();
    };
    get_string("record_id", r.record_id, true);
    get_string("citing_paper_id", r.citing_paper_id, true);
    get_string("citing_title", r.citing_title, false);
    get_string("citing_author", r.citing_author, false);
    get_string("cited_title", r.cited_title, false);
    get_string("cited_author", r.cited_author, false);
    get_string("citation_context", r.citation_context, true);
    std::string label_text;
    get_string("label", label_text, false);
    if (!label_text.empty()) {
      auto label = parse_purpose_label(label_text);
      if (!label)
        throw ConfigError(origin + " line " + std::to_string(line_no) +
                          ": unknown label \"" + label_text + "\"");
      r.label = *label;
    }
    validate_record(r, line_no);
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<CitationRecord> load_csv_records(const std::string& content,
                                                    const std::string& origin) {
  const auto lines = io::split_lines(content);
  if (lines.empty()) return {};
  const auto header = io::csv_parse_line(lines[0], 1);
  std::map<std::string, size_t> columns;
  for (size_t c = 0; c < header.size(); ++c) columns[header[c]] = c;
  for (const char* required : {"record_id", "citing_paper_id", "citation_context"})
    if (!columns.count(required))
      throw ConfigError(origin + ": header is missing column \"" +
                        std::string(required) + "\"");

  auto cell = [&](const std::vector<std::string>& row, const char* name) -> std::string {
    auto it = columns.find(name);
    if (it == columns.end() || it->second >= row.size()) return {};
    return row[it->second];
  };

  std::vector<CitationRecord> records;
  for (size_t i = 1; i < lines.size(); ++i) {
    const size_t line_no = i + 1;
    if (lines[i].empty()) continue;
    const auto row = io::csv_parse_line(lines[i], line_no);
    if (row.size() > header.size())
      throw ConfigError(origin + " line " + std::to_string(line_no) + ": row has " +
                        std::to_string(row.size()) + " fields, header has " +
                        std::to_string(header.size()));
    CitationRecord r;
    r.record_id = cell(row, "record_id");
    r.citing_paper_id = cell(row, "citing_paper_id");
    r.citing_title = cell(row, "citing_title");
    r.citing_author = cell(row, "citing_author");
    r.cited_title = cell(row, "cited_title");
    r.cited_author = cell(row, "cited_author");
    r.citation_context = cell(row, "citation_context");
    std::string label_text = cell(row, "label");
    if (!label_text.empty()) {
      auto label = parse_purpose_label(label_text);
      if (!label)
        throw ConfigError(origin + " line " + std::to_string(line_no) +
                          ": unknown label \"" + label_text + "\"");
      r.label = *label;
    }
    validate_record(r, line_no);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace detail

// Loads citation records from a JSONL or CSV file, in file order. The label
// field/column is optional per row; any present value must be one of the six
// purpose labels. Duplicate record_ids are rejected.
inline std::vector<CitationRecord> load_citation_records(
    const std::filesystem::path& path, RecordFormat format) {
  const std::string content = io::read_file(path);
  if (size_t bad = io::utf8_invalid_at(content); bad != std::string_view::npos)
    throw ConfigError(path.string() + ": invalid UTF-8 at byte " + std::to_string(bad));
  auto records = (format == RecordFormat::jsonl)
                     ? detail::load_jsonl_records(content, path.string())
                     : detail::load_csv_records(content, path.string());
  std::unordered_set<std::string> seen;
  for (const auto& r : records)
    if (!seen.insert(r.record_id).second)
      throw ConfigError(path.string() + ": duplicate record_id \"" + r.record_id + "\"");
  return records;
}

// Format inferred from the extension: ".csv" -> csv, anything else -> jsonl.
inline std::vector<CitationRecord> load_citation_records(const std::filesystem::path& path) {
  RecordFormat fmt = (path.extension() == ".csv") ? RecordFormat::csv : RecordFormat::jsonl;
  return load_citation_records(path, fmt);
}

inline std::string to_jsonl(const std::vector<CitationRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json row{
        {"record_id", r.record_id},
        {"citing_paper_id", r.citing_paper_id},
        {"citing_title", r.citing_title},
        {"citing_author", r.citing_author},
        {"cited_title", r.cited_title},
        {"cited_author", r.cited_author},
        {"citation_context", r.citation_context},
    };
    if (r.label) row["label"] = to_string(*r.label);
    out += row.dump();
    out.push_back('\n');
  }
  return out;
}

inline void save_citation_records(const std::vector<CitationRecord>& records,
                                  const std::filesystem::path& path) {
  io::write_file(path, to_jsonl(records));
}

// Loads every "<citing_paper_id>.txt" under `dir`. Missing files for
// referenced ids are fine at this level; features degrade later.
inline std::map<std::string, FullTextDocument> load_fulltexts(
    const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw ConfigError("fulltext directory does not exist: " + dir.string());
  std::map<std::string, FullTextDocument> docs;
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& path : paths) {
    std::string content = io::read_file(path);
    if (!io::is_valid_utf8(content))
      throw Error(path.filename().string() + ": invalid UTF-8");
    std::string id = path.stem().string();
    docs[id] = FullTextDocument{id, std::move(content)};
  }
  return docs;
}

enum class ScaffoldTask { worthiness, section };

inline std::vector<WorthinessExample> load_worthiness_examples(
    const std::filesystem::path& path) {
  std::vector<WorthinessExample> out;
  const auto lines = io::split_lines(io::read_file(path));
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const size_t line_no = i + 1;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": invalid JSON: " + e.what());
    }
    WorthinessExample ex;
    if (!row.contains("sentence") || !row["sentence"].is_string() ||
        row["sentence"].get<std::string>().empty())
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": \"sentence\" must be a non-empty string");
    if (!row.contains("has_citation") || !row["has_citation"].is_boolean())
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": \"has_citation\" must be a boolean");
    ex.sentence = row["sentence"].get<std::string>();
    ex.has_citation = row["has_citation"].get<bool>();
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<SectionExample> load_section_examples(
    const std::filesystem::path& path) {
  std::vector<SectionExample> out;
  const auto lines = io::split_lines(io::read_file(path));
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const size_t line_no = i + 1;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": invalid JSON: " + e.what());
    }
    SectionExample ex;
    if (!row.contains("sentence") || !row["sentence"].is_string() ||
        row["sentence"].get<std::string>().empty())
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": \"sentence\" must be a non-empty string");
    if (!row.contains("section_label") || !row["section_label"].is_string())
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": \"section_label\" must be a string");
    const std::string name = row["section_label"].get<std::string>();
    auto label = parse_scaffold_section(name);
    if (!label)
      throw ConfigError(path.string() + " line " + std::to_string(line_no) +
                        ": unknown section_label \"" + name + "\"");
    ex.sentence = row["sentence"].get<std::string>();
    ex.section_label = *label;
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grouped splitting
// ---------------------------------------------------------------------------

struct SplitAssignment {
  std::set<std::string> train_ids;  // record ids
  std::set<std::string> val_ids;
  uint64_t seed = 0;
};

// Core split rule over (id, group) pairs, shared with the TF-IDF probe.
//
// Rule (fixed so it can be re-derived independently): collect the distinct
// group keys, sort them lexicographically, shuffle with a Fisher-Yates pass
// driven by std::mt19937_64(seed) using j = gen() % (i + 1) for
// i = n-1 .. 1, then send the first ceil(val_fraction * n_groups) groups
// (clamped to [1, n_groups - 1]) to validation.
inline SplitAssignment grouped_split_ids(
    const std::vector<std::pair<std::string, std::string>>& id_group_pairs,
    double val_fraction, uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must lie in (0,1)");

  std::set<std::string> group_set;
  for (const auto& [id, group] : id_group_pairs) group_set.insert(group);
  std::vector<std::string> groups(group_set.begin(), group_set.end());
  if (groups.size() < 2)
    throw ConfigError("grouped split needs at least 2 distinct groups, got " +
                      std::to_string(groups.size()));

  std::mt19937_64 gen(seed);
  for (size_t i = groups.size() - 1; i >= 1; --i) {
    size_t j = static_cast<size_t>(gen() % (i + 1));
    std::swap(groups[i], groups[j]);
  }

  size_t k = static_cast<size_t>(
      std::ceil(val_fraction * static_cast<double>(groups.size())));
  k = std::min(std::max<size_t>(k, 1), groups.size() - 1);

  std::unordered_set<std::string> val_groups(groups.begin(),
                                             groups.begin() + static_cast<long>(k));
  SplitAssignment split;
  split.seed = seed;
  for (const auto& [id, group] : id_group_pairs) {
    if (val_groups.count(group)) split.val_ids.insert(id);
    else split.train_ids.insert(id);
  }
  return split;
}

// Deterministic train/validation split keeping all records of a citing
// paper on the same side. Requires labeled records.
inline SplitAssignment grouped_split(const std::vector<CitationRecord>& records,
                                     double val_fraction, uint64_t seed) {
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label)
      throw ConfigError("grouped_split: record \"" + r.record_id + "\" is unlabeled");
    pairs.emplace_back(r.record_id, r.citing_paper_id);
  }
  return grouped_split_ids(pairs, val_fraction, seed);
}

}  // namespace citecat::corpus
