#pragma once

#include <array>
#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "citecat/corpus.hpp"
#include "citecat/embeddings.hpp"
#include "citecat/error.hpp"
#include "citecat/eval.hpp"
#include "citecat/features.hpp"
#include "citecat/io.hpp"
#include "citecat/metrics.hpp"
#include "citecat/model.hpp"
#include "citecat/textproc.hpp"
#include "citecat/tfidf.hpp"
#include "citecat/version.hpp"

// End-to-end command layer: one JSON run config drives ingestion,
// featurization, training, prediction and the analysis reports. Every
// artifact embeds {tool version, seed, config hash} and contains no
// timestamps, so re-running a command with unchanged inputs reproduces it
// byte for byte.
namespace citecat::pipeline {

namespace fs = std::filesystem;

struct RunConfig {
  fs::path config_dir;  // directory of the config file; anchors relative paths
  fs::path citations;
  std::vector<fs::path> extra_citations;  // appended to the training pool
  fs::path fulltext_dir;                  // empty: feature extraction degrades
  fs::path worthiness;                    // empty: scaffold task unused
  fs::path sections;                      // empty: scaffold task unused
  fs::path word_vectors;
  fs::path out_dir;
  fs::path stop_words;        // empty: built-in list
  fs::path contrast_vocab;    // empty: built-in list
  fs::path section_synonyms;  // empty: built-in table

  size_t tfidf_max_features = 2000;
  bool tfidf_l2_normalize = true;
  double val_fraction = 0.25;
  uint64_t seed = 13;

  size_t h_lstm = 64;
  size_t mlp_hidden = 128;
  size_t d_trainable = 32;

  model::TrainConfig train;  // train.seed mirrors `seed`

  std::string config_hash;  // FNV-1a-64 of config text + effective overrides
};

namespace detail {

inline std::string fmt_double(double x) {
  std::array<char, 64> buf;
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  if (ec != std::errc{}) throw Error("could not format double");
  return std::string(buf.data(), p);
}

inline fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() ? p : base / p;
}

inline void reject_unknown_keys(const nlohmann::json& obj, const char* where,
                                std::initializer_list<const char*> known) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok)
      throw ConfigError(std::string("config: unknown key \"") + key + "\" in " + where);
  }
}

inline void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p))
    throw ConfigError(std::string(what) + " does not exist: " + p.string());
}

}  // namespace detail

// Reads and validates the run config. Relative paths resolve against the
// config file's directory; --seed/--out overrides are applied here so the
// recorded config hash covers the effective run.
inline RunConfig load_run_config(const fs::path& config_path,
                                 std::optional<uint64_t> seed_override = std::nullopt,
                                 std::optional<fs::path> out_override = std::nullopt) {
  std::string raw;
  try {
    raw = io::read_file(config_path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(config_path.string() + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(config_path.string() + ": config must be a JSON object");

  detail::reject_unknown_keys(
      j, "the top level",
      {"citations", "extra_citations", "fulltext_dir", "worthiness", "sections",
       "word_vectors", "out_dir", "stop_words", "contrast_vocab", "section_synonyms",
       "tfidf", "val_fraction", "seed", "model", "train"});

  RunConfig cfg;
  cfg.config_dir = config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");

  auto get_path = [&](const char* key, bool required) -> fs::path {
    if (!j.contains(key)) {
      if (required) throw ConfigError(std::string("config: missing required key \"") + key + "\"");
      return {};
    }
    if (!j.at(key).is_string() || j.at(key).get<std::string>().empty())
      throw ConfigError(std::string("config: \"") + key + "\" must be a non-empty string");
    return detail::resolve(cfg.config_dir, j.at(key).get<std::string>());
  };

  cfg.citations = get_path("citations", true);
  cfg.word_vectors = get_path("word_vectors", true);
  cfg.out_dir = get_path("out_dir", true);
  cfg.fulltext_dir = get_path("fulltext_dir", false);
  cfg.worthiness = get_path("worthiness", false);
  cfg.sections = get_path("sections", false);
  cfg.stop_words = get_path("stop_words", false);
  cfg.contrast_vocab = get_path("contrast_vocab", false);
  cfg.section_synonyms = get_path("section_synonyms", false);

  if (j.contains("extra_citations")) {
    if (!j.at("extra_citations").is_array())
      throw ConfigError("config: \"extra_citations\" must be an array of paths");
    for (const auto& item : j.at("extra_citations")) {
      if (!item.is_string())
        throw ConfigError("config: \"extra_citations\" entries must be strings");
      cfg.extra_citations.push_back(detail::resolve(cfg.config_dir, item.get<std::string>()));
    }
  }

  try {
    if (j.contains("val_fraction")) cfg.val_fraction = j.at("val_fraction").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("tfidf")) {
      const auto& t = j.at("tfidf");
      detail::reject_unknown_keys(t, "\"tfidf\"", {"max_features", "l2_normalize"});
      if (t.contains("max_features")) cfg.tfidf_max_features = t.at("max_features").get<size_t>();
      if (t.contains("l2_normalize")) cfg.tfidf_l2_normalize = t.at("l2_normalize").get<bool>();
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::reject_unknown_keys(m, "\"model\"", {"h_lstm", "mlp_hidden", "d_trainable"});
      if (m.contains("h_lstm")) cfg.h_lstm = m.at("h_lstm").get<size_t>();
      if (m.contains("mlp_hidden")) cfg.mlp_hidden = m.at("mlp_hidden").get<size_t>();
      if (m.contains("d_trainable")) cfg.d_trainable = m.at("d_trainable").get<size_t>();
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::reject_unknown_keys(
          t, "\"train\"",
          {"w_purpose", "w_worthiness", "w_section", "lr", "dropout", "batch_size",
           "max_epochs", "patience", "scaffold_every"});
      auto& tc = cfg.train;
      if (t.contains("w_purpose")) tc.w_purpose = t.at("w_purpose").get<double>();
      if (t.contains("w_worthiness")) tc.w_worthiness = t.at("w_worthiness").get<double>();
      if (t.contains("w_section")) tc.w_section = t.at("w_section").get<double>();
      if (t.contains("lr")) tc.lr = t.at("lr").get<double>();
      if (t.contains("dropout")) tc.dropout = t.at("dropout").get<double>();
      if (t.contains("batch_size")) tc.batch_size = t.at("batch_size").get<size_t>();
      if (t.contains("max_epochs")) tc.max_epochs = t.at("max_epochs").get<size_t>();
      if (t.contains("patience")) tc.patience = t.at("patience").get<size_t>();
      if (t.contains("scaffold_every")) tc.scaffold_every = t.at("scaffold_every").get<size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(config_path.string() + ": " + e.what());
  }

  if (seed_override) cfg.seed = *seed_override;
  if (out_override) cfg.out_dir = *out_override;
  cfg.train.seed = cfg.seed;

  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
    throw ConfigError("config: val_fraction must lie in (0, 1)");
  if (cfg.tfidf_max_features < 1)
    throw ConfigError("config: tfidf.max_features must be >= 1");
  model::validate_train_config(cfg.train);

  detail::require_exists(cfg.citations, "citations file");
  for (const auto& p : cfg.extra_citations) detail::require_exists(p, "extra citations file");
  detail::require_exists(cfg.word_vectors, "word vectors file");
  if (!cfg.fulltext_dir.empty()) detail::require_exists(cfg.fulltext_dir, "fulltext directory");
  if (!cfg.worthiness.empty()) detail::require_exists(cfg.worthiness, "worthiness file");
  if (!cfg.sections.empty()) detail::require_exists(cfg.sections, "sections file");
  if (!cfg.stop_words.empty()) detail::require_exists(cfg.stop_words, "stop words file");
  if (!cfg.contrast_vocab.empty()) detail::require_exists(cfg.contrast_vocab, "contrast vocab file");
  if (!cfg.section_synonyms.empty())
    detail::require_exists(cfg.section_synonyms, "section synonyms file");

  cfg.config_hash = io::fnv1a64_hex(raw + "\nseed=" + std::to_string(cfg.seed) +
                                    "\nout=" + cfg.out_dir.string());
  return cfg;
}

// ---------------------------------------------------------------------------
// Loaded inputs and the derived dataset
// ---------------------------------------------------------------------------

struct LoadedData {
  std::vector<corpus::CitationRecord> records;
  std::map<std::string, text::SectionedDocument> docs;  // by citing_paper_id
  std::vector<corpus::WorthinessExample> worthiness;
  std::vector<corpus::SectionExample> sections;
  emb::WordVectorTable statics;
  text::StopWordList stop_words;
  feat::ContrastVocabulary contrast;
  text::SectionSynonyms synonyms;
};

inline LoadedData load_inputs(const RunConfig& cfg) {
  LoadedData data;
  data.records = corpus::load_citation_records(cfg.citations);
  std::unordered_set<std::string> ids;
  for (const auto& r : data.records) ids.insert(r.record_id);
  for (const auto& extra : cfg.extra_citations) {
    for (auto& r : corpus::load_citation_records(extra)) {
      if (!ids.insert(r.record_id).second)
        throw ConfigError(extra.string() + ": duplicate record_id \"" + r.record_id +
                          "\" across citation files");
      data.records.push_back(std::move(r));
    }
  }

  data.stop_words = cfg.stop_words.empty() ? text::StopWordList::builtin()
                                           : text::StopWordList::load(cfg.stop_words);
  data.contrast = cfg.contrast_vocab.empty() ? feat::ContrastVocabulary()
                                             : feat::ContrastVocabulary::load(cfg.contrast_vocab);
  data.synonyms = cfg.section_synonyms.empty() ? text::SectionSynonyms()
                                               : text::SectionSynonyms::load(cfg.section_synonyms);

  if (!cfg.fulltext_dir.empty()) {
    for (auto& [id, doc] : corpus::load_fulltexts(cfg.fulltext_dir))
      data.docs.emplace(id, text::partition_sections(id, doc.raw_text, data.synonyms));
  }
  if (!cfg.worthiness.empty()) data.worthiness = corpus::load_worthiness_examples(cfg.worthiness);
  if (!cfg.sections.empty()) data.sections = corpus::load_section_examples(cfg.sections);
  data.statics = emb::load_word_vectors(cfg.word_vectors);
  return data;
}

// The fitted, data-derived state a checkpoint carries alongside the weights.
struct FittedState {
  feat::StandardizerStats standardizer;
  tfidf::TfidfModel tfidf_model;
  std::vector<std::string> vocab;  // sorted; trainable row = position, UNK = size
  bool l2_normalize = true;
  model::ModelConfig model_config;
};

// Raw per-record feature material, independent of any fitted state.
struct FeatureTable {
  std::vector<feat::HandFeatureVector> hand;     // per record
  std::vector<std::string> context_windows;      // per record
  feat::FeatureDiagnostics diagnostics;
};

inline FeatureTable build_feature_table(const LoadedData& data) {
  FeatureTable table;
  table.hand.reserve(data.records.size());
  table.context_windows.reserve(data.records.size());
  for (const auto& record : data.records) {
    auto it = data.docs.find(record.citing_paper_id);
    const text::SectionedDocument* doc = it == data.docs.end() ? nullptr : &it->second;
    table.hand.push_back(feat::extract_hand_features(record, doc, data.contrast,
                                                     data.stop_words, &table.diagnostics));
    std::string window = record.citation_context;  // fallback: the bare context
    if (doc != nullptr) {
      if (auto ctx = text::best_context_sentence(*doc, record.citation_context)) {
        text::CitationOccurrence occ;
        occ.sentence_index = *ctx;
        occ.section = doc->section_of(*ctx);
        window = tfidf::context_window(*doc, occ);
      }
    }
    table.context_windows.push_back(std::move(window));
  }
  return table;
}

inline std::vector<size_t> indices_of(const corpus::SplitAssignment& split,
                                      const std::vector<corpus::CitationRecord>& records,
                                      bool val) {
  std::vector<size_t> out;
  for (size_t i = 0; i < records.size(); ++i) {
    bool in_val = split.val_ids.count(records[i].record_id) > 0;
    if (in_val == val) out.push_back(i);
  }
  return out;
}

// Fits standardizer, TF-IDF vocabulary and the trainable token vocabulary on
// the training rows only.
inline FittedState fit_state(const RunConfig& cfg, const LoadedData& data,
                             const FeatureTable& table,
                             const std::vector<size_t>& train_idx) {
  FittedState state;
  std::vector<feat::HandFeatureVector> train_hand;
  std::vector<std::string> train_windows;
  std::set<std::string> vocab_set;
  for (size_t i : train_idx) {
    train_hand.push_back(table.hand[i]);
    train_windows.push_back(table.context_windows[i]);
    for (auto& token : text::tokenize(data.records[i].citation_context))
      vocab_set.insert(std::move(token));
  }
  state.standardizer = feat::fit_standardizer(train_hand);
  state.tfidf_model = tfidf::fit_tfidf(train_windows, cfg.tfidf_max_features);
  state.vocab.assign(vocab_set.begin(), vocab_set.end());
  state.l2_normalize = cfg.tfidf_l2_normalize;

  state.model_config.h_lstm = cfg.h_lstm;
  state.model_config.mlp_hidden = cfg.mlp_hidden;
  state.model_config.d_static = data.statics.dimension();
  state.model_config.d_trainable = cfg.d_trainable;
  state.model_config.vocab_rows = state.vocab.size() + 1;  // + UNK
  state.model_config.n_tfidf = state.tfidf_model.vocabulary_size();
  return state;
}

inline std::vector<double> densify(const tfidf::SparseVector& v) {
  std::vector<double> out(v.dim, 0.0);
  for (const auto& [i, x] : v.entries) out[i] = x;
  return out;
}

inline model::TokenSeq make_token_seq(std::vector<std::string> tokens,
                                      const emb::WordVectorTable& statics,
                                      const std::unordered_map<std::string, size_t>& vocab_index,
                                      size_t unk_row) {
  // A context that tokenizes to nothing still needs one step; feed a single
  // UNK token so the encoder has an input.
  if (tokens.empty()) tokens.push_back("\x01");
  model::TokenSeq seq;
  seq.static_vecs.reserve(tokens.size());
  seq.rows.reserve(tokens.size());
  for (const std::string& token : tokens) {
    seq.static_vecs.push_back(statics.lookup(token));
    auto it = vocab_index.find(token);
    seq.rows.push_back(it == vocab_index.end() ? unk_row : it->second);
  }
  return seq;
}

struct Dataset {
  std::vector<model::PurposeItem> items;  // parallel to data.records
  std::vector<model::ScaffoldItem> worthiness_items;
  std::vector<model::ScaffoldItem> section_items;
};

inline Dataset build_dataset(const LoadedData& data, const FeatureTable& table,
                             const FittedState& state) {
  std::unordered_map<std::string, size_t> vocab_index;
  vocab_index.reserve(state.vocab.size());
  for (size_t i = 0; i < state.vocab.size(); ++i) vocab_index.emplace(state.vocab[i], i);
  const size_t unk_row = state.vocab.size();

  Dataset ds;
  ds.items.reserve(data.records.size());
  for (size_t i = 0; i < data.records.size(); ++i) {
    const auto& record = data.records[i];
    model::PurposeItem item;
    item.tokens = make_token_seq(text::tokenize(record.citation_context), data.statics,
                                 vocab_index, unk_row);
    auto standardized = feat::standardize(table.hand[i], state.standardizer);
    item.hand.assign(standardized.begin(), standardized.end());
    auto vec = tfidf::transform(state.tfidf_model, table.context_windows[i]);
    if (state.l2_normalize) vec = tfidf::l2_normalize(vec);
    item.tfidf = densify(vec);
    item.label = record.label ? static_cast<int>(*record.label) : -1;
    ds.items.push_back(std::move(item));
  }
  for (const auto& ex : data.worthiness) {
    model::ScaffoldItem item;
    item.tokens = make_token_seq(text::tokenize(ex.sentence), data.statics, vocab_index, unk_row);
    item.label = ex.has_citation ? 1 : 0;
    ds.worthiness_items.push_back(std::move(item));
  }
  for (const auto& ex : data.sections) {
    model::ScaffoldItem item;
    item.tokens = make_token_seq(text::tokenize(ex.sentence), data.statics, vocab_index, unk_row);
    item.label = ex.section_label;
    ds.section_items.push_back(std::move(item));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Artifact plumbing
// ---------------------------------------------------------------------------

inline nlohmann::json meta_json(const RunConfig& cfg) {
  return nlohmann::json{{"tool_version", kVersion},
                        {"seed", cfg.seed},
                        {"config_hash", cfg.config_hash}};
}

inline std::string csv_meta_line(const RunConfig& cfg) {
  return std::string("# citecat ") + kVersion + " seed=" + std::to_string(cfg.seed) +
         " config_hash=" + cfg.config_hash + "\n";
}

inline void write_json_artifact(const RunConfig& cfg, const fs::path& path,
                                nlohmann::json body) {
  body["meta"] = meta_json(cfg);
  fs::create_directories(path.parent_path());
  io::write_file(path, body.dump(2) + "\n");
}

inline void write_csv_artifact(const RunConfig& cfg, const fs::path& path,
                               const std::vector<std::string>& header,
                               const std::vector<std::vector<std::string>>& rows) {
  std::string out = csv_meta_line(cfg);
  out += io::csv_join(header) + "\n";
  for (const auto& row : rows) out += io::csv_join(row) + "\n";
  fs::create_directories(path.parent_path());
  io::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  model::ModelParameters params;
  FittedState state;
  uint64_t seed = 0;
};

inline void save_checkpoint(const RunConfig& cfg, const fs::path& path,
                            const Checkpoint& ckpt) {
  nlohmann::json label_order = nlohmann::json::array();
  for (const char* name : corpus::kPurposeLabelNames) label_order.push_back(name);
  nlohmann::json j{
      {"format_version", kCheckpointVersion},
      {"seed", ckpt.seed},
      {"label_order", label_order},
      {"model", model::params_to_json(ckpt.params)},
      {"standardizer",
       {{"mean", ckpt.state.standardizer.mean},
        {"std", ckpt.state.standardizer.std},
        {"zero_variance", ckpt.state.standardizer.zero_variance}}},
      {"tfidf", tfidf::to_json(ckpt.state.tfidf_model)},
      {"tfidf_l2_normalize", ckpt.state.l2_normalize},
      {"vocabulary", ckpt.state.vocab},
  };
  write_json_artifact(cfg, path, std::move(j));
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": invalid checkpoint JSON: " + e.what());
  }
  Checkpoint ckpt;
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion)
      throw Error(path.string() + ": unsupported checkpoint format_version");
    ckpt.seed = j.at("seed").get<uint64_t>();
    const auto labels = j.at("label_order").get<std::vector<std::string>>();
    for (size_t i = 0; i < corpus::kNumPurposeLabels; ++i)
      if (i >= labels.size() || labels[i] != corpus::kPurposeLabelNames[i])
        throw Error(path.string() + ": checkpoint label order does not match this build");
    ckpt.params = model::params_from_json(j.at("model"));
    const auto& st = j.at("standardizer");
    auto mean = st.at("mean").get<std::vector<double>>();
    auto stdv = st.at("std").get<std::vector<double>>();
    auto zv = st.at("zero_variance").get<std::vector<bool>>();
    if (mean.size() != feat::kNumHandFeatures || stdv.size() != feat::kNumHandFeatures ||
        zv.size() != feat::kNumHandFeatures)
      throw Error(path.string() + ": standardizer must cover all hand features");
    for (size_t f = 0; f < feat::kNumHandFeatures; ++f) {
      ckpt.state.standardizer.mean[f] = mean[f];
      ckpt.state.standardizer.std[f] = stdv[f];
      ckpt.state.standardizer.zero_variance[f] = zv[f];
    }
    ckpt.state.tfidf_model = tfidf::from_json(j.at("tfidf"));
    ckpt.state.l2_normalize = j.at("tfidf_l2_normalize").get<bool>();
    ckpt.state.vocab = j.at("vocabulary").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": malformed checkpoint: " + e.what());
  }
  ckpt.state.model_config = ckpt.params.config;
  if (ckpt.state.vocab.size() + 1 != ckpt.params.config.vocab_rows)
    throw Error(path.string() + ": vocabulary size does not match the embedding shape");
  if (ckpt.params.config.use_tfidf &&
      ckpt.state.tfidf_model.vocabulary_size() != ckpt.params.config.n_tfidf)
    throw Error(path.string() + ": TF-IDF vocabulary does not match the model width");
  return ckpt;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void cmd_validate(const RunConfig& cfg, std::ostream& out) {
  LoadedData data = load_inputs(cfg);

  std::array<size_t, corpus::kNumPurposeLabels> per_label{};
  size_t unlabeled = 0;
  for (const auto& r : data.records) {
    if (r.label) ++per_label[static_cast<size_t>(*r.label)];
    else ++unlabeled;
  }
  out << "records: " << data.records.size() << " (";
  for (size_t i = 0; i < corpus::kNumPurposeLabels; ++i)
    out << corpus::kPurposeLabelNames[i] << " " << per_label[i] << ", ";
  out << "unlabeled " << unlabeled << ")\n";

  size_t with_doc = 0;
  for (const auto& r : data.records)
    if (data.docs.count(r.citing_paper_id)) ++with_doc;
  out << "full texts: " << data.docs.size() << " documents; " << with_doc << "/"
      << data.records.size() << " records matched\n";
  out << "worthiness examples: " << data.worthiness.size() << "\n";
  out << "section examples: " << data.sections.size() << "\n";
  out << "word vectors: " << data.statics.size() << " tokens, dim "
      << data.statics.dimension() << "\n";

  if (unlabeled == 0) {
    auto split = corpus::grouped_split(data.records, cfg.val_fraction, cfg.seed);
    out << "grouped split: " << split.train_ids.size() << " train / "
        << split.val_ids.size() << " val records\n";
  } else {
    out << "grouped split: skipped (" << unlabeled << " unlabeled records)\n";
  }

  FeatureTable table = build_feature_table(data);
  if (table.diagnostics.missing_fulltext > 0)
    out << "warning: " << table.diagnostics.missing_fulltext
        << " records featurized without a full text\n";
  if (table.diagnostics.no_occurrences > 0)
    out << "warning: " << table.diagnostics.no_occurrences
        << " records had no citation occurrence in their full text\n";
  out << "ok\n";
}

inline void cmd_featurize(const RunConfig& cfg, std::ostream& out) {
  LoadedData data = load_inputs(cfg);
  FeatureTable table = build_feature_table(data);
  auto split = corpus::grouped_split(data.records, cfg.val_fraction, cfg.seed);
  auto train_idx = indices_of(split, data.records, false);
  FittedState state = fit_state(cfg, data, table, train_idx);

  std::vector<std::string> header = {"record_id", "split", "label"};
  for (const char* name : feat::kHandFeatureNames) header.push_back(name);
  std::vector<std::vector<std::string>> rows;
  for (size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    std::vector<std::string> row{r.record_id,
                                 split.val_ids.count(r.record_id) ? "val" : "train",
                                 r.label ? corpus::to_string(*r.label) : ""};
    for (double v : table.hand[i].as_array()) row.push_back(detail::fmt_double(v));
    rows.push_back(std::move(row));
  }
  write_csv_artifact(cfg, cfg.out_dir / "features.csv", header, rows);
  write_json_artifact(cfg, cfg.out_dir / "tfidf.json",
                      nlohmann::json{{"model", tfidf::to_json(state.tfidf_model)}});

  out << "wrote " << (cfg.out_dir / "features.csv").string() << " ("
      << data.records.size() << " records)\n";
  out << "wrote " << (cfg.out_dir / "tfidf.json").string() << " ("
      << state.tfidf_model.vocabulary_size() << " tokens)\n";
}

inline nlohmann::json history_to_json(const model::TrainResult& result) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& rec : result.history) {
    epochs.push_back({{"epoch", rec.epoch},
                      {"purpose_loss", rec.purpose_loss},
                      {"worthiness_loss", rec.worthiness_loss},
                      {"section_loss", rec.section_loss},
                      {"val_macro_f1", rec.val_macro_f1}});
  }
  return nlohmann::json{{"best_epoch", result.best_epoch},
                        {"best_val_macro_f1", result.best_val_macro_f1},
                        {"epochs", epochs}};
}

inline void cmd_train(const RunConfig& cfg, std::ostream& out) {
  LoadedData data = load_inputs(cfg);
  FeatureTable table = build_feature_table(data);
  auto split = corpus::grouped_split(data.records, cfg.val_fraction, cfg.seed);
  auto train_idx = indices_of(split, data.records, false);
  auto val_idx = indices_of(split, data.records, true);
  FittedState state = fit_state(cfg, data, table, train_idx);
  Dataset ds = build_dataset(data, table, state);

  std::vector<model::PurposeItem> train_items, val_items;
  for (size_t i : train_idx) train_items.push_back(ds.items[i]);
  for (size_t i : val_idx) val_items.push_back(ds.items[i]);

  auto result = model::train(state.model_config, cfg.train, train_items, val_items,
                             ds.worthiness_items, ds.section_items);

  Checkpoint ckpt;
  ckpt.params = result.params;
  ckpt.state = state;
  ckpt.seed = cfg.seed;
  save_checkpoint(cfg, cfg.out_dir / "checkpoint.json", ckpt);
  write_json_artifact(cfg, cfg.out_dir / "history.json", history_to_json(result));

  out << "trained " << result.history.size() << " epochs on " << train_items.size()
      << " records (" << val_items.size() << " validation)\n";
  out << "best epoch " << result.best_epoch << ", validation macro-F1 "
      << detail::fmt_double(result.best_val_macro_f1) << "\n";
  out << "wrote " << (cfg.out_dir / "checkpoint.json").string() << "\n";
  out << "wrote " << (cfg.out_dir / "history.json").string() << "\n";
}

// Builds items for arbitrary (possibly unlabeled) records under a fitted
// checkpoint state.
inline Dataset dataset_from_checkpoint(const LoadedData& data, const FeatureTable& table,
                                       const Checkpoint& ckpt) {
  if (data.statics.dimension() != ckpt.params.config.d_static)
    throw Error("word vectors have dim " + std::to_string(data.statics.dimension()) +
                " but the checkpoint expects " +
                std::to_string(ckpt.params.config.d_static));
  return build_dataset(data, table, ckpt.state);
}

inline void cmd_predict(const RunConfig& cfg, const fs::path& input, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(cfg.out_dir / "checkpoint.json");
  RunConfig effective = cfg;
  if (!input.empty()) effective.citations = input;
  LoadedData data = load_inputs(effective);
  FeatureTable table = build_feature_table(data);
  Dataset ds = dataset_from_checkpoint(data, table, ckpt);

  std::vector<std::string> header = {"record_id", "predicted_label"};
  for (const char* name : corpus::kPurposeLabelNames)
    header.push_back(std::string("p_") + name);
  std::vector<std::vector<std::string>> rows;
  for (size_t i = 0; i < data.records.size(); ++i) {
    auto pred = model::predict(ckpt.params, ds.items[i]);
    std::vector<std::string> row{data.records[i].record_id,
                                 corpus::kPurposeLabelNames[static_cast<size_t>(pred.label)]};
    for (double p : pred.probs) row.push_back(detail::fmt_double(p));
    rows.push_back(std::move(row));
  }
  write_csv_artifact(cfg, cfg.out_dir / "predictions.csv", header, rows);
  out << "wrote " << (cfg.out_dir / "predictions.csv").string() << " ("
      << data.records.size() << " records)\n";
}

inline void cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(cfg.out_dir / "checkpoint.json");
  LoadedData data = load_inputs(cfg);
  FeatureTable table = build_feature_table(data);
  Dataset ds = dataset_from_checkpoint(data, table, ckpt);
  auto split = corpus::grouped_split(data.records, cfg.val_fraction, cfg.seed);
  auto val_idx = indices_of(split, data.records, true);
  auto train_idx = indices_of(split, data.records, false);

  std::vector<int> preds, golds;
  std::vector<std::vector<size_t>> confusion(
      corpus::kNumPurposeLabels, std::vector<size_t>(corpus::kNumPurposeLabels, 0));
  for (size_t i : val_idx) {
    int pred = model::predict(ckpt.params, ds.items[i]).label;
    int gold = ds.items[i].label;
    preds.push_back(pred);
    golds.push_back(gold);
    ++confusion[static_cast<size_t>(gold)][static_cast<size_t>(pred)];
  }

  // per-class F1 alongside the macro average
  nlohmann::json per_class = nlohmann::json::object();
  for (size_t c = 0; c < corpus::kNumPurposeLabels; ++c) {
    size_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < golds.size(); ++i) {
      bool g = golds[i] == static_cast<int>(c), p = preds[i] == static_cast<int>(c);
      if (g && p) ++tp;
      else if (p) ++fp;
      else if (g) ++fn;
    }
    double denom = static_cast<double>(2 * tp + fp + fn);
    per_class[corpus::kPurposeLabelNames[c]] =
        denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }

  nlohmann::json j{
      {"n_train", train_idx.size()},
      {"n_val", val_idx.size()},
      {"macro_f1_val",
       eval::macro_f1(preds, golds, static_cast<int>(corpus::kNumPurposeLabels))},
      {"accuracy_val", eval::accuracy(preds, golds)},
      {"per_class_f1", per_class},
      {"confusion_val", confusion},  // rows gold, columns predicted
  };
  write_json_artifact(cfg, cfg.out_dir / "metrics.json", std::move(j));
  out << "wrote " << (cfg.out_dir / "metrics.json").string() << " (" << val_idx.size()
      << " validation records)\n";
}

inline void cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  LoadedData data = load_inputs(cfg);
  FeatureTable table = build_feature_table(data);
  auto split = corpus::grouped_split(data.records, cfg.val_fraction, cfg.seed);
  auto train_idx = indices_of(split, data.records, false);
  auto val_idx = indices_of(split, data.records, true);
  FittedState state = fit_state(cfg, data, table, train_idx);
  Dataset ds = build_dataset(data, table, state);

  std::vector<model::PurposeItem> train_items, val_items;
  for (size_t i : train_idx) train_items.push_back(ds.items[i]);
  for (size_t i : val_idx) val_items.push_back(ds.items[i]);

  auto report = eval::run_ablation(state.model_config, cfg.train, train_items, val_items,
                                   ds.worthiness_items, ds.section_items);

  std::vector<std::vector<std::string>> rows;
  for (const auto& row : report.rows) {
    rows.push_back({row.variant, detail::fmt_double(row.macro_f1),
                    detail::fmt_double(row.delta)});
    out << row.variant << ": macro-F1 " << detail::fmt_double(row.macro_f1)
        << " (delta " << detail::fmt_double(row.delta) << ")\n";
  }
  write_csv_artifact(cfg, cfg.out_dir / "ablation.csv", {"variant", "macro_f1", "delta"},
                     rows);
  out << "wrote " << (cfg.out_dir / "ablation.csv").string() << "\n";
}

inline void cmd_analyze_features(const RunConfig& cfg, std::ostream& out) {
  LoadedData data = load_inputs(cfg);
  FeatureTable table = build_feature_table(data);
  auto split = corpus::grouped_split(data.records, cfg.val_fraction, cfg.seed);
  auto train_idx = indices_of(split, data.records, false);
  FittedState state = fit_state(cfg, data, table, train_idx);

  std::vector<int> labels;
  labels.reserve(data.records.size());
  for (const auto& r : data.records) labels.push_back(static_cast<int>(*r.label));

  auto analysis = eval::feature_analysis(table.hand, labels);

  std::vector<tfidf::SparseVector> vectors;
  std::vector<std::string> groups;
  for (size_t i = 0; i < data.records.size(); ++i) {
    auto vec = tfidf::transform(state.tfidf_model, table.context_windows[i]);
    if (state.l2_normalize) vec = tfidf::l2_normalize(vec);
    vectors.push_back(std::move(vec));
    groups.push_back(data.records[i].citing_paper_id);
  }
  auto probe = eval::tfidf_probe(vectors, labels, groups, cfg.seed, cfg.val_fraction);

  std::vector<std::string> header = {"feature"};
  for (const char* name : corpus::kPurposeLabelNames)
    header.push_back(std::string("auc_") + name);
  for (const char* name : corpus::kPurposeLabelNames)
    header.push_back(std::string("flag_") + name);

  std::vector<std::vector<std::string>> rows;
  for (const auto& frow : analysis.rows) {
    std::vector<std::string> row{frow.feature};
    for (const auto& auc : frow.auc)
      row.push_back(auc ? detail::fmt_double(*auc) : "");
    for (size_t c = 0; c < corpus::kNumPurposeLabels; ++c)
      row.push_back(frow.auc[c] ? eval::to_string(frow.flag[c]) : "skipped");
    rows.push_back(std::move(row));
  }
  std::vector<std::string> probe_row{"tfidf_mlp_probe"};
  for (const auto& auc : probe.auc)
    probe_row.push_back(auc ? detail::fmt_double(*auc) : "");
  for (const auto& auc : probe.auc)
    probe_row.push_back(auc ? eval::to_string(eval::strength_flag(*auc)) : "skipped");
  rows.push_back(std::move(probe_row));

  write_csv_artifact(cfg, cfg.out_dir / "feature_report.csv", header, rows);
  for (const auto& w : analysis.warnings) out << "warning: " << w << "\n";
  for (const auto& w : probe.warnings) out << "warning: " << w << "\n";
  out << "wrote " << (cfg.out_dir / "feature_report.csv").string() << "\n";
}

}  // namespace citecat::pipeline
