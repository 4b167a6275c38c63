#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "citecat/corpus.hpp"
#include "citecat/error.hpp"
#include "citecat/features.hpp"
#include "citecat/metrics.hpp"
#include "citecat/model.hpp"
#include "citecat/nn.hpp"
#include "citecat/tfidf.hpp"

// Analysis protocols on top of the raw metrics: per-feature one-vs-all AUC
// with strength thresholds, the TF-IDF MLP probe, and the leave-one-module-out
// ablation.
namespace citecat::eval {

enum class Strength { strong_positive, strong_negative, neutral };

inline const char* to_string(Strength s) {
  switch (s) {
    case Strength::strong_positive: return "strong_positive";
    case Strength::strong_negative: return "strong_negative";
    case Strength::neutral: return "neutral";
  }
  return "?";
}

// strong_positive iff AUC > 0.57, strong_negative iff AUC < 0.43.
inline Strength strength_flag(double auc) {
  if (auc > 0.57) return Strength::strong_positive;
  if (auc < 0.43) return Strength::strong_negative;
  return Strength::neutral;
}

struct FeatureStrengthRow {
  std::string feature;
  // One cell per purpose class; nullopt marks a skipped (degenerate) class.
  std::array<std::optional<double>, corpus::kNumPurposeLabels> auc;
  std::array<Strength, corpus::kNumPurposeLabels> flag{};
};

struct FeatureAnalysis {
  std::vector<FeatureStrengthRow> rows;  // one per hand feature
  std::vector<std::string> warnings;
};

// One-vs-all AUC of each raw hand-feature value against each class. Classes
// with no positives or no negatives are skipped per cell with a warning.
inline FeatureAnalysis feature_analysis(
    const std::vector<feat::HandFeatureVector>& features,
    const std::vector<int>& labels) {
  if (features.size() != labels.size())
    throw Error("feature_analysis: features and labels differ in length");
  if (features.empty()) throw Error("feature_analysis: empty input");

  FeatureAnalysis out;
  const size_t n = labels.size();
  std::array<size_t, corpus::kNumPurposeLabels> class_count{};
  for (int l : labels) {
    if (l < 0 || l >= static_cast<int>(corpus::kNumPurposeLabels))
      throw Error("feature_analysis: label out of range");
    ++class_count[static_cast<size_t>(l)];
  }

  std::array<bool, corpus::kNumPurposeLabels> usable{};
  for (size_t c = 0; c < corpus::kNumPurposeLabels; ++c) {
    if (class_count[c] == 0) {
      out.warnings.push_back(std::string("class ") +
                             corpus::kPurposeLabelNames[c] +
                             " has no records; skipped");
    } else if (class_count[c] == n) {
      out.warnings.push_back(std::string("class ") +
                             corpus::kPurposeLabelNames[c] +
                             " covers every record; skipped");
    } else {
      usable[c] = true;
    }
  }

  for (size_t f = 0; f < feat::kNumHandFeatures; ++f) {
    FeatureStrengthRow row;
    row.feature = feat::kHandFeatureNames[f];
    row.flag.fill(Strength::neutral);
    std::vector<double> scores(n);
    for (size_t i = 0; i < n; ++i) scores[i] = features[i].as_array()[f];
    for (size_t c = 0; c < corpus::kNumPurposeLabels; ++c) {
      if (!usable[c]) continue;
      std::vector<bool> pos(n);
      for (size_t i = 0; i < n; ++i) pos[i] = labels[i] == static_cast<int>(c);
      double auc = roc_auc(scores, pos);
      row.auc[c] = auc;
      row.flag[c] = strength_flag(auc);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

struct ProbeResult {
  std::array<std::optional<double>, corpus::kNumPurposeLabels> auc;
  std::vector<std::string> warnings;
};

// Probes how much signal the TF-IDF vectors alone carry: trains a 2-layer
// MLP (hidden 64, ReLU, Adam, 50 epochs) on a grouped split and reports
// one-vs-all AUC of the validation class probabilities. `groups` keeps all
// records of one citing paper on the same side of the split.
inline ProbeResult tfidf_probe(const std::vector<tfidf::SparseVector>& vectors,
                               const std::vector<int>& labels,
                               const std::vector<std::string>& groups,
                               uint64_t seed, double val_fraction = 0.25) {
  const size_t n = vectors.size();
  if (labels.size() != n || groups.size() != n)
    throw Error("tfidf_probe: vectors, labels and groups differ in length");
  if (n == 0) throw Error("tfidf_probe: empty input");
  const size_t dim = vectors[0].dim;
  for (const auto& v : vectors)
    if (v.dim != dim) throw Error("tfidf_probe: inconsistent vector widths");

  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(n);
  for (size_t i = 0; i < n; ++i) pairs.emplace_back(std::to_string(i), groups[i]);
  auto split = corpus::grouped_split_ids(pairs, val_fraction, seed);

  std::vector<size_t> train_idx, val_idx;
  for (size_t i = 0; i < n; ++i) {
    if (split.val_ids.count(std::to_string(i))) val_idx.push_back(i);
    else train_idx.push_back(i);
  }
  if (train_idx.empty() || val_idx.empty())
    throw Error("tfidf_probe: degenerate grouped split");

  constexpr size_t kHidden = 64;
  constexpr size_t kEpochs = 50;
  constexpr size_t kBatch = 32;
  const size_t n_classes = corpus::kNumPurposeLabels;

  nn::Rng rng(seed);
  nn::Tensor W1(kHidden, dim), b1(kHidden, 1), W2(n_classes, kHidden), b2(n_classes, 1);
  rng.fill_xavier(W1);
  rng.fill_xavier(W2);
  nn::AdamConfig adam;
  adam.lr = 1e-2;  // tiny-corpus scale; 50 epochs is fixed, so converge fast
  nn::AdamSlot sW1, sb1, sW2, sb2;
  uint64_t step = 0;

  auto forward = [&](const tfidf::SparseVector& x, std::vector<double>& z1,
                     std::vector<double>& h1, std::vector<double>& logits) {
    z1.assign(kHidden, 0.0);
    for (size_t r = 0; r < kHidden; ++r) {
      double acc = b1.v[r];
      const double* wrow = W1.v.data() + r * dim;
      for (const auto& [col, value] : x.entries) acc += wrow[col] * value;
      z1[r] = acc;
    }
    h1.resize(kHidden);
    for (size_t r = 0; r < kHidden; ++r) h1[r] = z1[r] > 0 ? z1[r] : 0.0;
    nn::affine(W2, h1, b2, logits);
  };

  std::vector<size_t> order = train_idx;
  for (size_t epoch = 0; epoch < kEpochs; ++epoch) {
    rng.shuffle(order);
    for (size_t lo = 0; lo < order.size(); lo += kBatch) {
      const size_t hi = std::min(order.size(), lo + kBatch);
      nn::Tensor gW1(kHidden, dim), gb1(kHidden, 1), gW2(n_classes, kHidden),
          gb2(n_classes, 1);
      const double scale = 1.0 / static_cast<double>(hi - lo);
      for (size_t k = lo; k < hi; ++k) {
        const auto& x = vectors[order[k]];
        std::vector<double> z1, h1, logits;
        forward(x, z1, h1, logits);
        auto dlogits = nn::cross_entropy_grad(logits, static_cast<size_t>(labels[order[k]]));
        for (double& d : dlogits) d *= scale;
        nn::accumulate_outer(gW2, gb2, dlogits, h1);
        std::vector<double> dh1(kHidden, 0.0);
        nn::add_matT_vec(W2, dlogits, dh1);
        for (size_t r = 0; r < kHidden; ++r) {
          double dz = z1[r] > 0 ? dh1[r] : 0.0;
          gb1.v[r] += dz;
          double* grow = gW1.v.data() + r * dim;
          for (const auto& [col, value] : x.entries) grow[col] += dz * value;
        }
      }
      ++step;
      nn::adam_update(W1, gW1, sW1, adam, step, "probe.W1");
      nn::adam_update(b1, gb1, sb1, adam, step, "probe.b1");
      nn::adam_update(W2, gW2, sW2, adam, step, "probe.W2");
      nn::adam_update(b2, gb2, sb2, adam, step, "probe.b2");
    }
  }

  ProbeResult out;
  std::vector<std::vector<double>> val_probs;
  val_probs.reserve(val_idx.size());
  for (size_t i : val_idx) {
    std::vector<double> z1, h1, logits;
    forward(vectors[i], z1, h1, logits);
    val_probs.push_back(nn::softmax(logits));
  }
  for (size_t c = 0; c < n_classes; ++c) {
    size_t pos = 0;
    for (size_t i : val_idx)
      if (labels[i] == static_cast<int>(c)) ++pos;
    if (pos < 2 || pos == val_idx.size()) {
      out.warnings.push_back(std::string("class ") + corpus::kPurposeLabelNames[c] +
                             " has too few validation records; skipped");
      continue;
    }
    std::vector<double> scores;
    std::vector<bool> positives;
    scores.reserve(val_idx.size());
    for (size_t k = 0; k < val_idx.size(); ++k) {
      scores.push_back(val_probs[k][c]);
      positives.push_back(labels[val_idx[k]] == static_cast<int>(c));
    }
    out.auc[c] = roc_auc(scores, positives);
  }
  return out;
}

struct AblationRow {
  std::string variant;  // full | no_hand | no_lstm | no_tfidf
  double macro_f1 = 0;
  double delta = 0;  // vs full
};

struct AblationReport {
  std::vector<AblationRow> rows;
};

// Retrains the model four times with the same seed and config, removing one
// module each time: the hand-feature slot, the encoder (replaced by a zero
// vector of the same width), and the TF-IDF slot. Reports validation macro-F1
// per variant and the delta against the full model.
inline AblationReport run_ablation(const model::ModelConfig& mc,
                                   const model::TrainConfig& tc,
                                   const std::vector<model::PurposeItem>& train_items,
                                   const std::vector<model::PurposeItem>& val_items,
                                   const std::vector<model::ScaffoldItem>& worthiness,
                                   const std::vector<model::ScaffoldItem>& sections) {
  struct Variant {
    const char* name;
    void (*strip)(model::ModelConfig&);
  };
  const Variant variants[] = {
      {"full", [](model::ModelConfig&) {}},
      {"no_hand", [](model::ModelConfig& c) { c.use_hand = false; }},
      {"no_lstm", [](model::ModelConfig& c) { c.use_lstm = false; }},
      {"no_tfidf", [](model::ModelConfig& c) { c.use_tfidf = false; }},
  };

  AblationReport report;
  for (const auto& variant : variants) {
    model::ModelConfig vc = mc;
    variant.strip(vc);
    try {
      auto result = model::train(vc, tc, train_items, val_items, worthiness, sections);
      report.rows.push_back({variant.name, result.best_val_macro_f1, 0.0});
    } catch (const Error& e) {
      throw Error(std::string("ablation variant \"") + variant.name +
                  "\" failed: " + e.what());
    }
  }
  const double full_f1 = report.rows[0].macro_f1;
  for (auto& row : report.rows) row.delta = row.macro_f1 - full_f1;
  return report;
}

}  // namespace citecat::eval
