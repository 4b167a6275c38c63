#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "citecat/error.hpp"

namespace citecat::eval {

// Unweighted mean of per-class F1 over a fixed label space [0, n_classes).
// A class with zero predicted and zero gold instances contributes F1 = 0.
inline double macro_f1(const std::vector<int>& predictions,
                       const std::vector<int>& golds, int n_classes) {
  if (predictions.size() != golds.size())
    throw Error("macro_f1: predictions and golds differ in length (" +
                std::to_string(predictions.size()) + " vs " +
                std::to_string(golds.size()) + ")");
  if (predictions.empty()) throw Error("macro_f1: empty input");
  if (n_classes < 1) throw Error("macro_f1: n_classes must be >= 1");
  std::vector<long> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (size_t i = 0; i < golds.size(); ++i) {
    int p = predictions[i], g = golds[i];
    if (p < 0 || p >= n_classes || g < 0 || g >= n_classes)
      throw Error("macro_f1: label out of range at record " + std::to_string(i));
    if (p == g) {
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double sum = 0;
  for (int c = 0; c < n_classes; ++c) {
    // F1 = 2tp / (2tp + fp + fn); absent class (all counts 0) scores 0.
    long denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom > 0) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(n_classes);
}

inline double accuracy(const std::vector<int>& predictions,
                       const std::vector<int>& golds) {
  if (predictions.size() != golds.size())
    throw Error("accuracy: predictions and golds differ in length");
  if (predictions.empty()) throw Error("accuracy: empty input");
  size_t hits = 0;
  for (size_t i = 0; i < golds.size(); ++i)
    if (predictions[i] == golds[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

// Mann-Whitney AUC with average ranks for ties:
//   AUC = (sum of positive ranks - P(P+1)/2) / (P * N)
// Ranks are half-integers, so the numerator is exact in double precision and
// the result matches brute-force pairwise counting bit for bit.
inline double roc_auc(const std::vector<double>& scores,
                      const std::vector<bool>& positives) {
  if (scores.size() != positives.size())
    throw Error("roc_auc: scores and positives differ in length");
  size_t n = scores.size();
  size_t n_pos = 0;
  for (bool b : positives)
    if (b) ++n_pos;
  size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw Error("roc_auc: need at least one positive and one negative");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based ranks i+1 .. j share the average rank (i+1 + j) / 2.
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (positives[order[k]]) pos_rank_sum += avg_rank;
    i = j;
  }
  double p = static_cast<double>(n_pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(n_neg));
}

}  // namespace citecat::eval
