#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "hetsyn/error.hpp"

namespace hetsyn {

/// Binary classification summary. Ranking metrics are empty when the labels
/// hold a single class.
struct MetricsReport {
  std::optional<double> au_roc;
  std::optional<double> au_prc;
  double acc = 0.0;
  double bacc = 0.0;
  double macro_precision = 0.0;
  double macro_f1 = 0.0;
  std::size_t n = 0;
  double threshold = 0.5;
};

namespace detail {
inline void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "pipeline",
                "scores (" + std::to_string(scores.size()) + ") and labels (" +
                    std::to_string(labels.size()) + ") differ in length");
  }
  if (scores.empty()) throw Error(ErrorCode::LengthMismatch, "pipeline", "no samples to evaluate");
}

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1 ? 1 : 0;
  return {pos, labels.size() - pos};
}
}  // namespace detail

/// Probability that a random positive outscores a random negative, ties
/// counting one half; computed from midranks in O(n log n).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels);
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos == 0 || neg == 0) {
    throw Error(ErrorCode::SingleClass, "pipeline", "AUROC needs both classes");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

/// Area under the precision-recall curve by step integration over distinct
/// score thresholds (average precision).
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels);
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos == 0 || neg == 0) {
    throw Error(ErrorCode::SingleClass, "pipeline", "AUPRC needs both classes");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

/// Full report; a score at or above `threshold` is a positive prediction.
inline MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels,
                              double threshold = 0.5) {
  detail::check_inputs(scores, labels);
  for (int l : labels) {
    if (l != 0 && l != 1) throw Error(ErrorCode::InvalidArgument, "pipeline", "labels must be 0/1");
  }
  MetricsReport r;
  r.n = scores.size();
  r.threshold = threshold;
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos > 0 && neg > 0) {
    r.au_roc = auroc(scores, labels);
    r.au_prc = auprc(scores, labels);
  }
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1) (pred ? tp : fn) += 1;
    else (pred ? fp : tn) += 1;
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  auto f1 = [](double p, double rc) { return p + rc == 0.0 ? 0.0 : 2.0 * p * rc / (p + rc); };
  r.acc = ratio(tp + tn, r.n);
  const double tpr = ratio(tp, pos), tnr = ratio(tn, neg);
  if (pos > 0 && neg > 0) r.bacc = 0.5 * (tpr + tnr);
  else r.bacc = pos > 0 ? tpr : tnr;
  const double prec_pos = ratio(tp, tp + fp), prec_neg = ratio(tn, tn + fn);
  r.macro_precision = 0.5 * (prec_pos + prec_neg);
  r.macro_f1 = 0.5 * (f1(prec_pos, tpr) + f1(prec_neg, tnr));
  return r;
}

}  // namespace hetsyn
