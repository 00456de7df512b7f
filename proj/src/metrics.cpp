#include "promos/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "promos/error.hpp"

namespace promos {

namespace {

void check(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("metrics: scores and labels differ in length");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("metrics: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw ValidationError("metrics: scores must be finite");
  }
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check(scores, labels);
  const auto idx = order_by_score(scores, false);
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) {
        rank_sum += avg_rank;
        pos += 1.0;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) throw ValidationError("auroc: both classes must be present");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check(scores, labels);
  double total_pos = 0.0;
  for (int l : labels) total_pos += l;
  if (total_pos == 0.0) throw ValidationError("auprc: at least one positive label required");
  const auto idx = order_by_score(scores, true);
  double tp = 0.0, seen = 0.0, prev_recall = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) tp += labels[idx[k]];
    seen += static_cast<double>(j - i);
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

}  // namespace promos
