#pragma once

// Slow reference implementations used to cross-check the library.

#include <algorithm>
#include <cstddef>
#include <set>
#include <vector>

namespace oracle {

// Exhaustive pair count.
inline double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      if (s[i] > s[j]) wins += 1;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Precision/recall at every distinct threshold; each threshold admits all items scoring >= it.
inline double average_precision(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double pos = 0;
  for (int v : y) pos += v;
  double prev_recall = 0, ap = 0;
  for (double t : thresholds) {
    double tp = 0, k = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        k += 1;
        tp += y[i];
      }
    const double recall = tp / pos;
    ap += (recall - prev_recall) * (tp / k);
    prev_recall = recall;
  }
  return ap;
}

}  // namespace oracle
