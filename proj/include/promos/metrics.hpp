#pragma once

#include <span>

namespace promos {

/// Mann-Whitney statistic via average ranks: P(anomaly > normal) + 0.5 P(tie).
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Average precision over a descending sweep; tied scores enter together.
double auprc(std::span<const double> scores, std::span<const int> labels);

}  // namespace promos
