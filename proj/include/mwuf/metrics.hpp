#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mwuf {

// Rank-based AUC (Mann-Whitney). Tied scores receive the average rank, so a
// tied positive/negative pair counts one half. Throws MetricError unless both
// classes are present.
double auc(std::span<const double> scores, std::span<const uint8_t> labels);

// Relative improvement over a base model, measured against the random-guess
// AUC of 0.5, in percent. Throws MetricError when base_auc == 0.5.
double relaimpr(double measured_auc, double base_auc);

}  // namespace mwuf
