#include "mwuf/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "mwuf/errors.hpp"

namespace mwuf {

double auc(std::span<const double> scores, std::span<const uint8_t> labels) {
  if (scores.size() != labels.size())
    throw MetricError("auc: " + std::to_string(scores.size()) + " scores vs " +
                      std::to_string(labels.size()) + " labels");
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (uint8_t y : labels) n_pos += y ? 1 : 0;
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("auc: undefined for single-class labels");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Average rank within each tie group, accumulated over positives.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (size_t t = i; t < j; ++t)
      if (labels[order[t]]) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double relaimpr(double measured_auc, double base_auc) {
  if (base_auc == 0.5)
    throw MetricError("relaimpr: undefined against a random-guess base (AUC 0.5)");
  return ((measured_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0;
}

}  // namespace mwuf
