// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mmfuse {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
};

/// Positive class is label 1. Zero denominators give 0.
struct Metrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  Confusion confusion;

  static Metrics from(const Confusion& c);
};

/// Decision rule for probabilities: 1 iff p > 0.5.
inline int decide(double probability) { return probability > 0.5 ? 1 : 0; }

Confusion confusion_of(const std::vector<int>& predictions, const std::vector<int>& labels);
/// Throws DimensionError on length mismatch, DataError when empty.
Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels);

std::string metrics_json(const Metrics& m);
/// Aligned plain-text table, one row per named result.
std::string metrics_table(const std::vector<std::pair<std::string, Metrics>>& rows);

}  // namespace mmfuse
