// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

#include "mmfuse/errors.hpp"

namespace mmfuse {

namespace {
double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

Metrics Metrics::from(const Confusion& c) {
  Metrics m;
  m.confusion = c;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

Confusion confusion_of(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] == 1, y = labels[i] == 1;
    if (p && y) ++c.tp;
    else if (p) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
  Confusion c = confusion_of(predictions, labels);
  if (c.total() == 0) throw DataError("metrics: no samples");
  return Metrics::from(c);
}

std::string metrics_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["confusion"] = {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"fn", m.confusion.fn}, {"tn", m.confusion.tn}};
  return j.dump(2);
}

std::string metrics_table(const std::vector<std::pair<std::string, Metrics>>& rows) {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.first.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %9s  %6s  %6s  %5s %5s %5s %5s\n", static_cast<int>(w), "model",
                "accuracy", "precision", "recall", "f1", "tp", "fp", "fn", "tn");
  out += buf;
  for (const auto& [name, m] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %9.4f  %6.4f  %6.4f  %5zu %5zu %5zu %5zu\n", static_cast<int>(w),
                  name.c_str(), m.accuracy, m.precision, m.recall, m.f1, m.confusion.tp, m.confusion.fp,
                  m.confusion.fn, m.confusion.tn);
    out += buf;
  }
  return out;
}

}  // namespace mmfuse
