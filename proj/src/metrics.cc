#include "fusionforge/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fusionforge/error.hpp"
#include "fusionforge/log.hpp"

namespace fusionforge {

namespace {
void check_shapes(const Matrix& predictions, const LabelMatrix& labels) {
  if (predictions.rows() != labels.samples() || predictions.cols() != labels.classes())
    throw ValidationError(fmt::format("predictions {}x{} do not match labels {}x{}", predictions.rows(),
                                      predictions.cols(), labels.samples(), labels.classes()));
}
}  // namespace

double accuracy(const Matrix& predictions, const LabelMatrix& labels, LabelMode mode) {
  if (mode != LabelMode::single) throw ValidationError("accuracy is defined for single-label data only");
  check_shapes(predictions, labels);
  if (predictions.rows() == 0) throw ValidationError("accuracy: no samples");
  Index hits = 0;
  for (Index n = 0; n < predictions.rows(); ++n)
    if (labels.labels(n, argmax(predictions.row(n))) == 1.0) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.rows());
}

double average_precision(std::span<const double> scores, std::span<const double> positives) {
  if (scores.size() != positives.size()) throw ValidationError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]] != 0.0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) throw ValidationError("average_precision: no positive samples");
  return sum / static_cast<double>(hits);
}

EvalReport mean_ap(const Matrix& predictions, const LabelMatrix& labels) {
  check_shapes(predictions, labels);
  EvalReport report;
  report.per_class_ap.assign(static_cast<std::size_t>(labels.classes()), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> column_scores(static_cast<std::size_t>(predictions.rows()));
  std::vector<double> column_labels(column_scores.size());
  double total = 0.0;
  Index counted = 0;
  for (Index c = 0; c < labels.classes(); ++c) {
    if (labels.labels.col(c).sum() == 0.0) {
      logger()->warn("class {} has no positives; excluded from mAP", c);
      continue;
    }
    for (Index n = 0; n < predictions.rows(); ++n) {
      column_scores[static_cast<std::size_t>(n)] = predictions(n, c);
      column_labels[static_cast<std::size_t>(n)] = labels.labels(n, c);
    }
    const double ap = average_precision(column_scores, column_labels);
    report.per_class_ap[static_cast<std::size_t>(c)] = ap;
    total += ap;
    ++counted;
  }
  if (counted == 0) throw ValidationError("mean_ap: no class has a positive sample");
  report.map = total / static_cast<double>(counted);
  return report;
}

EvalReport evaluate(const Matrix& predictions, const LabelMatrix& labels, LabelMode mode) {
  EvalReport report = mean_ap(predictions, labels);
  if (mode == LabelMode::single) report.accuracy = accuracy(predictions, labels, mode);
  return report;
}

double headline_metric(const Matrix& predictions, const LabelMatrix& labels, LabelMode mode) {
  return mode == LabelMode::single ? accuracy(predictions, labels, mode) : mean_ap(predictions, labels).map;
}

}  // namespace fusionforge
