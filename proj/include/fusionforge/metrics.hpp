#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fusionforge/score_data.hpp"

namespace fusionforge {

/// Evaluation of one prediction matrix. Classes without positives are
/// excluded from the mean and carry NaN in per_class_ap.
struct EvalReport {
  std::optional<double> accuracy;  // single-label mode only
  std::vector<double> per_class_ap;
  double map = 0.0;
};

/// Fraction of rows whose argmax (lowest index on ties) is the true class.
/// Throws ValidationError for multi-label data.
double accuracy(const Matrix& predictions, const LabelMatrix& labels, LabelMode mode = LabelMode::single);

/// Non-interpolated AP: sort by score descending (stable, so ties keep the
/// original order) and average precision@k over the ranks k of positives.
/// Throws ValidationError when there are no positives.
double average_precision(std::span<const double> scores, std::span<const double> positives);

EvalReport mean_ap(const Matrix& predictions, const LabelMatrix& labels);

/// mean_ap plus accuracy when the data is single-label.
EvalReport evaluate(const Matrix& predictions, const LabelMatrix& labels, LabelMode mode);

/// Accuracy in single-label mode, mAP in multi-label mode.
double headline_metric(const Matrix& predictions, const LabelMatrix& labels, LabelMode mode);

}  // namespace fusionforge
