#include "fusionforge/class_prior.hpp"

#include <fmt/format.h>

#include "fusionforge/error.hpp"
#include "fusionforge/log.hpp"

namespace fusionforge {

std::string to_string(PriorDiagonal diagonal) { return diagonal == PriorDiagonal::accuracy ? "accuracy" : "zero"; }

PriorDiagonal parse_prior_diagonal(const std::string& text) {
  if (text == "accuracy") return PriorDiagonal::accuracy;
  if (text == "zero") return PriorDiagonal::zero;
  throw ValidationError(fmt::format("unknown prior diagonal '{}' (expected zero|accuracy)", text));
}

Matrix confusion_matrix(const ScoreMatrix& scores, const LabelMatrix& labels, LabelMode mode, PriorDiagonal diagonal) {
  if (scores.samples() == 0) throw ValidationError("confusion_matrix: empty dataset");
  if (scores.samples() != labels.samples() || scores.classes() != labels.classes())
    throw ValidationError(fmt::format("confusion_matrix: scores {}x{} vs labels {}x{}", scores.samples(),
                                      scores.classes(), labels.samples(), labels.classes()));
  const Index C = scores.classes();
  Matrix counts = Matrix::Zero(C, C);
  for (Index n = 0; n < scores.samples(); ++n) {
    const Index predicted = argmax(scores.scores.row(n));
    if (mode == LabelMode::single) {
      counts(argmax(labels.labels.row(n)), predicted) += 1.0;
      continue;
    }
    bool any = false;
    for (Index i = 0; i < C; ++i)
      if (labels.labels(n, i) == 1.0) {
        counts(i, predicted) += 1.0;
        any = true;
      }
    if (!any) throw ValidationError(fmt::format("confusion_matrix: sample {} has no positive class", n));
  }

  Matrix confusion = Matrix::Zero(C, C);
  for (Index i = 0; i < C; ++i) {
    const double total = counts.row(i).sum();
    if (total == 0.0) {
      logger()->warn("stream '{}': class {} has no samples; its prior row is zero", scores.stream_id, i);
      continue;
    }
    confusion.row(i) = counts.row(i) / total;
  }
  if (diagonal == PriorDiagonal::zero) confusion.diagonal().setZero();
  return confusion;
}

PriorMatrix stack_priors(const std::vector<Matrix>& per_stream, std::vector<std::string> stream_order,
                         PriorDiagonal diagonal) {
  if (per_stream.empty()) throw ValidationError("stack_priors: no matrices");
  const Index C = per_stream.front().rows();
  if (stream_order.empty())
    for (std::size_t m = 0; m < per_stream.size(); ++m) stream_order.push_back(fmt::format("s{}", m));
  if (stream_order.size() != per_stream.size())
    throw ValidationError("stack_priors: stream_order length differs from matrix count");

  PriorMatrix prior;
  prior.stacked.resize(C * static_cast<Index>(per_stream.size()), C);
  for (std::size_t m = 0; m < per_stream.size(); ++m) {
    if (per_stream[m].rows() != C || per_stream[m].cols() != C)
      throw ValidationError(fmt::format("stack_priors: matrix {} is {}x{}, expected {}x{}", m, per_stream[m].rows(),
                                        per_stream[m].cols(), C, C));
    prior.stacked.middleRows(static_cast<Index>(m) * C, C) = per_stream[m];
  }
  prior.per_stream = per_stream;
  prior.stream_order = std::move(stream_order);
  prior.diagonal = diagonal;
  return prior;
}

PriorMatrix estimate_prior(const Dataset& dataset, PriorDiagonal diagonal) {
  std::vector<Matrix> per_stream;
  std::vector<std::string> order;
  for (const auto& stream : dataset.streams) {
    per_stream.push_back(confusion_matrix(stream, dataset.labels, dataset.mode, diagonal));
    order.push_back(stream.stream_id);
  }
  return stack_priors(per_stream, std::move(order), diagonal);
}

}  // namespace fusionforge
