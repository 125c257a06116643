#pragma once

#include <string>
#include <vector>

#include "fusionforge/score_data.hpp"

namespace fusionforge {

// How the diagonal of each confusion matrix is filled: with the per-class
// correct rate (row-stochastic) or with zeros (off-diagonal confusions only).
enum class PriorDiagonal { accuracy, zero };

std::string to_string(PriorDiagonal diagonal);
PriorDiagonal parse_prior_diagonal(const std::string& text);

/// Per-stream class-confusion matrices V^m and their vertical stack V.
/// Block m of `stacked` (rows m*C .. m*C+C-1) is per_stream[m], so row m*C+i
/// lines up with column m*C+i of StackedScores and row m*C+i of the fusion
/// weights.
struct PriorMatrix {
  std::vector<Matrix> per_stream;
  Matrix stacked;
  std::vector<std::string> stream_order;
  PriorDiagonal diagonal = PriorDiagonal::accuracy;

  Index classes() const { return stacked.cols(); }
  Index streams() const { return static_cast<Index>(per_stream.size()); }
};

/// Entry (i, j) is the fraction of samples of true class i whose argmax
/// prediction is j. Classes with no samples get an all-zero row.
Matrix confusion_matrix(const ScoreMatrix& scores, const LabelMatrix& labels, LabelMode mode,
                        PriorDiagonal diagonal = PriorDiagonal::accuracy);

PriorMatrix stack_priors(const std::vector<Matrix>& per_stream, std::vector<std::string> stream_order = {},
                         PriorDiagonal diagonal = PriorDiagonal::accuracy);

/// confusion_matrix for every stream of `dataset`, stacked in stream order.
PriorMatrix estimate_prior(const Dataset& dataset, PriorDiagonal diagonal = PriorDiagonal::accuracy);

}  // namespace fusionforge
