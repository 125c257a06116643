#pragma once

#include <cstdint>
#include <vector>

#include "fusionforge/fusion_solver.hpp"
#include "fusionforge/score_data.hpp"

namespace fusionforge {

/// Stream-level linear fusion: one nonnegative weight per stream, summing to 1.
struct WeightedFusionModel {
  std::vector<double> weights;
};

// Exhaustive simplex search is only tractable for a handful of streams.
inline constexpr Index kMaxWeightedStreams = 4;

/// Entrywise mean across streams. Computed as weighted_fusion_apply with
/// uniform weights so the two agree bit for bit.
ScoreMatrix average_fusion(const std::vector<ScoreMatrix>& streams);

ScoreMatrix weighted_fusion_apply(const WeightedFusionModel& model, const std::vector<ScoreMatrix>& streams);

/// All weight vectors with entries in {0, step, 2 step, ..., 1} summing to 1,
/// in lexicographic order of the integer numerators.
std::vector<std::vector<double>> simplex_grid(Index streams, double step);

/// Grid search on the simplex, scoring each candidate by its mean validation
/// metric over k folds. Ties prefer the candidate closest to uniform, then
/// the lexicographically smallest.
WeightedFusionModel weighted_fusion_fit(const Dataset& train, double grid_step = 0.1, Index k = 3,
                                        std::uint64_t seed = 0);

/// Unregularized logistic-regression fusion: fit with lambda1 = lambda2 = 0
/// from a zero start.
FusionModel plain_logistic_fusion_fit(const StackedScores& stacked, const LabelMatrix& labels,
                                      SolverOptions options = {});

}  // namespace fusionforge
