#include "fusionforge/baselines.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "fusionforge/error.hpp"
#include "fusionforge/metrics.hpp"

namespace fusionforge {

namespace {

void check_streams(const std::vector<ScoreMatrix>& streams) {
  if (streams.empty()) throw ValidationError("fusion: no streams");
  for (const auto& s : streams)
    if (s.samples() != streams.front().samples() || s.classes() != streams.front().classes())
      throw ValidationError(fmt::format("fusion: stream '{}' shape mismatch", s.stream_id));
}

void compositions(Index parts, Index total, std::vector<Index>& prefix, std::vector<std::vector<Index>>& out) {
  if (parts == 1) {
    prefix.push_back(total);
    out.push_back(prefix);
    prefix.pop_back();
    return;
  }
  for (Index k = 0; k <= total; ++k) {
    prefix.push_back(k);
    compositions(parts - 1, total - k, prefix, out);
    prefix.pop_back();
  }
}

Index grid_divisions(double step) {
  if (!(step > 0.0) || step > 1.0) throw ValidationError("simplex grid: step must lie in (0, 1]");
  const double divisions = 1.0 / step;
  const auto rounded = static_cast<Index>(std::llround(divisions));
  if (std::abs(divisions - static_cast<double>(rounded)) > 1e-9)
    throw ValidationError(fmt::format("simplex grid: step {} does not divide 1", step));
  return rounded;
}

std::vector<std::vector<Index>> simplex_numerators(Index streams, Index divisions) {
  std::vector<std::vector<Index>> out;
  std::vector<Index> prefix;
  compositions(streams, divisions, prefix, out);
  return out;
}

}  // namespace

ScoreMatrix weighted_fusion_apply(const WeightedFusionModel& model, const std::vector<ScoreMatrix>& streams) {
  check_streams(streams);
  if (model.weights.size() != streams.size())
    throw ValidationError(
        fmt::format("weighted fusion: {} weights for {} streams", model.weights.size(), streams.size()));
  Matrix fused = Matrix::Zero(streams.front().samples(), streams.front().classes());
  for (std::size_t m = 0; m < streams.size(); ++m) fused += model.weights[m] * streams[m].scores;
  // A convex combination can overshoot [0, 1] by an ulp.
  fused = fused.cwiseMax(0.0).cwiseMin(1.0);
  return {"fused", std::move(fused), streams.front().sample_ids};
}

ScoreMatrix average_fusion(const std::vector<ScoreMatrix>& streams) {
  check_streams(streams);
  WeightedFusionModel uniform{std::vector<double>(streams.size(), 1.0 / static_cast<double>(streams.size()))};
  return weighted_fusion_apply(uniform, streams);
}

std::vector<std::vector<double>> simplex_grid(Index streams, double step) {
  if (streams < 1) throw ValidationError("simplex grid: need at least one stream");
  const Index divisions = grid_divisions(step);
  std::vector<std::vector<double>> out;
  for (const auto& numerators : simplex_numerators(streams, divisions)) {
    std::vector<double> w;
    for (Index k : numerators) w.push_back(static_cast<double>(k) / static_cast<double>(divisions));
    out.push_back(std::move(w));
  }
  return out;
}

WeightedFusionModel weighted_fusion_fit(const Dataset& train, double grid_step, Index k, std::uint64_t seed) {
  validate(train);
  const auto M = static_cast<Index>(train.streams.size());
  if (M > kMaxWeightedStreams)
    throw ValidationError(
        fmt::format("weighted fusion: exhaustive grid supports at most {} streams, got {}", kMaxWeightedStreams, M));
  if (M == 1) return {{1.0}};

  const Index divisions = grid_divisions(grid_step);
  const auto numerators = simplex_numerators(M, divisions);
  const auto folds = split_folds(train, k, seed);
  std::vector<Dataset> validation;
  for (const auto& fold : folds) validation.push_back(subset(train, fold.validation));

  auto to_weights = [&](const std::vector<Index>& num) {
    std::vector<double> w;
    for (Index v : num) w.push_back(static_cast<double>(v) / static_cast<double>(divisions));
    return w;
  };
  // Squared distance to uniform, scaled by M^2 to stay integral.
  auto spread = [&](const std::vector<Index>& num) {
    Index total = 0;
    for (Index v : num) total += (M * v - divisions) * (M * v - divisions);
    return total;
  };

  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < numerators.size(); ++i) {
    const WeightedFusionModel candidate{to_weights(numerators[i])};
    double total = 0.0;
    for (const auto& fold : validation)
      total += headline_metric(weighted_fusion_apply(candidate, fold.streams).scores, fold.labels, fold.mode);
    const double score = total / static_cast<double>(validation.size());
    // Lexicographic order is the enumeration order, so strict comparison keeps the first.
    if (score > best_score || (score == best_score && spread(numerators[i]) < spread(numerators[best]))) {
      best = i;
      best_score = score;
    }
  }
  return {to_weights(numerators[best])};
}

FusionModel plain_logistic_fusion_fit(const StackedScores& stacked, const LabelMatrix& labels, SolverOptions options) {
  options.init = InitMode::zeros;
  const Index C = labels.classes();
  if (C == 0 || stacked.matrix.cols() % C != 0)
    throw ValidationError("plain logistic fusion: stacked width is not a multiple of the class count");
  const Index M = stacked.matrix.cols() / C;
  const PriorMatrix zero_prior =
      stack_priors(std::vector<Matrix>(static_cast<std::size_t>(M), Matrix::Zero(C, C)), stacked.stream_order);
  return fit(stacked, labels, zero_prior, 0.0, 0.0, options);
}

}  // namespace fusionforge
