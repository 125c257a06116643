#include "fusionforge/fusion_solver.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

#include "fusionforge/error.hpp"
#include "fusionforge/log.hpp"
#include "fusionforge/metrics.hpp"
#include "fusionforge/parallel.hpp"

namespace fusionforge {

namespace {

void check_shapes(const Matrix& weights, const Matrix& stacked, const Matrix& labels) {
  if (stacked.cols() != weights.rows() || labels.cols() != weights.cols() || labels.rows() != stacked.rows())
    throw ValidationError(fmt::format("shape mismatch: S {}x{}, W {}x{}, Y {}x{}", stacked.rows(), stacked.cols(),
                                      weights.rows(), weights.cols(), labels.rows(), labels.cols()));
}

void check_prior_shape(const Matrix& weights, const Matrix& prior) {
  if (prior.rows() != weights.rows() || prior.cols() != weights.cols())
    throw ValidationError(fmt::format("shape mismatch: prior {}x{} vs W {}x{}", prior.rows(), prior.cols(),
                                      weights.rows(), weights.cols()));
}

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw ValidationError(fmt::format("non-finite entry in {}", what));
}

// log(1 + exp(t)) without overflow.
double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double sign_of_label(double y) { return 1.0 - 2.0 * y; }

double sparsity(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return static_cast<double>((m.array() == 0.0).count()) / static_cast<double>(m.size());
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void validate(const SolverOptions& options) {
  if (options.max_iters < 0) throw ValidationError("solver: max_iters must be >= 0");
  if (!(options.initial_step > 0.0)) throw ValidationError("solver: initial step must be > 0");
  if (!(options.backtrack > 0.0 && options.backtrack < 1.0))
    throw ValidationError("solver: backtracking factor must lie in (0, 1)");
  if (!(options.rel_tol >= 0.0)) throw ValidationError("solver: rel_tol must be >= 0");
  if (!(options.armijo > 0.0 && options.armijo < 0.5))
    throw ValidationError("solver: armijo constant must lie in (0, 0.5)");
}

double logistic_loss(const Matrix& weights, const Matrix& stacked, const Matrix& labels) {
  check_shapes(weights, stacked, labels);
  check_finite(weights, "W");
  check_finite(stacked, "S");
  const Matrix margins = stacked * weights;
  double total = 0.0;
  for (Index n = 0; n < margins.rows(); ++n)
    for (Index c = 0; c < margins.cols(); ++c) total += softplus(sign_of_label(labels(n, c)) * margins(n, c));
  return total;
}

double objective(const Matrix& weights, const Matrix& stacked, const Matrix& labels, const Matrix& prior,
                 double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ValidationError("objective: regularization weights must be >= 0");
  check_prior_shape(weights, prior);
  double value = logistic_loss(weights, stacked, labels);
  if (lambda1 != 0.0) value += lambda1 * (weights - prior).squaredNorm();
  if (lambda2 != 0.0) value += lambda2 * weights.lpNorm<1>();
  return value;
}

Matrix smooth_gradient(const Matrix& weights, const Matrix& stacked, const Matrix& labels, const Matrix& prior,
                       double lambda1) {
  check_shapes(weights, stacked, labels);
  check_prior_shape(weights, prior);
  const Matrix margins = stacked * weights;
  Matrix residual(margins.rows(), margins.cols());
  for (Index n = 0; n < margins.rows(); ++n)
    for (Index c = 0; c < margins.cols(); ++c) {
      const double sign = sign_of_label(labels(n, c));
      residual(n, c) = sign * sigmoid(sign * margins(n, c));
    }
  Matrix gradient = stacked.transpose() * residual;
  if (lambda1 != 0.0) gradient += 2.0 * lambda1 * (weights - prior);
  return gradient;
}

// Literally sign(x) * max(|x| - tau, 0), so a zeroed negative entry is -0.0.
double soft_threshold(double x, double tau) {
  if (tau < 0.0) throw ValidationError("soft_threshold: negative threshold");
  const double sign = static_cast<double>((x > 0.0) - (x < 0.0));
  return sign * std::max(std::abs(x) - tau, 0.0);
}

Matrix soft_threshold(const Matrix& x, double tau) {
  if (tau < 0.0) throw ValidationError("soft_threshold: negative threshold");
  return x.unaryExpr([tau](double v) { return soft_threshold(v, tau); });
}

namespace {

// Objective value plus, per entry, the signed margin t = (1 - 2y) s.w and
// exp(-|t|), so the gradient at an accepted point needs no further exp calls.
struct Evaluation {
  double value = 0.0;
  Matrix signed_margins;
  Matrix decay;
};

Evaluation evaluate_objective(const Matrix& weights, const Matrix& S, const Matrix& Y, const Matrix& V, double lambda1,
                              double lambda2) {
  Evaluation e;
  e.signed_margins = S * weights;
  e.decay.resize(e.signed_margins.rows(), e.signed_margins.cols());
  double total = 0.0;
  for (Index c = 0; c < e.signed_margins.cols(); ++c)
    for (Index n = 0; n < e.signed_margins.rows(); ++n) {
      const double t = sign_of_label(Y(n, c)) * e.signed_margins(n, c);
      const double decay = std::exp(-std::abs(t));
      e.signed_margins(n, c) = t;
      e.decay(n, c) = decay;
      total += std::max(t, 0.0) + std::log1p(decay);
    }
  if (lambda1 != 0.0) total += lambda1 * (weights - V).squaredNorm();
  if (lambda2 != 0.0) total += lambda2 * weights.lpNorm<1>();
  e.value = total;
  return e;
}

// Same arithmetic as sigmoid(t), with exp(-|t|) supplied.
Matrix gradient_from_evaluation(const Evaluation& e, const Matrix& weights, const Matrix& S, const Matrix& Y,
                                const Matrix& V, double lambda1) {
  Matrix residual(e.decay.rows(), e.decay.cols());
  for (Index c = 0; c < residual.cols(); ++c)
    for (Index n = 0; n < residual.rows(); ++n) {
      const double d = e.decay(n, c);
      const double sig = e.signed_margins(n, c) >= 0.0 ? 1.0 / (1.0 + d) : d / (1.0 + d);
      residual(n, c) = sign_of_label(Y(n, c)) * sig;
    }
  Matrix gradient = S.transpose() * residual;
  if (lambda1 != 0.0) gradient += 2.0 * lambda1 * (weights - V);
  return gradient;
}

}  // namespace

FusionModel fit(const StackedScores& stacked, const LabelMatrix& labels, const PriorMatrix& prior, double lambda1,
                double lambda2, const SolverOptions& options) {
  validate(options);
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ValidationError("fit: regularization weights must be >= 0");
  const Matrix& S = stacked.matrix;
  const Matrix& Y = labels.labels;
  const Matrix& V = prior.stacked;
  if (V.rows() != S.cols() || V.cols() != Y.cols() || S.rows() != Y.rows())
    throw ValidationError(fmt::format("fit: shape mismatch: S {}x{}, Y {}x{}, prior {}x{}", S.rows(), S.cols(),
                                      Y.rows(), Y.cols(), V.rows(), V.cols()));
  if (!stacked.stream_order.empty() && !prior.stream_order.empty() && stacked.stream_order != prior.stream_order)
    throw ValidationError("fit: prior stream order differs from the scores'");
  check_finite(S, "S");
  check_finite(V, "prior");

  FusionModel model;
  model.lambda1 = lambda1;
  model.lambda2 = lambda2;
  model.prior = prior;
  model.stream_order = stacked.stream_order;
  model.weights = options.init == InitMode::prior ? V : Matrix::Zero(V.rows(), V.cols());

  FitReport& report = model.report;
  Evaluation current = evaluate_objective(model.weights, S, Y, V, lambda1, lambda2);
  if (!std::isfinite(current.value))
    throw NumericalError("fit: objective is not finite at the initial point; check score scaling");
  report.objective_trace.push_back(current.value);

  // The step only shrinks: once eta satisfies the decrease test it is kept.
  double step = options.initial_step;
  Matrix candidate;
  for (int iter = 0; iter < options.max_iters; ++iter) {
    const Matrix gradient = gradient_from_evaluation(current, model.weights, S, Y, V, lambda1);
    Evaluation next;
    bool accepted = false;
    while (true) {
      candidate = soft_threshold(model.weights - step * gradient, step * lambda2);
      const double moved = (candidate - model.weights).squaredNorm();
      // A fixed point of the prox-gradient map is a minimizer.
      if (moved == 0.0) break;
      next = evaluate_objective(candidate, S, Y, V, lambda1, lambda2);
      if (std::isfinite(next.value) && next.value <= current.value - options.armijo / step * moved) {
        accepted = true;
        break;
      }
      step *= options.backtrack;
      // The decrease no longer registers in double precision.
      if (step < std::numeric_limits<double>::min()) break;
    }
    if (!accepted) {
      report.converged = true;
      break;
    }
    const double decrease = current.value - next.value;
    const double previous = current.value;
    model.weights.swap(candidate);
    current = std::move(next);
    report.objective_trace.push_back(current.value);
    report.iterations = iter + 1;
    if (decrease <= options.rel_tol * std::abs(previous)) {
      report.converged = true;
      break;
    }
  }
  if (!report.converged)
    logger()->debug("fit: stopped after {} iterations without meeting rel_tol {}", report.iterations, options.rel_tol);
  report.final_step_size = step;
  report.sparsity = sparsity(model.weights);
  return model;
}

Matrix predict(const FusionModel& model, const Matrix& stacked) {
  if (stacked.cols() != model.weights.rows())
    throw ValidationError(
        fmt::format("predict: stacked scores have {} columns, model expects {}", stacked.cols(), model.weights.rows()));
  return (stacked * model.weights).unaryExpr([](double z) { return sigmoid(z); });
}

ScoreMatrix predict(const FusionModel& model, const StackedScores& stacked, std::vector<std::string> sample_ids) {
  if (!model.stream_order.empty() && stacked.stream_order != model.stream_order)
    throw ValidationError("predict: stream order differs from the model's");
  return {"fused", predict(model, stacked.matrix), std::move(sample_ids)};
}

FusionModel fit_dataset(const Dataset& train, double lambda1, double lambda2, PriorDiagonal diagonal,
                        const SolverOptions& options) {
  return fit(stack_streams(train.streams), train.labels, estimate_prior(train, diagonal), lambda1, lambda2, options);
}

CrossValidationResult cross_validate(const Dataset& train, const CrossValidationOptions& options) {
  if (options.lambda1_grid.empty()) throw ValidationError("cross_validate: empty lambda1 grid");
  if (options.folds < 2) throw ValidationError("cross_validate: need at least 2 folds");
  for (double l1 : options.lambda1_grid)
    if (!(l1 >= 0.0)) throw ValidationError("cross_validate: lambda1 values must be >= 0");
  validate(train);

  CrossValidationResult result;
  const std::size_t grid = options.lambda1_grid.size();
  if (grid == 1) {
    result.best_lambda1 = options.lambda1_grid.front();
    result.model = fit_dataset(train, result.best_lambda1, options.lambda2, options.diagonal, options.solver);
    return result;
  }

  const auto folds = split_folds(train, options.folds, options.seed);
  std::vector<Dataset> fold_train, fold_valid;
  for (const auto& fold : folds) {
    fold_train.push_back(subset(train, fold.train));
    fold_valid.push_back(subset(train, fold.validation));
    if (fold_train.back().samples() == 0 || fold_valid.back().samples() == 0)
      throw ValidationError("cross_validate: degenerate fold");
  }

  // One job per (grid point, fold); slot order fixes the reduction order.
  std::vector<double> scores(grid * folds.size());
  parallel_for(scores.size(), options.threads, [&](std::size_t job) {
    const std::size_t g = job / folds.size();
    const std::size_t f = job % folds.size();
    const FusionModel model =
        fit_dataset(fold_train[f], options.lambda1_grid[g], options.lambda2, options.diagonal, options.solver);
    const Matrix fused = predict(model, stack_streams(fold_valid[f].streams).matrix);
    scores[job] = headline_metric(fused, fold_valid[f].labels, train.mode);
  });

  std::size_t best = 0;
  for (std::size_t g = 0; g < grid; ++g) {
    double total = 0.0;
    for (std::size_t f = 0; f < folds.size(); ++f) total += scores[g * folds.size() + f];
    result.mean_scores.push_back(total / static_cast<double>(folds.size()));
    const double current = result.mean_scores[g];
    const double incumbent = result.mean_scores[best];
    if (current > incumbent || (current == incumbent && options.lambda1_grid[g] < options.lambda1_grid[best])) best = g;
  }
  result.best_lambda1 = options.lambda1_grid[best];
  result.model = fit_dataset(train, result.best_lambda1, options.lambda2, options.diagonal, options.solver);
  return result;
}

}  // namespace fusionforge
