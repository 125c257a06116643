#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusionforge/class_prior.hpp"
#include "fusionforge/score_data.hpp"

namespace fusionforge {

enum class InitMode { prior, zeros };

struct SolverOptions {
  int max_iters = 10000;
  double rel_tol = 1e-8;      // stop when (F_k - F_k+1) / |F_k| falls below this
  double initial_step = 1.0;  // eta_0
  double backtrack = 0.5;     // step shrink factor beta, in (0, 1)
  double armijo = 1e-4;       // sufficient-decrease constant
  InitMode init = InitMode::prior;
};

void validate(const SolverOptions& options);

struct FitReport {
  std::vector<double> objective_trace;  // trace[0] is the objective at the initial point
  int iterations = 0;
  bool converged = false;
  double final_step_size = 0.0;
  double sparsity = 0.0;  // fraction of entries of W that are exactly zero
};

/// Class-adaptive fusion weights: column c of `weights` maps the stacked
/// score vector s_n (length C*M) to the fused logit of class c.
struct FusionModel {
  Matrix weights;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  PriorMatrix prior;
  std::vector<std::string> stream_order;
  FitReport report;

  Index classes() const { return weights.cols(); }
  Index streams() const { return classes() == 0 ? 0 : weights.rows() / classes(); }
};

// -- objective pieces. S is N x CM, W and V are CM x C, Y is N x C. ----------

/// sum_{n,c} log(1 + exp((1 - 2 y_nc) s_n^T w_c)), summed in row-major order.
double logistic_loss(const Matrix& weights, const Matrix& stacked, const Matrix& labels);

/// logistic_loss + lambda1 * ||W - V||_F^2 + lambda2 * ||W||_1
double objective(const Matrix& weights, const Matrix& stacked, const Matrix& labels, const Matrix& prior,
                 double lambda1, double lambda2);

/// Gradient of the smooth part logistic_loss + lambda1 * ||W - V||_F^2.
Matrix smooth_gradient(const Matrix& weights, const Matrix& stacked, const Matrix& labels, const Matrix& prior,
                       double lambda1);

double soft_threshold(double x, double tau);
Matrix soft_threshold(const Matrix& x, double tau);

/// Proximal gradient descent: W <- soft_threshold(W - eta * grad, eta * lambda2)
/// with backtracking on eta until the objective drops by at least
/// armijo / eta * ||W_new - W||^2.
FusionModel fit(const StackedScores& stacked, const LabelMatrix& labels, const PriorMatrix& prior, double lambda1,
                double lambda2, const SolverOptions& options = {});

/// Entrywise sigma(S W); one column per class, values in (0, 1).
Matrix predict(const FusionModel& model, const Matrix& stacked);
ScoreMatrix predict(const FusionModel& model, const StackedScores& stacked, std::vector<std::string> sample_ids);

/// Logistic sigma computed without overflow for any finite input.
double sigmoid(double z);

struct CrossValidationOptions {
  std::vector<double> lambda1_grid{1e-5, 1e-4, 1e-3, 1e-2};
  double lambda2 = 1e-3;
  Index folds = 3;
  std::uint64_t seed = 0;
  PriorDiagonal diagonal = PriorDiagonal::accuracy;
  SolverOptions solver;
  unsigned threads = 1;
};

struct CrossValidationResult {
  double best_lambda1 = 0.0;
  std::vector<double> mean_scores;  // aligned with lambda1_grid
  FusionModel model;                // refit on the full training set
};

/// Picks lambda1 by k-fold validation (accuracy for single-label, mAP for
/// multi-label; ties go to the smaller lambda1). Each fold estimates its prior
/// from its own training portion; the final model uses a full-train prior.
CrossValidationResult cross_validate(const Dataset& train, const CrossValidationOptions& options);

/// Fits the full-train prior and model for fixed lambdas.
FusionModel fit_dataset(const Dataset& train, double lambda1, double lambda2, PriorDiagonal diagonal,
                        const SolverOptions& options = {});

}  // namespace fusionforge
