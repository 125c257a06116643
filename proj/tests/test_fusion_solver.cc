#include <cmath>
#include <limits>

#include "doctest.h"
#include "fusionforge/baselines.hpp"
#include "fusionforge/error.hpp"
#include "fusionforge/fusion_solver.hpp"
#include "fusionforge/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fusionforge;

TEST_CASE("logistic_loss closed forms") {
  const auto in = oracle::random_instance(1, 7, 3, 2);
  CHECK(logistic_loss(Matrix::Zero(6, 3), in.S, in.Y) == doctest::Approx(7 * 3 * std::log(2.0)).epsilon(1e-14));

  Matrix s(1, 1), y(1, 1), w(1, 1);
  s << 1.0;
  y << 1.0;
  w << 3.0;
  CHECK(logistic_loss(w, s, y) == doctest::Approx(std::log1p(std::exp(-3.0))).epsilon(1e-15));
  CHECK(logistic_loss(w, s, y) == doctest::Approx(0.048587).epsilon(1e-5));
}

TEST_CASE("logistic_loss matches extended-precision re-summation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto in = oracle::random_instance(seed, 20, 4, 3);
    in.W *= 4.0;
    const double expected = static_cast<double>(oracle::logistic_loss(in.W, in.S, in.Y));
    CHECK(std::abs(logistic_loss(in.W, in.S, in.Y) - expected) <= 1e-12 * expected);
  }
}

TEST_CASE("logistic_loss stays finite for huge margins") {
  Matrix s(1, 1), y(1, 1), w(1, 1);
  s << 1.0;
  y << 0.0;
  w << 1e4;
  CHECK(logistic_loss(w, s, y) == doctest::Approx(1e4));
  w << -1e4;
  CHECK(logistic_loss(w, s, y) == 0.0);
}

TEST_CASE("objective combines the loss and both regularizers") {
  const auto in = oracle::random_instance(2, 10, 3, 2);
  CHECK(objective(in.W, in.S, in.Y, in.V, 0.0, 0.0) == logistic_loss(in.W, in.S, in.Y));
  CHECK(objective(in.V, in.S, in.Y, in.V, 0.7, 0.0) == logistic_loss(in.V, in.S, in.Y));

  // Zero-sample data contributes no loss.
  Matrix w(1, 2), v = Matrix::Zero(1, 2);
  w << 1.0, -2.0;
  const Matrix no_samples(0, 1), no_labels(0, 2);
  CHECK(objective(w, no_samples, no_labels, v, 0.5, 0.1) == doctest::Approx(2.8).epsilon(1e-15));
  CHECK_THROWS_AS(objective(w, no_samples, no_labels, v, -1.0, 0.0), ValidationError);
}

TEST_CASE("smooth_gradient closed forms") {
  SUBCASE("zero margins") {
    const auto in = oracle::random_instance(3, 9, 3, 2);
    const Matrix g = smooth_gradient(Matrix::Zero(6, 3), in.S, in.Y, in.V, 0.0);
    for (Index c = 0; c < 3; ++c) {
      Eigen::VectorXd expected = Eigen::VectorXd::Zero(6);
      for (Index n = 0; n < 9; ++n) expected += (1.0 - 2.0 * in.Y(n, c)) * 0.5 * in.S.row(n).transpose();
      CHECK((g.col(c) - expected).cwiseAbs().maxCoeff() <= 1e-14);
    }
  }
  SUBCASE("quadratic term alone") {
    const auto in = oracle::random_instance(4, 1, 3, 2);
    const Matrix none(0, 6), labels(0, 3);
    CHECK(smooth_gradient(in.W, none, labels, in.V, 0.3) == 2.0 * 0.3 * (in.W - in.V));
  }
}

TEST_CASE("smooth_gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto in = oracle::random_instance(100 + seed, 30, 4, 3);
    const double lambda1 = 0.1 * static_cast<double>(seed);
    const Matrix analytic = smooth_gradient(in.W, in.S, in.Y, in.V, lambda1);
    const Matrix numeric = oracle::central_difference(
        [&](const Matrix& w) { return oracle::smooth_objective(w, in.S, in.Y, in.V, lambda1); }, in.W, 1e-5);
    CHECK(oracle::max_relative_error(analytic, numeric, 1e-8) <= 1e-6);
  }
}

TEST_CASE("soft_threshold closed forms") {
  CHECK(soft_threshold(1.0, 0.3) == 0.7);
  CHECK(soft_threshold(-1.0, 0.3) == -0.7);
  CHECK(soft_threshold(0.2, 0.3) == 0.0);
  CHECK(std::signbit(soft_threshold(-0.2, 0.3)));
  CHECK(!std::signbit(soft_threshold(0.2, 0.3)));
  const auto in = oracle::random_instance(5, 1, 3, 3);
  CHECK(soft_threshold(in.W, 0.0) == in.W);
  CHECK_THROWS_AS(soft_threshold(1.0, -0.1), ValidationError);
}

TEST_CASE("soft_threshold minimizes the prox objective") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const double x = rng.uniform(-3.0, 3.0);
    const double tau = rng.uniform(0.0, 2.0);
    const auto prox = [&](double u) { return 0.5 * (u - x) * (u - x) + tau * std::abs(u); };
    const double u_star = soft_threshold(x, tau);
    for (int k = -4000; k <= 4000; ++k) {
      const double u = k * 1e-3;
      CHECK(prox(u_star) <= prox(u) + 1e-15);
    }
  }
}

TEST_CASE("fit descends monotonically and records its trace") {
  const auto in = oracle::random_instance(7, 40, 4, 3);
  const FusionModel model = fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 4), 1e-2, 1e-1);
  const auto& trace = model.report.objective_trace;
  REQUIRE(trace.size() >= 2);
  for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1] + 1e-12);
  CHECK(model.report.converged);
  CHECK(model.report.iterations == static_cast<int>(trace.size()) - 1);
  CHECK(trace.back() == doctest::Approx(objective(model.weights, in.S, in.Y, in.V, 1e-2, 1e-1)).epsilon(1e-15));
}

TEST_CASE("fit with huge l1 weight returns all zeros") {
  const auto in = oracle::random_instance(8, 30, 3, 2);
  const FusionModel model = fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 3), 0.0, 1e3);
  CHECK(model.weights.isZero(0.0));
  CHECK(model.report.sparsity == 1.0);
  CHECK(model.report.objective_trace.back() == doctest::Approx(30 * 3 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("fit without regularization agrees with plain gradient descent") {
  const auto in = oracle::random_instance(9, 40, 3, 2);
  const FusionModel model = fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 3), 0.0, 0.0);
  const double reference = static_cast<double>(oracle::logistic_gd_objective(in.S, in.Y, 1e-10, 2'000'000));
  CHECK(std::abs(model.report.objective_trace.back() - reference) <= 1e-4 * reference);
}

TEST_CASE("fit reaches the same optimum from zeros and prior") {
  const auto in = oracle::random_instance(10, 50, 4, 2);
  SolverOptions zeros;
  zeros.init = InitMode::zeros;
  const double a = fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 4), 1e-2, 1e-3).report.objective_trace.back();
  const double b =
      fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 4), 1e-2, 1e-3, zeros).report.objective_trace.back();
  CHECK(std::abs(a - b) <= 1e-5 * std::abs(a));
}

TEST_CASE("fit is bit-reproducible") {
  const auto in = oracle::random_instance(11, 30, 3, 3);
  const FusionModel a = fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 3), 1e-3, 1e-2);
  const FusionModel b = fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 3), 1e-3, 1e-2);
  CHECK(a.weights == b.weights);
  CHECK(a.report.objective_trace == b.report.objective_trace);
}

TEST_CASE("large lambda1 pulls W onto the prior") {
  const auto in = oracle::random_instance(12, 30, 3, 2);
  const FusionModel model = fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 3), 1e6, 0.0);
  CHECK((model.weights - in.V).norm() < 1e-3);
}

TEST_CASE("sparsity grows with lambda2") {
  const auto in = oracle::random_instance(13, 40, 4, 3);
  double previous = -1.0;
  for (double lambda2 : {0.0, 1e-3, 1e-1, 10.0}) {
    const FusionModel model = fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 4), 0.0, lambda2);
    CHECK(model.report.sparsity >= previous);
    previous = model.report.sparsity;
  }
}

TEST_CASE("fit validates inputs") {
  const auto in = oracle::random_instance(14, 10, 3, 2);
  CHECK_THROWS_AS(fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 3), -1.0, 0.0), ValidationError);
  CHECK_THROWS_AS(fit(as_stacked(in.S.leftCols(3)), as_labels(in.Y), as_prior(in.V, 3), 0.0, 0.0), ValidationError);
  SolverOptions bad;
  bad.backtrack = 1.5;
  CHECK_THROWS_AS(fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 3), 0.0, 0.0, bad), ValidationError);
  Matrix s = in.S;
  s(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(fit(as_stacked(s), as_labels(in.Y), as_prior(in.V, 3), 0.0, 0.0), ValidationError);
}

TEST_CASE("predict applies the logistic link") {
  FusionModel model;
  model.weights = Matrix::Zero(4, 2);
  const Matrix s = Matrix::Constant(3, 4, 0.5);
  CHECK(predict(model, s).isConstant(0.5));
  CHECK_THROWS_AS(predict(model, Matrix::Zero(3, 5)), ValidationError);

  model.weights(1, 0) = 2.0;
  Matrix bumped = s;
  bumped(0, 1) += 0.1;
  CHECK(predict(model, bumped)(0, 0) > predict(model, s)(0, 0));
}

TEST_CASE("prior weights on perfect streams reproduce the shared argmax") {
  SynthConfig cfg;
  cfg.n_train = 60;
  cfg.n_test = 1;
  cfg.n_classes = 4;
  cfg.n_streams = 2;
  cfg.reliability = Matrix::Ones(2, 4);
  cfg.seed = 3;
  const auto [train, test] = generate_synthetic(cfg);
  FusionModel model;
  model.prior = estimate_prior(train);
  model.weights = model.prior.stacked;
  CHECK(model.weights.middleRows(0, 4) == Matrix::Identity(4, 4));
  const Matrix fused = predict(model, stack_streams(train.streams).matrix);
  for (Index n = 0; n < fused.rows(); ++n) CHECK(argmax(fused.row(n)) == argmax(train.streams[0].scores.row(n)));
}

TEST_CASE("a single perfect stream stays perfect after fusion") {
  SynthConfig cfg;
  cfg.n_train = 200;
  cfg.n_test = 1;
  cfg.n_streams = 1;
  cfg.n_classes = 4;
  cfg.reliability = Matrix::Ones(1, 4);
  cfg.seed = 17;
  const auto [train, test] = generate_synthetic(cfg);
  const FusionModel model = fit_dataset(train, 1e-3, 1e-3, PriorDiagonal::accuracy);
  CHECK(accuracy(train.streams[0].scores, train.labels) == 1.0);
  CHECK(accuracy(predict(model, stack_streams(train.streams).matrix), train.labels) == 1.0);
}

TEST_CASE("cross_validate selection rules") {
  SynthConfig cfg;
  cfg.n_train = 90;
  cfg.n_test = 1;
  cfg.reliability = striped_reliability(3, 6);
  cfg.seed = 4;
  const auto [train, test] = generate_synthetic(cfg);

  SUBCASE("singleton grid") {
    CrossValidationOptions opts;
    opts.lambda1_grid = {3e-3};
    const auto result = cross_validate(train, opts);
    CHECK(result.best_lambda1 == 3e-3);
    CHECK(result.model.lambda1 == 3e-3);
    CHECK(result.mean_scores.empty());
  }
  SUBCASE("identical scores go to the smaller lambda1") {
    CrossValidationOptions opts;
    opts.lambda1_grid = {1e-3, 1e-3 * (1.0 + 1e-15)};
    std::swap(opts.lambda1_grid[0], opts.lambda1_grid[1]);
    const auto result = cross_validate(train, opts);
    REQUIRE(result.mean_scores.size() == 2);
    CHECK(result.mean_scores[0] == result.mean_scores[1]);
    CHECK(result.best_lambda1 == 1e-3);
  }
  SUBCASE("defaults and determinism") {
    CrossValidationOptions opts;
    CHECK(opts.lambda1_grid == std::vector<double>{1e-5, 1e-4, 1e-3, 1e-2});
    CHECK(opts.lambda2 == 1e-3);
    const auto a = cross_validate(train, opts);
    opts.threads = 4;
    const auto b = cross_validate(train, opts);
    CHECK(a.mean_scores == b.mean_scores);
    CHECK(a.model.weights == b.model.weights);
    CHECK(a.model.lambda2 == 1e-3);
  }
  SUBCASE("errors") {
    CrossValidationOptions opts;
    opts.lambda1_grid.clear();
    CHECK_THROWS_AS(cross_validate(train, opts), ValidationError);
    opts.lambda1_grid = {1e-3};
    opts.folds = 1;
    CHECK_THROWS_AS(cross_validate(train, opts), ValidationError);
  }
}

TEST_CASE("fit rejects a prior whose stream order differs from the scores") {
  const auto in = oracle::random_instance(20, 30, 2, 3);
  const StackedScores stacked{in.S, {"a", "b"}};
  const PriorMatrix prior = stack_priors({Matrix::Identity(2, 2), Matrix::Identity(2, 2)}, {"b", "a"});
  CHECK_THROWS_AS(fit(stacked, as_labels(in.Y), prior, 1e-3, 1e-3), ValidationError);
}
