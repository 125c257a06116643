// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cli.hpp"
#include "fusionforge/baselines.hpp"
#include "fusionforge/log.hpp"
#include "fusionforge/metrics.hpp"
#include "fusionforge/parallel.hpp"
#include "fusionforge/temporal_lstm.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fusionforge;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Criterion 6 and 7 share the generator setup.
SynthConfig striped_config(Index n_train, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_classes = 6;
  cfg.n_streams = 3;
  cfg.n_train = n_train;
  cfg.n_test = 3000;
  cfg.reliability = striped_reliability(3, 6, 0.9, 0.55);
  cfg.seed = seed;
  return cfg;
}

Outcome fusion_gradient_oracle() {
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto n = static_cast<Index>(10 + rng.index(41));
    const auto c = static_cast<Index>(2 + rng.index(5));
    const auto m = static_cast<Index>(1 + rng.index(4));
    const double lambda1 = std::vector<double>{0.0, 1e-3, 0.1, 1.0}[rng.index(4)];
    const auto in = oracle::random_instance(rng.next(), n, c, m);
    const Matrix analytic = smooth_gradient(in.W, in.S, in.Y, in.V, lambda1);
    const Matrix numeric = oracle::central_difference(
        [&](const Matrix& w) { return oracle::smooth_objective(w, in.S, in.Y, in.V, lambda1); }, in.W, 1e-5);
    worst = std::max(worst, oracle::max_relative_error(analytic, numeric, 1e-8));
  }
  return {worst <= 1e-6, fmt::format("max relative error {:.2e} over 20 instances (limit 1e-6)", worst)};
}

Outcome prox_oracle() {
  long mismatches = 0, points = 0;
  for (double tau : {0.0, 0.1, 0.3, 1.0, 2.5}) {
    std::vector<double> xs;
    const int grid = 20000;
    for (int k = 0; k < grid; ++k) xs.push_back(-4.0 + 8.0 * k / (grid - 1));
    for (double edge : {tau, -tau}) {
      xs.push_back(edge);
      xs.push_back(std::nextafter(edge, 10.0));
      xs.push_back(std::nextafter(edge, -10.0));
    }
    for (double x : xs) {
      const double sign = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      const double expected = sign * std::max(std::abs(x) - tau, 0.0);
      mismatches += std::bit_cast<std::uint64_t>(soft_threshold(x, tau)) != std::bit_cast<std::uint64_t>(expected);
      ++points;
    }
  }
  return {mismatches == 0 && points >= 100000,
          fmt::format("{} bit mismatches over {} points including x = +-tau", mismatches, points)};
}

Outcome monotone_descent() {
  const std::vector<double> l1s{0.0, 1e-4, 1e-2}, l2s{0.0, 1e-3, 1e-1};
  double worst_rise = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < 50; ++i) {
    const auto in = oracle::random_instance(200 + static_cast<std::uint64_t>(i), 20 + i, 2 + i % 5, 1 + i % 4);
    const double l1 = l1s[static_cast<std::size_t>(i % 3)];
    const double l2 = l2s[static_cast<std::size_t>((i / 3) % 3)];
    const auto trace =
        fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, in.Y.cols()), l1, l2).report.objective_trace;
    for (std::size_t k = 1; k < trace.size(); ++k) worst_rise = std::max(worst_rise, trace[k] - trace[k - 1]);
  }
  return {worst_rise <= 1e-12,
          fmt::format("largest step-to-step change {:.3e} over 50 fits (slack 1e-12)", worst_rise)};
}

Outcome init_independence() {
  double worst = 0.0;
  SolverOptions zeros;
  zeros.init = InitMode::zeros;
  for (int i = 0; i < 10; ++i) {
    const auto in = oracle::random_instance(300 + static_cast<std::uint64_t>(i), 50, 2 + i % 5, 1 + i % 4);
    const auto prior = as_prior(in.V, in.Y.cols());
    const double a = fit(as_stacked(in.S), as_labels(in.Y), prior, 1e-2, 1e-3).report.objective_trace.back();
    const double b = fit(as_stacked(in.S), as_labels(in.Y), prior, 1e-2, 1e-3, zeros).report.objective_trace.back();
    worst = std::max(worst, std::abs(a - b) / std::abs(a));
  }
  return {worst <= 1e-5, fmt::format("max relative gap {:.2e} over 10 instances (limit 1e-5)", worst)};
}

Outcome degenerate_logistic() {
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    const auto in = oracle::random_instance(400 + static_cast<std::uint64_t>(i), 40, 3, 2);
    const double ours =
        fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 3), 0.0, 0.0).report.objective_trace.back();
    const double reference = static_cast<double>(oracle::logistic_gd_objective(in.S, in.Y, 1e-10, 2'000'000));
    worst = std::max(worst, std::abs(ours - reference) / reference);
  }
  return {worst <= 1e-4, fmt::format("max relative gap {:.2e} to plain gradient descent (limit 1e-4)", worst)};
}

Outcome fusion_ordering() {
  double average = 0.0, adaptive = 0.0, logistic = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [train, test] = generate_synthetic(striped_config(600, seed));
    const Matrix stacked_test = stack_streams(test.streams).matrix;
    CrossValidationOptions cv;
    cv.seed = seed;
    cv.threads = threads_from_env(std::max(1u, std::thread::hardware_concurrency()));
    const auto selected = cross_validate(train, cv);
    const auto plain = plain_logistic_fusion_fit(stack_streams(train.streams), train.labels);
    average += accuracy(average_fusion(test.streams).scores, test.labels) / 10.0;
    adaptive += accuracy(predict(selected.model, stacked_test), test.labels) / 10.0;
    logistic += accuracy(predict(plain, stacked_test), test.labels) / 10.0;
  }
  return {adaptive - average >= 0.03 && adaptive >= logistic,
          fmt::format("mean accuracy adaptive {:.4f}, average {:.4f} (margin {:.4f}, need 0.03), logistic {:.4f}",
                      adaptive, average, adaptive - average, logistic)};
}

Outcome prior_regularizer_value() {
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [train, test] = generate_synthetic(striped_config(60, seed));
    const Matrix stacked_test = stack_streams(test.streams).matrix;
    CrossValidationOptions cv;
    cv.seed = seed;
    const auto selected = cross_validate(train, cv);
    const auto unregularized = fit_dataset(train, 0.0, cv.lambda2, cv.diagonal, cv.solver);
    const double a = accuracy(predict(selected.model, stacked_test), test.labels);
    const double b = accuracy(predict(unregularized, stacked_test), test.labels);
    wins += selected.best_lambda1 > 0.0 && a > b;
    per_seed += fmt::format(" {:+.4f}", a - b);
  }
  return {wins >= 8,
          fmt::format("CV-selected lambda1 beats lambda1 = 0 on {}/10 seeds (need 8); gains{}", wins, per_seed)};
}

Outcome sparsity_monotone() {
  const auto in = oracle::random_instance(500, 40, 4, 3);
  std::vector<double> zeros;
  for (double l2 : {0.0, 1e-3, 1e-1, 10.0})
    zeros.push_back(fit(as_stacked(in.S), as_labels(in.Y), as_prior(in.V, 4), 0.0, l2).report.sparsity);
  bool monotone = true;
  for (std::size_t k = 1; k < zeros.size(); ++k) monotone = monotone && zeros[k] >= zeros[k - 1];
  return {monotone && zeros.back() >= 0.99,
          fmt::format("zero fractions {:.3f} {:.3f} {:.3f} {:.3f}", zeros[0], zeros[1], zeros[2], zeros[3])};
}

Outcome lstm_gradient_oracle() {
  double worst = 0.0;
  int nets = 0;
  for (const auto& hidden : {std::vector<Index>{5}, std::vector<Index>{5, 4}})
    for (Index steps : {1, 7})
      for (double scale : {0.08, 0.5}) {
        const auto net = lstm::Network::random(3, hidden, 4, 600 + static_cast<std::uint64_t>(nets), scale, 1.0);
        Rng rng(700 + static_cast<std::uint64_t>(nets));
        lstm::SequenceSample sample;
        for (Index t = 0; t < steps; ++t) {
          Vector x(3);
          for (Index i = 0; i < 3; ++i) x(i) = rng.uniform(-1.0, 1.0);
          sample.inputs.push_back(x);
        }
        sample.label = static_cast<Index>(rng.index(4));
        const auto flat = lstm::flatten(lstm::bptt_gradients(net, sample));
        const auto theta = lstm::flatten(net);
        const Matrix analytic = Eigen::Map<const Matrix>(flat.data(), static_cast<Index>(flat.size()), 1);
        const Matrix x0 = Eigen::Map<const Matrix>(theta.data(), static_cast<Index>(theta.size()), 1);
        lstm::Network probe = net;
        const Matrix numeric = oracle::central_difference(
            [&](const Matrix& x) {
              lstm::unflatten(probe, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
              return lstm::loss(probe, sample);
            },
            x0, 1e-5);
        worst = std::max(worst, oracle::max_relative_error(analytic, numeric, lstm::kGradientCheckFloor));
        ++nets;
      }
  return {worst <= 1e-4,
          fmt::format("max relative error {:.2e} over {} nets, 1-2 layers, T in {{1, 7}} (limit 1e-4)", worst, nets)};
}

Outcome lstm_toy_learning() {
  double train = 0.0, held = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    lstm::MajorityExperiment experiment;
    experiment.task.seq_len = 20;
    experiment.task.classes = 4;
    experiment.hidden = {16, 12};
    experiment.train.max_iters = 5000;
    experiment.seed = seed;
    const auto outcome = lstm::run_majority_experiment(experiment);
    train += outcome.train_accuracy / 5.0;
    held += outcome.holdout_accuracy / 5.0;
  }
  return {train >= 0.95 && held >= 0.90,
          fmt::format("mean train accuracy {:.4f} (need 0.95), held-out {:.4f} (need 0.90)", train, held)};
}

Outcome metrics_oracle() {
  Rng rng(800);
  int ap_mismatch = 0;
  double map_gap = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> scores(12), labels(12);
    for (auto& v : scores) v = std::round(rng.uniform() * 6.0) / 6.0;
    for (auto& v : labels) v = rng.uniform() < 0.35 ? 1.0 : 0.0;
    labels[rng.index(12)] = 1.0;
    ap_mismatch += average_precision(scores, labels) != oracle::average_precision(scores, labels);

    Matrix pred(12, 4);
    for (Index k = 0; k < pred.size(); ++k) pred(k) = rng.uniform();
    LabelMatrix multi;
    multi.labels = Matrix::Zero(12, 4);
    for (Index k = 0; k < multi.labels.size(); ++k) multi.labels(k) = rng.uniform() < 0.3 ? 1.0 : 0.0;
    for (Index c = 0; c < 4; ++c) multi.labels(static_cast<Index>(rng.index(12)), c) = 1.0;
    double mean = 0.0;
    for (Index c = 0; c < 4; ++c) {
      const std::vector<double> s(pred.col(c).data(), pred.col(c).data() + 12);
      const std::vector<double> y(multi.labels.col(c).data(), multi.labels.col(c).data() + 12);
      mean += oracle::average_precision(s, y) / 4.0;
    }
    map_gap = std::max(map_gap, std::abs(mean_ap(pred, multi).map - mean));
  }
  return {ap_mismatch == 0 && map_gap <= 1e-12,
          fmt::format("{} AP mismatches over 100 instances; max mAP gap {:.1e} (limit 1e-12)", ap_mismatch, map_gap)};
}

Outcome determinism() {
  TempDir dir("acceptance");
  std::ostringstream sink;
  const auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  const std::string gen = (dir / "gen").string(), fit_dir = (dir / "fit").string(), net = (dir / "lstm").string();
  bool ok = run({"gen", "--classes", "6", "--streams", "3", "--train", "120", "--test", "300", "--seed", "11", "--out",
                 gen}) == 0 &&
            run({"fit", "--manifest", gen + "/train.json", "--lambda1", "cv", "--seed", "11", "--out", fit_dir}) == 0 &&
            run({"lstm", "train", "--hidden", "8,6", "--seq-len", "10", "--count", "200", "--holdout", "100", "--iters",
                 "200", "--seed", "11", "--out", net}) == 0;
  if (!ok) return {false, "a source command failed: " + sink.str()};
  std::vector<std::string> identical;
  for (const auto& [source, artifact] :
       {std::pair{"gen", "train.json"}, std::pair{"fit", "model.json"}, std::pair{"lstm", "network.json"}}) {
    const auto again = dir / (std::string(source) + "_replay");
    if (run({"replay", "--from", (dir / source / artifact).string(), "--out", again.string()}) != 0 ||
        !identical_dirs(dir / source, again))
      ok = false;
    else
      identical.push_back(source);
  }
  return {ok, fmt::format("byte-identical replays: {}", fmt::join(identical, ", "))};
}

}  // namespace

int main() {
  logger()->set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"fusion gradient oracle", fusion_gradient_oracle},
      {"prox oracle", prox_oracle},
      {"monotone descent", monotone_descent},
      {"initialization independence", init_independence},
      {"degenerate logistic case", degenerate_logistic},
      {"fusion method ordering", fusion_ordering},
      {"prior regularizer value", prior_regularizer_value},
      {"sparsity monotonicity", sparsity_monotone},
      {"lstm gradient oracle", lstm_gradient_oracle},
      {"lstm toy learning", lstm_toy_learning},
      {"metrics oracle", metrics_oracle},
      {"determinism", determinism},
  };
  int failed = 0, index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !outcome.pass;
    std::printf("%s %2d %-28s %s [%.1f s]\n", outcome.pass ? "PASS" : "FAIL", index, name.c_str(),
                outcome.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", index - failed, index);
  return failed == 0 ? 0 : 1;
}
