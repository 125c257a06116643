#include "cli.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "fusionforge/baselines.hpp"
#include "fusionforge/class_prior.hpp"
#include "fusionforge/error.hpp"
#include "fusionforge/fusion_solver.hpp"
#include "fusionforge/io.hpp"
#include "fusionforge/log.hpp"
#include "fusionforge/metrics.hpp"
#include "fusionforge/parallel.hpp"
#include "fusionforge/rng.hpp"
#include "fusionforge/score_data.hpp"
#include "fusionforge/temporal_lstm.hpp"

namespace fusionforge::cli {
namespace {

namespace fs = std::filesystem;

inline constexpr double kGradcheckLimit = 1e-4;
inline constexpr const char* kAllMethods = "streams,average,weighted,logistic,adaptive";

// Integers accept plain digits or any scientific spelling of a whole number.
std::uint64_t parse_count(const std::string& text, const std::string& flag) {
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  if (auto [ptr, ec] = std::from_chars(text.data(), end, value); ec == std::errc() && ptr == end) return value;
  double d = 0.0;
  if (auto [ptr, ec] = std::from_chars(text.data(), end, d);
      ec == std::errc() && ptr == end && d >= 0.0 && d <= 9007199254740992.0 && std::floor(d) == d)
    return static_cast<std::uint64_t>(d);
  throw ValidationError(fmt::format("{}: expected a non-negative integer, got '{}'", flag, text));
}

double parse_number(const std::string& text, const std::string& flag) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  if (auto [ptr, ec] = std::from_chars(text.data(), end, value);
      ec == std::errc() && ptr == end && std::isfinite(value))
    return value;
  throw ValidationError(fmt::format("{}: expected a number, got '{}'", flag, text));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) items.push_back(item);
  return items;
}

// Every option is bound to a string and converted after parsing, so the
// recorded config holds exactly the text a replay passes back in.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {}

  void add(const std::string& name, std::string fallback, const std::string& help) {
    auto& slot = values_.emplace_back(name, std::move(fallback));
    app_->add_option("--" + name, slot.second, help)->capture_default_str();
  }
  // `alias` is a second spelling; the config records the value under `name`.
  void path(const std::string& name, const std::string& help, bool must_exist, const std::string& alias = {}) {
    auto& slot = values_.emplace_back(name, std::string());
    const std::string names = alias.empty() ? "--" + name : "--" + name + ",--" + alias;
    auto* opt = app_->add_option(names, slot.second, help);
    if (must_exist) opt->required()->check(CLI::ExistingFile);
    paths_.push_back(name);
  }
  void flag(const std::string& name, const std::string& help) {
    flags_.emplace_back(name, false);
    app_->add_flag("--" + name, flags_.back().second, help);
  }

  const std::string& text(const std::string& name) const {
    for (const auto& [key, value] : values_)
      if (key == name) return value;
    throw std::logic_error("unknown option " + name);
  }
  bool has(const std::string& name) const { return !text(name).empty(); }
  bool on(const std::string& name) const {
    for (const auto& [key, value] : flags_)
      if (key == name) return value;
    throw std::logic_error("unknown flag " + name);
  }
  double number(const std::string& name) const { return parse_number(text(name), "--" + name); }
  std::uint64_t count(const std::string& name) const { return parse_count(text(name), "--" + name); }
  Index index(const std::string& name) const { return static_cast<Index>(count(name)); }
  fs::path file(const std::string& name) const { return fs::path(text(name)); }

  // Input paths are made absolute so a replay from any directory resolves them.
  Json config(const std::string& command) const {
    Json config;
    config["command"] = command;
    for (const auto& [key, value] : values_) {
      if (value.empty()) continue;
      const bool is_path = std::find(paths_.begin(), paths_.end(), key) != paths_.end();
      config[key] = is_path ? fs::absolute(value).lexically_normal().string() : value;
    }
    for (const auto& [key, value] : flags_)
      if (value) config[key] = true;
    return config;
  }

 private:
  CLI::App* app_;
  std::deque<std::pair<std::string, std::string>> values_;
  std::deque<std::pair<std::string, bool>> flags_;
  std::vector<std::string> paths_;
};

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Options> options;
  std::string out;
};

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError(fmt::format("cannot create output directory {}", dir));
  const fs::path probe = fs::path(dir) / ".write_probe";
  {
    std::ofstream test(probe);
    if (!test) throw ValidationError(fmt::format("output directory {} is not writable", dir));
  }
  fs::remove(probe, ec);
  return fs::path(dir);
}

Json with_config(const Json& config, const Json& body) {
  Json doc;
  doc["config"] = config;
  for (const auto& [key, value] : body.items()) doc[key] = value;
  return doc;
}

LoadOptions load_options(const Options& o) {
  LoadOptions options;
  options.softmax_rows = o.on("softmax");
  return options;
}

unsigned worker_threads() { return threads_from_env(std::max(1u, std::thread::hardware_concurrency())); }

// Orders the dataset's streams as the model expects them.
std::vector<ScoreMatrix> align_streams(const Dataset& data, const std::vector<std::string>& order) {
  std::vector<ScoreMatrix> aligned;
  for (const auto& id : order) {
    const auto it =
        std::find_if(data.streams.begin(), data.streams.end(), [&](const ScoreMatrix& s) { return s.stream_id == id; });
    if (it == data.streams.end())
      throw ValidationError(fmt::format("stream '{}' required by the model is missing", id));
    aligned.push_back(*it);
  }
  return aligned;
}

std::vector<Index> parse_hidden(const std::string& text) {
  std::vector<Index> hidden;
  for (const auto& item : split_list(text)) hidden.push_back(static_cast<Index>(parse_count(item, "--hidden")));
  if (hidden.empty()) throw ValidationError("--hidden: need at least one layer size");
  return hidden;
}

// --- gen -------------------------------------------------------------------

void add_gen(Options& o) {
  const SynthConfig d;
  o.add("classes", std::to_string(d.n_classes), "number of classes");
  o.add("streams", std::to_string(d.n_streams), "number of score streams");
  o.add("train", std::to_string(d.n_train), "training samples");
  o.add("test", std::to_string(d.n_test), "test samples");
  o.add("valid", std::to_string(d.n_valid), "held-out samples for the prior; 0 skips the split");
  o.add("high", "0.9", "reliability of a stream on its own classes");
  o.add("low", "0.55", "reliability elsewhere");
  o.add("sharpness", fmt::format("{}", d.confusion_sharpness), "confusion concentration");
  o.add("spread", fmt::format("{}", d.difficulty_spread), "shared difficulty spread");
  o.add("seed", "0", "random seed");
}

void run_gen(const Options& o, const fs::path& out, std::ostream& log) {
  SynthConfig config;
  config.n_classes = o.index("classes");
  config.n_streams = o.index("streams");
  config.n_train = o.index("train");
  config.n_test = o.index("test");
  config.n_valid = o.index("valid");
  config.confusion_sharpness = o.number("sharpness");
  config.difficulty_spread = o.number("spread");
  config.seed = o.count("seed");
  if (config.n_streams < 1 || config.n_classes < 2) throw ValidationError("--streams must be >= 1 and --classes >= 2");
  config.reliability = striped_reliability(config.n_streams, config.n_classes, o.number("high"), o.number("low"));
  const SyntheticSplits splits = generate_synthetic_splits(config);
  const Json cfg = o.config("gen");
  write_dataset(splits.train, out, "train", cfg);
  write_dataset(splits.test, out, "test", cfg);
  if (config.n_valid > 0) write_dataset(splits.valid, out, "valid", cfg);
  log << fmt::format("wrote {} train, {} test and {} validation samples to {}\n", config.n_train, config.n_test,
                     config.n_valid, out.string());
}

// --- prior -----------------------------------------------------------------

void add_prior(Options& o) {
  o.path("manifest", "validation-set manifest the prior is counted on", true, "from");
  o.add("prior-diagonal", "accuracy", "accuracy | zero");
  o.flag("softmax", "apply a row softmax to raw scores");
}

void run_prior(const Options& o, const fs::path& out, std::ostream& log) {
  const Dataset data = load_manifest(o.file("manifest"), load_options(o));
  const PriorMatrix prior = estimate_prior(data, parse_prior_diagonal(o.text("prior-diagonal")));
  write_json(with_config(o.config("prior"), Json{{"prior", prior_to_json(prior)}}), out / "prior.json");
  log << fmt::format("prior over {} streams written to {}\n", prior.per_stream.size(), (out / "prior.json").string());
}

// --- fit -------------------------------------------------------------------

void add_fit(Options& o) {
  const SolverOptions s;
  o.path("manifest", "training manifest", true);
  o.path("prior", "prior.json counted on held-out scores; default counts on the training scores", false);
  o.add("lambda1", "cv", "prior weight, or 'cv' to select from the default grid");
  o.add("lambda2", "1e-3", "L1 weight");
  o.add("prior-diagonal", "accuracy", "accuracy | zero");
  o.add("init", "prior", "prior | zeros");
  o.add("max-iters", std::to_string(s.max_iters), "solver iteration cap");
  o.add("rel-tol", fmt::format("{}", s.rel_tol), "relative objective decrease to stop at");
  o.add("folds", "3", "cross-validation folds");
  o.add("seed", "0", "fold assignment seed");
  o.flag("softmax", "apply a row softmax to raw scores");
}

void run_fit(const Options& o, const fs::path& out, std::ostream& log) {
  const Dataset train = load_manifest(o.file("manifest"), load_options(o));
  SolverOptions solver;
  solver.max_iters = static_cast<int>(o.count("max-iters"));
  solver.rel_tol = o.number("rel-tol");
  const std::string init = o.text("init");
  if (init == "zeros")
    solver.init = InitMode::zeros;
  else if (init != "prior")
    throw ValidationError("--init: expected prior or zeros, got '" + init + "'");
  const PriorDiagonal diagonal = parse_prior_diagonal(o.text("prior-diagonal"));
  const double lambda2 = o.number("lambda2");

  // A held-out prior fixes the stream order; the training streams follow it.
  std::optional<PriorMatrix> held_out;
  StackedScores stacked;
  if (o.has("prior")) {
    if (!fs::is_regular_file(o.file("prior"))) throw ValidationError("--prior: no such file " + o.text("prior"));
    const Json doc = read_json(o.file("prior"));
    held_out = prior_from_json(doc.contains("prior") ? doc.at("prior") : doc);
    stacked = stack_streams(align_streams(train, held_out->stream_order));
  } else {
    stacked = stack_streams(train.streams);
    logger()->info(
        "prior counted on the training scores; pass --prior from held-out scores to avoid an optimistic prior");
  }

  Json report;
  FusionModel model;
  if (o.text("lambda1") == "cv") {
    CrossValidationOptions cv;
    cv.lambda2 = lambda2;
    cv.folds = o.index("folds");
    cv.seed = o.count("seed");
    cv.diagonal = diagonal;
    cv.solver = solver;
    cv.threads = worker_threads();
    CrossValidationResult result = cross_validate(train, cv);
    model = std::move(result.model);
    if (held_out) model = fit(stacked, train.labels, *held_out, result.best_lambda1, lambda2, solver);
    report["lambda1_source"] = "cv";
    report["cv"] = Json{{"grid", cv.lambda1_grid}, {"mean_scores", result.mean_scores}, {"folds", cv.folds}};
  } else {
    const PriorMatrix prior = held_out ? *held_out : estimate_prior(train, diagonal);
    model = fit(stacked, train.labels, prior, o.number("lambda1"), lambda2, solver);
    report["lambda1_source"] = "fixed";
  }
  report["prior_source"] = held_out ? "held-out" : "training";
  report["lambda1"] = model.lambda1;
  report["lambda2"] = model.lambda2;
  if (model.lambda1 == 0.0 && model.lambda2 == 0.0) {
    report["note"] = "degenerates to logistic regression";
    logger()->warn("lambda1 = lambda2 = 0: degenerates to logistic regression");
  }
  const Json fit_report = report_to_json(model.report);
  for (const auto& [key, value] : fit_report.items()) report[key] = value;

  const Json cfg = o.config("fit");
  write_json(with_config(cfg, model_to_json(model)), out / "model.json");
  write_json(with_config(cfg, report), out / "fit_report.json");
  log << fmt::format("lambda1 {:g}  lambda2 {:g}  iterations {}  sparsity {:.3f}\n", model.lambda1, model.lambda2,
                     model.report.iterations, model.report.sparsity);
}

// --- predict ---------------------------------------------------------------

void add_predict(Options& o) {
  o.path("model", "model.json from fit", true);
  o.path("manifest", "manifest of the samples to score", true);
  o.flag("softmax", "apply a row softmax to raw scores");
}

void run_predict(const Options& o, const fs::path& out, std::ostream& log) {
  const FusionModel model = model_from_json(read_json(o.file("model")));
  const Dataset data = load_manifest(o.file("manifest"), load_options(o));
  const ScoreMatrix fused =
      predict(model, stack_streams(align_streams(data, model.stream_order)), data.labels.sample_ids);
  save_scores(fused, data.labels.class_names, out / "fused.csv");
  write_json(with_config(o.config("predict"), Json{{"samples", fused.scores.rows()}, {"scores", "fused.csv"}}),
             out / "predict.json");
  log << fmt::format("scored {} samples into {}\n", fused.scores.rows(), (out / "fused.csv").string());
}

// --- eval ------------------------------------------------------------------

void add_eval(Options& o) {
  o.path("manifest", "test manifest", true);
  o.add("methods", kAllMethods, "comma-separated subset of " + std::string(kAllMethods));
  o.path("model", "model.json from fit, for adaptive", false);
  o.path("train-manifest", "training manifest, for weighted and logistic", false);
  o.add("grid-step", "0.1", "simplex grid step for weighted fusion");
  o.add("folds", "3", "folds for the weighted-fusion search");
  o.add("seed", "0", "fold assignment seed");
  o.flag("softmax", "apply a row softmax to raw scores");
}

void run_eval(const Options& o, const fs::path& out, std::ostream& log) {
  const std::vector<std::string> methods = split_list(o.text("methods"));
  if (methods.empty()) throw ValidationError("--methods: nothing to evaluate");
  const std::vector<std::string> known = split_list(kAllMethods);
  for (const auto& m : methods)
    if (std::ranges::find(known, m) == known.end())
      throw ValidationError(fmt::format("--methods: unknown method '{}'", m));
  const auto wants = [&](const char* m) { return std::ranges::find(methods, m) != methods.end(); };
  if (wants("adaptive") && !o.has("model")) throw ValidationError("--model is required for the adaptive method");
  if ((wants("weighted") || wants("logistic")) && !o.has("train-manifest"))
    throw ValidationError("--train-manifest is required for the weighted and logistic methods");
  for (const char* name : {"model", "train-manifest"})
    if (o.has(name) && !fs::is_regular_file(o.file(name)))
      throw ValidationError(fmt::format("--{}: file not found: {}", name, o.text(name)));

  const Dataset test = load_manifest(o.file("manifest"), load_options(o));
  std::optional<Dataset> train;
  if (o.has("train-manifest")) train = load_manifest(o.file("train-manifest"), load_options(o));

  struct Row {
    std::string name;
    EvalReport report;
  };
  std::vector<Row> rows;
  const auto fused_output = [&](const std::string& name, const Matrix& scores) {
    save_scores(ScoreMatrix{name, scores, test.labels.sample_ids}, test.labels.class_names,
                out / ("fused_" + name + ".csv"));
    rows.push_back({name, evaluate(scores, test.labels, test.mode)});
  };

  for (const auto& method : methods) {
    if (method == "streams") {
      for (const auto& s : test.streams)
        rows.push_back({"stream:" + s.stream_id, evaluate(s.scores, test.labels, test.mode)});
    } else if (method == "average") {
      fused_output(method, average_fusion(test.streams).scores);
    } else if (method == "weighted") {
      const auto model = weighted_fusion_fit(*train, o.number("grid-step"), o.index("folds"), o.count("seed"));
      std::vector<std::string> order;
      for (const auto& s : train->streams) order.push_back(s.stream_id);
      fused_output(method, weighted_fusion_apply(model, align_streams(test, order)).scores);
    } else if (method == "logistic") {
      const FusionModel model = plain_logistic_fusion_fit(stack_streams(train->streams), train->labels);
      fused_output(method, predict(model, stack_streams(align_streams(test, model.stream_order)).matrix));
    } else if (method == "adaptive") {
      const FusionModel model = model_from_json(read_json(o.file("model")));
      fused_output(method, predict(model, stack_streams(align_streams(test, model.stream_order)).matrix));
    }
  }

  Json entries = Json::array();
  for (const auto& row : rows) {
    const Json metrics = eval_to_json(row.report);
    entries.push_back(Json{{"name", row.name},
                           {"accuracy", metrics.at("accuracy")},
                           {"map", metrics.at("map")},
                           {"per_class_ap", metrics.at("per_class_ap")}});
  }
  write_json(Json{{"config", o.config("eval")}, {"methods", entries}}, out / "results.json");

  std::ofstream table(out / "per_class.csv");
  table << "class";
  for (const auto& row : rows) table << ',' << row.name;
  table << '\n';
  for (std::size_t c = 0; c < test.labels.class_names.size(); ++c) {
    table << test.labels.class_names[c];
    for (const auto& row : rows) {
      const double ap = row.report.per_class_ap[c];
      table << ',' << (std::isnan(ap) ? std::string() : fmt::format("{:.17g}", ap));
    }
    table << '\n';
  }
  if (!table) throw ValidationError("cannot write " + (out / "per_class.csv").string());

  for (const auto& row : rows)
    log << fmt::format("{:<24} accuracy {}  mAP {:.4f}\n", row.name,
                       row.report.accuracy ? fmt::format("{:.4f}", *row.report.accuracy) : std::string("n/a"),
                       row.report.map);
}

// --- lstm ------------------------------------------------------------------

void add_lstm_train(Options& o) {
  const lstm::MajorityExperiment d;
  const lstm::MajorityTaskConfig& task = d.task;
  const lstm::TrainOptions& t = d.train;
  std::vector<std::string> sizes;
  for (Index h : d.hidden) sizes.push_back(std::to_string(h));
  o.add("hidden", fmt::format("{}", fmt::join(sizes, ",")), "hidden sizes, one per layer");
  o.add("seq-len", std::to_string(task.seq_len), "sequence length");
  o.add("classes", std::to_string(task.classes), "symbols and classes");
  o.add("bias", fmt::format("{}", task.bias), "chance a step repeats the label symbol");
  o.add("count", std::to_string(task.count), "training sequences");
  o.add("holdout", std::to_string(d.holdout), "held-out sequences");
  o.add("lr", fmt::format("{}", t.learning_rate), "learning rate");
  o.add("momentum", fmt::format("{}", t.momentum), "momentum");
  o.add("clip", fmt::format("{}", t.clip_norm), "global gradient-norm clip");
  o.add("iters", std::to_string(t.max_iters), "mini-batch updates");
  o.add("batch", std::to_string(t.batch_size), "mini-batch size");
  o.add("seed", "0", "random seed");
}

void run_lstm_train(const Options& o, const fs::path& out, std::ostream& log) {
  lstm::MajorityExperiment experiment;
  experiment.task.seq_len = o.index("seq-len");
  experiment.task.classes = o.index("classes");
  experiment.task.bias = o.number("bias");
  experiment.task.count = o.index("count");
  experiment.holdout = o.index("holdout");
  experiment.hidden = parse_hidden(o.text("hidden"));
  experiment.train.learning_rate = o.number("lr");
  experiment.train.momentum = o.number("momentum");
  experiment.train.clip_norm = o.number("clip");
  experiment.train.max_iters = static_cast<int>(o.count("iters"));
  experiment.train.batch_size = o.index("batch");
  experiment.seed = o.count("seed");
  const lstm::MajorityOutcome outcome = lstm::run_majority_experiment(experiment);
  const lstm::TrainResult& result = outcome.result;
  const double train_acc = outcome.train_accuracy;
  const double held_acc = outcome.holdout_accuracy;

  const Json cfg = o.config("lstm train");
  write_json(with_config(cfg, Json{{"network", network_to_json(result.net)}}), out / "network.json");
  Json report{{"train_accuracy", train_acc},
              {"holdout_accuracy", std::isnan(held_acc) ? Json(nullptr) : Json(held_acc)},
              {"final_loss", result.loss_trace.empty() ? Json(nullptr) : Json(result.loss_trace.back())},
              {"loss_trace", result.loss_trace}};
  write_json(with_config(cfg, report), out / "lstm_report.json");
  log << fmt::format("train accuracy {:.4f}  held-out accuracy {:.4f}\n", train_acc, held_acc);
}

void add_lstm_gradcheck(Options& o) {
  o.add("hidden", "4,3", "hidden sizes, one per layer");
  o.add("seq-len", "7", "sequence length");
  o.add("input", "3", "input dimension");
  o.add("classes", "3", "classes");
  o.add("scale", "0.5", "initial weight range");
  o.add("step", "1e-5", "finite-difference step");
  o.add("seed", "1", "random seed");
}

// Returns false when the error exceeds the limit.
bool run_lstm_gradcheck(const Options& o, const std::optional<fs::path>& out, std::ostream& log) {
  Rng rng(o.count("seed"));
  const Index input = o.index("input");
  const Index classes = o.index("classes");
  const auto net = lstm::Network::random(input, parse_hidden(o.text("hidden")), classes, rng.next(), o.number("scale"),
                                         o.number("scale"));
  lstm::SequenceSample sample;
  for (Index t = 0; t < o.index("seq-len"); ++t) {
    Vector x(input);
    for (Index i = 0; i < input; ++i) x(i) = rng.uniform(-1.0, 1.0);
    sample.inputs.push_back(x);
  }
  sample.label = static_cast<Index>(rng.index(static_cast<std::uint64_t>(classes)));
  const auto check = lstm::gradient_check(net, sample, o.number("step"));
  log << fmt::format("max relative error {:.3e} over {} parameters (limit {:g})\n", check.max_relative_error,
                     check.parameters, kGradcheckLimit);
  if (out)
    write_json(with_config(o.config("lstm gradcheck"), Json{{"max_relative_error", check.max_relative_error},
                                                            {"worst_parameter", check.worst_parameter},
                                                            {"parameters", check.parameters},
                                                            {"limit", kGradcheckLimit}}),
               *out / "gradcheck.json");
  return check.max_relative_error <= kGradcheckLimit;
}

// --- replay ----------------------------------------------------------------

std::vector<std::string> replay_args(const Json& config) {
  if (!config.is_object() || !config.contains("command") || !config["command"].is_string())
    throw ValidationError("replay: artifact has no usable config");
  std::vector<std::string> args;
  std::stringstream words(config["command"].get<std::string>());
  for (std::string w; words >> w;) args.push_back(w);
  for (const auto& [key, value] : config.items()) {
    if (key == "command") continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + key);
    } else if (value.is_string()) {
      args.push_back("--" + key);
      args.push_back(value.get<std::string>());
    } else {
      throw ValidationError(fmt::format("replay: config field '{}' is not a string or flag", key));
    }
  }
  return args;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, int depth);

int run_parsed(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, int depth) {
  CLI::App app{"Class-relationship-regularized late fusion of classifier scores", "fusionforge"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");

  std::vector<std::unique_ptr<Command>> commands;
  const auto add = [&](CLI::App* parent, const std::string& name, const std::string& help,
                       const std::function<void(Options&)>& define, bool out_required = true) {
    auto cmd = std::make_unique<Command>();
    cmd->app = parent->add_subcommand(name, help);
    cmd->options = std::make_unique<Options>(cmd->app);
    auto* opt = cmd->app->add_option("--out", cmd->out, "output directory");
    if (out_required) opt->required();
    define(*cmd->options);
    commands.push_back(std::move(cmd));
    return commands.back().get();
  };

  Command* gen = add(&app, "gen", "generate a synthetic dataset", add_gen);
  Command* prior = add(&app, "prior", "estimate the class-relationship prior", add_prior);
  Command* fit = add(&app, "fit", "fit the adaptive fusion model", add_fit);
  Command* pred = add(&app, "predict", "score a dataset with a fitted model", add_predict);
  Command* eval = add(&app, "eval", "compare fusion methods on a test set", add_eval);
  CLI::App* lstm_app = app.add_subcommand("lstm", "temporal LSTM toy experiments");
  lstm_app->require_subcommand(1);
  Command* lstm_train = add(lstm_app, "train", "train on the majority-symbol task", add_lstm_train);
  Command* lstm_check =
      add(lstm_app, "gradcheck", "compare BPTT against finite differences", add_lstm_gradcheck, false);
  CLI::App* replay = app.add_subcommand("replay", "rerun the command recorded in an artifact");
  std::string replay_from, replay_out;
  replay->add_option("--from", replay_from, "artifact JSON with an embedded config")
      ->required()
      ->check(CLI::ExistingFile);
  replay->add_option("--out", replay_out, "output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    for (const auto* sub : app.get_subcommands()) out << sub->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << "0.1.0\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (replay->parsed()) {
    if (depth > 0) throw ValidationError("replay: an artifact cannot request another replay");
    const Json artifact = read_json(replay_from);
    if (!artifact.contains("config")) throw ValidationError("replay: " + replay_from + " has no config");
    auto rerun = replay_args(artifact["config"]);
    rerun.push_back("--out");
    rerun.push_back(replay_out);
    return dispatch(rerun, out, err, depth + 1);
  }
  for (const auto& cmd : commands) {
    if (!cmd->app->parsed()) continue;
    if (cmd.get() == lstm_check) {
      std::optional<fs::path> dir;
      if (!cmd->out.empty()) dir = prepare_out(cmd->out);
      return run_lstm_gradcheck(*cmd->options, dir, out) ? kExitOk : kExitFailure;
    }
    const fs::path dir = prepare_out(cmd->out);
    if (cmd.get() == gen)
      run_gen(*cmd->options, dir, out);
    else if (cmd.get() == prior)
      run_prior(*cmd->options, dir, out);
    else if (cmd.get() == fit)
      run_fit(*cmd->options, dir, out);
    else if (cmd.get() == pred)
      run_predict(*cmd->options, dir, out);
    else if (cmd.get() == eval)
      run_eval(*cmd->options, dir, out);
    else if (cmd.get() == lstm_train)
      run_lstm_train(*cmd->options, dir, out);
    return kExitOk;
  }
  err << "error: no command given\n";
  return kExitUsage;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, int depth) {
  try {
    return run_parsed(args, out, err, depth);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return dispatch(args, out, err, 0);
}

}  // namespace fusionforge::cli
