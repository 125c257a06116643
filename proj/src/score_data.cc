#include "fusionforge/score_data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fusionforge/error.hpp"
#include "fusionforge/log.hpp"
#include "fusionforge/rng.hpp"
#include "json.hpp"

namespace fusionforge {

namespace fs = std::filesystem;

std::string to_string(LabelMode mode) { return mode == LabelMode::single ? "single" : "multi"; }

LabelMode parse_label_mode(const std::string& text) {
  if (text == "single") return LabelMode::single;
  if (text == "multi") return LabelMode::multi;
  throw ValidationError(fmt::format("unknown label mode '{}' (expected single|multi)", text));
}

Matrix striped_reliability(Index n_streams, Index n_classes, double high, double low) {
  Matrix reliability(n_streams, n_classes);
  for (Index m = 0; m < n_streams; ++m)
    for (Index c = 0; c < n_classes; ++c) reliability(m, c) = (c % n_streams == m) ? high : low;
  return reliability;
}

// ---------------------------------------------------------------------------
// validation

void validate(const ScoreMatrix& scores) {
  if (static_cast<Index>(scores.sample_ids.size()) != scores.samples())
    throw ValidationError(fmt::format("stream '{}': {} sample ids for {} score rows", scores.stream_id,
                                      scores.sample_ids.size(), scores.samples()));
  for (Index n = 0; n < scores.samples(); ++n)
    for (Index c = 0; c < scores.classes(); ++c) {
      const double v = scores.scores(n, c);
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw ValidationError(
            fmt::format("stream '{}': score out of range at row {} column {}: {}", scores.stream_id, n, c, v));
    }
}

void validate(const LabelMatrix& labels, LabelMode mode) {
  if (static_cast<Index>(labels.class_names.size()) != labels.classes())
    throw ValidationError("labels: class name count does not match column count");
  if (static_cast<Index>(labels.sample_ids.size()) != labels.samples())
    throw ValidationError("labels: sample id count does not match row count");
  for (Index n = 0; n < labels.samples(); ++n) {
    double row_sum = 0.0;
    for (Index c = 0; c < labels.classes(); ++c) {
      const double v = labels.labels(n, c);
      if (v != 0.0 && v != 1.0)
        throw ValidationError(fmt::format("labels: entry at row {} column {} is not 0/1", n, c));
      row_sum += v;
    }
    if (mode == LabelMode::single && row_sum != 1.0)
      throw ValidationError(fmt::format("labels: row {} has {} positives in single-label mode", n, row_sum));
  }
}

void validate(const Dataset& dataset) {
  if (dataset.streams.empty()) throw ValidationError("dataset has no streams");
  validate(dataset.labels, dataset.mode);
  for (const auto& stream : dataset.streams) {
    validate(stream);
    if (stream.samples() != dataset.samples() || stream.classes() != dataset.classes())
      throw ValidationError(fmt::format("stream '{}' is {}x{} but labels are {}x{}", stream.stream_id, stream.samples(),
                                        stream.classes(), dataset.samples(), dataset.classes()));
    if (stream.sample_ids != dataset.labels.sample_ids)
      throw ValidationError(fmt::format("stream '{}': sample order differs from labels", stream.stream_id));
  }
}

void validate(const SynthConfig& config) {
  if (config.n_classes < 2) throw ValidationError("synthetic config: need at least 2 classes");
  if (config.n_streams < 1) throw ValidationError("synthetic config: need at least 1 stream");
  if (config.n_train < 0 || config.n_test < 0 || config.n_valid < 0)
    throw ValidationError("synthetic config: negative sample count");
  if (!(config.confusion_sharpness > 0.0) || !std::isfinite(config.confusion_sharpness))
    throw ValidationError("synthetic config: confusion_sharpness must be positive");
  if (!(config.difficulty_spread >= 0.0) || !std::isfinite(config.difficulty_spread))
    throw ValidationError("synthetic config: difficulty_spread must be >= 0");
  if (config.reliability.rows() != config.n_streams || config.reliability.cols() != config.n_classes)
    throw ValidationError("synthetic config: reliability must be n_streams x n_classes");
  const double chance = 1.0 / static_cast<double>(config.n_classes);
  for (Index m = 0; m < config.n_streams; ++m)
    for (Index c = 0; c < config.n_classes; ++c) {
      const double r = config.reliability(m, c);
      if (!(r > chance) || r > 1.0)
        throw ValidationError(
            fmt::format("synthetic config: reliability[{}][{}] = {} must lie in (1/C, 1] = ({}, 1]", m, c, r, chance));
    }
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& cell, const fs::path& path, std::size_t line_no) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = cell.data() + cell.size();
  while (begin < end && *begin == ' ') ++begin;
  while (end > begin && *(end - 1) == ' ') --end;
  if (begin < end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || begin == end)
    throw ValidationError(fmt::format("{}:{}: non-numeric cell '{}'", path.string(), line_no, cell));
  return value;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::string> row_ids;
  Matrix values;
};

CsvTable read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open file: {}", path.string()));
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(fmt::format("{}: empty file", path.string()));
  table.header = split_csv_line(line);
  if (table.header.size() < 2)
    throw ValidationError(fmt::format("{}: header needs sample_id and at least one class", path.string()));
  const std::size_t width = table.header.size() - 1;

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != width + 1)
      throw ValidationError(
          fmt::format("{}:{}: ragged row ({} cells, header has {})", path.string(), line_no, cells.size(), width + 1));
    table.row_ids.push_back(cells[0]);
    std::vector<double> row(width);
    for (std::size_t j = 0; j < width; ++j) row[j] = parse_number(cells[j + 1], path, line_no);
    rows.push_back(std::move(row));
  }
  table.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t n = 0; n < rows.size(); ++n)
    for (std::size_t j = 0; j < width; ++j) table.values(static_cast<Index>(n), static_cast<Index>(j)) = rows[n][j];
  return table;
}

void write_table(const fs::path& path, const std::vector<std::string>& class_names,
                 const std::vector<std::string>& row_ids, const Matrix& values, bool integral) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(fmt::format("cannot write file: {}", path.string()));
  out << "sample_id";
  for (const auto& name : class_names) out << ',' << name;
  out << '\n';
  for (Index n = 0; n < values.rows(); ++n) {
    out << row_ids[static_cast<std::size_t>(n)];
    for (Index c = 0; c < values.cols(); ++c) {
      if (integral)
        out << ',' << static_cast<int>(values(n, c));
      else
        out << ',' << fmt::format("{:.17g}", values(n, c));
    }
    out << '\n';
  }
  if (!out) throw ValidationError(fmt::format("write failed: {}", path.string()));
}

}  // namespace

Matrix softmax_rows(const Matrix& raw) {
  Matrix out(raw.rows(), raw.cols());
  for (Index n = 0; n < raw.rows(); ++n) {
    const double peak = raw.row(n).maxCoeff();
    double total = 0.0;
    for (Index c = 0; c < raw.cols(); ++c) total += out(n, c) = std::exp(raw(n, c) - peak);
    out.row(n) /= total;
  }
  return out;
}

ScoreMatrix load_scores(const fs::path& path, const std::string& stream_id, const LoadOptions& options) {
  CsvTable table = read_table(path);
  if (options.expected_classes && table.values.cols() != *options.expected_classes)
    throw ValidationError(fmt::format("{}: class-count mismatch ({} score columns, expected {})", path.string(),
                                      table.values.cols(), *options.expected_classes));
  ScoreMatrix scores{stream_id, options.softmax_rows ? softmax_rows(table.values) : std::move(table.values),
                     std::move(table.row_ids)};
  validate(scores);
  return scores;
}

void save_scores(const ScoreMatrix& scores, const std::vector<std::string>& class_names, const fs::path& path) {
  if (static_cast<Index>(class_names.size()) != scores.classes())
    throw ValidationError("save_scores: class name count does not match score columns");
  write_table(path, class_names, scores.sample_ids, scores.scores, false);
}

LabelMatrix load_labels(const fs::path& path, LabelMode mode) {
  CsvTable table = read_table(path);
  LabelMatrix labels{std::move(table.values), std::vector<std::string>(table.header.begin() + 1, table.header.end()),
                     std::move(table.row_ids)};
  validate(labels, mode);
  return labels;
}

void save_labels(const LabelMatrix& labels, const fs::path& path) {
  write_table(path, labels.class_names, labels.sample_ids, labels.labels, true);
}

Dataset load_manifest(const fs::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open manifest: {}", path.string()));
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  try {
    Dataset dataset;
    dataset.mode = parse_label_mode(doc.at("mode").get<std::string>());
    const fs::path label_path = resolve(doc.at("labels").get<std::string>());
    if (!fs::exists(label_path)) throw ValidationError(fmt::format("labels file not found: {}", label_path.string()));
    dataset.labels = load_labels(label_path, dataset.mode);
    LoadOptions stream_options = options;
    stream_options.expected_classes = dataset.classes();
    for (const auto& entry : doc.at("streams")) {
      const fs::path stream_path = resolve(entry.at("path").get<std::string>());
      if (!fs::exists(stream_path))
        throw ValidationError(fmt::format("stream file not found: {}", stream_path.string()));
      dataset.streams.push_back(load_scores(stream_path, entry.at("id").get<std::string>(), stream_options));
    }
    validate(dataset);
    return dataset;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: malformed manifest: {}", path.string(), e.what()));
  }
}

// ---------------------------------------------------------------------------
// stacking

StackedScores stack_streams(const std::vector<ScoreMatrix>& streams) {
  if (streams.empty()) throw ValidationError("stack_streams: no streams");
  const Index rows = streams.front().samples();
  const Index cols = streams.front().classes();
  StackedScores stacked;
  stacked.matrix.resize(rows, cols * static_cast<Index>(streams.size()));
  for (std::size_t m = 0; m < streams.size(); ++m) {
    const auto& s = streams[m];
    if (s.samples() != rows || s.classes() != cols)
      throw ValidationError(fmt::format("stack_streams: stream '{}' shape mismatch", s.stream_id));
    if (s.sample_ids != streams.front().sample_ids)
      throw ValidationError(fmt::format("stack_streams: stream '{}' sample order mismatch", s.stream_id));
    stacked.matrix.middleCols(static_cast<Index>(m) * cols, cols) = s.scores;
    stacked.stream_order.push_back(s.stream_id);
  }
  return stacked;
}

ScoreMatrix stream_block(const StackedScores& stacked, Index m, Index n_classes,
                         const std::vector<std::string>& sample_ids) {
  if (n_classes <= 0 || (m + 1) * n_classes > stacked.matrix.cols())
    throw ValidationError("stream_block: block index out of range");
  return {stacked.stream_order.at(static_cast<std::size_t>(m)), stacked.matrix.middleCols(m * n_classes, n_classes),
          sample_ids};
}

// ---------------------------------------------------------------------------
// synthetic generator

namespace {

constexpr std::size_t kCalibrationDraws = 20000;
constexpr int kBisectionSteps = 60;

// Wrong-class weights for one (stream, class): the other classes in a random
// order get exp(-sharpness * rank); the true class gets their mean.
Vector confusion_weights(Rng& rng, Index true_class, Index n_classes, double sharpness) {
  std::vector<Index> others;
  for (Index j = 0; j < n_classes; ++j)
    if (j != true_class) others.push_back(j);
  rng.shuffle(std::span<Index>(others));
  Vector weights(n_classes);
  double total = 0.0;
  for (std::size_t rank = 0; rank < others.size(); ++rank) {
    weights(others[rank]) = std::exp(-sharpness * static_cast<double>(rank));
    total += weights(others[rank]);
  }
  weights(true_class) = total / static_cast<double>(others.size());
  return weights;
}

// Normalized weighted exponential draws.
void draw_noise(Rng& rng, const Vector& weights, Vector& out) {
  double total = 0.0;
  for (Index j = 0; j < weights.size(); ++j) total += out(j) = weights(j) * rng.exponential();
  out /= total;
}

// Per-sample signal strength shared by every stream, so hard samples are
// hard for all of them.
double draw_ease(Rng& rng, double spread) { return std::pow(rng.exponential(), spread); }

// The smallest mix rate a such that a * onehot(i) + (1 - a) * noise has its
// argmax at i. Zero when the noise already peaks at i.
double correct_threshold(const Vector& noise, Index true_class) {
  double best_other = -1.0;
  for (Index j = 0; j < noise.size(); ++j)
    if (j != true_class) best_other = std::max(best_other, noise(j));
  const double gap = best_other - noise(true_class);
  return gap <= 0.0 ? 0.0 : gap / (1.0 + gap);
}

double mix_rate(double strength, double ease) { return std::min(1.0, strength * ease); }

// Strength whose argmax accuracy matches `target` on the calibration draws,
// by bisection. A sample is correct when its mix rate exceeds the noise
// threshold, so accuracy is monotone in the strength.
double calibrate_strength(Rng& rng, const Vector& weights, Index true_class, double target, double spread) {
  if (target >= 1.0) return std::numeric_limits<double>::infinity();
  std::vector<double> thresholds(kCalibrationDraws);
  std::vector<double> ease(kCalibrationDraws);
  Vector noise(weights.size());
  for (std::size_t k = 0; k < kCalibrationDraws; ++k) {
    ease[k] = draw_ease(rng, spread);
    draw_noise(rng, weights, noise);
    thresholds[k] = correct_threshold(noise, true_class);
  }
  auto hit_rate = [&](double strength) {
    std::size_t hits = 0;
    for (std::size_t k = 0; k < kCalibrationDraws; ++k)
      if (thresholds[k] == 0.0 || mix_rate(strength, ease[k]) > thresholds[k]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(kCalibrationDraws);
  };
  double lo = 0.0;
  double hi = 1.0;
  while (hit_rate(hi) < target && hi < 1e12) hi *= 2.0;
  for (int step = 0; step < kBisectionSteps; ++step) {
    const double mid = 0.5 * (lo + hi);
    (hit_rate(mid) < target ? lo : hi) = mid;
  }
  return hi;
}

Dataset draw_split(Rng& rng, const SynthConfig& config, const std::vector<std::vector<Vector>>& weights,
                   const Matrix& strength, Index n, const std::string& prefix,
                   const std::vector<std::string>& class_names) {
  const Index C = config.n_classes;
  Dataset dataset;
  dataset.mode = LabelMode::single;
  dataset.labels.labels = Matrix::Zero(n, C);
  dataset.labels.class_names = class_names;
  for (Index i = 0; i < n; ++i) dataset.labels.sample_ids.push_back(fmt::format("{}_{:06d}", prefix, i));
  for (Index m = 0; m < config.n_streams; ++m) {
    dataset.streams.push_back({fmt::format("s{}", m), Matrix(n, C), dataset.labels.sample_ids});
  }
  Vector noise(C);
  for (Index i = 0; i < n; ++i) {
    const auto truth = static_cast<Index>(rng.index(static_cast<std::size_t>(C)));
    dataset.labels.labels(i, truth) = 1.0;
    const double ease = draw_ease(rng, config.difficulty_spread);
    for (Index m = 0; m < config.n_streams; ++m) {
      draw_noise(rng, weights[static_cast<std::size_t>(m)][static_cast<std::size_t>(truth)], noise);
      const double s = strength(m, truth);
      const double a = std::isinf(s) ? 1.0 : mix_rate(s, ease);
      auto row = dataset.streams[static_cast<std::size_t>(m)].scores.row(i);
      row = (1.0 - a) * noise.transpose();
      row(truth) += a;
    }
  }
  return dataset;
}

}  // namespace

SyntheticSplits generate_synthetic_splits(const SynthConfig& config) {
  validate(config);
  const Index C = config.n_classes;
  const Index M = config.n_streams;
  Rng root(config.seed);
  Rng structure = root.fork(0);
  Rng calibration = root.fork(1);
  Rng samples = root.fork(2);

  std::vector<std::vector<Vector>> weights(static_cast<std::size_t>(M));
  for (Index m = 0; m < M; ++m)
    for (Index c = 0; c < C; ++c)
      weights[static_cast<std::size_t>(m)].push_back(confusion_weights(structure, c, C, config.confusion_sharpness));

  Matrix strength(M, C);
  for (Index m = 0; m < M; ++m)
    for (Index c = 0; c < C; ++c)
      strength(m, c) =
          calibrate_strength(calibration, weights[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)], c,
                             config.reliability(m, c), config.difficulty_spread);

  std::vector<std::string> class_names;
  for (Index c = 0; c < C; ++c) class_names.push_back(fmt::format("class_{}", c));

  Dataset train = draw_split(samples, config, weights, strength, config.n_train, "train", class_names);
  Dataset test = draw_split(samples, config, weights, strength, config.n_test, "test", class_names);
  Dataset valid;
  if (config.n_valid > 0) valid = draw_split(samples, config, weights, strength, config.n_valid, "valid", class_names);
  return {std::move(train), std::move(test), std::move(valid)};
}

std::pair<Dataset, Dataset> generate_synthetic(const SynthConfig& config) {
  SyntheticSplits splits = generate_synthetic_splits(config);
  return {std::move(splits.train), std::move(splits.test)};
}

// ---------------------------------------------------------------------------
// folds

std::vector<Fold> split_folds(const Dataset& dataset, Index k, std::uint64_t seed) {
  const Index n = dataset.samples();
  if (k < 2) throw ValidationError("split_folds: need k >= 2");
  if (k > n) throw ValidationError(fmt::format("split_folds: k = {} exceeds sample count {}", k, n));
  Rng rng(seed);

  std::vector<std::vector<Index>> groups;
  if (dataset.mode == LabelMode::single) {
    groups.resize(static_cast<std::size_t>(dataset.classes()));
    const auto truth = true_classes(dataset.labels);
    for (Index i = 0; i < n; ++i) groups[static_cast<std::size_t>(truth[static_cast<std::size_t>(i)])].push_back(i);
    const bool too_small = std::any_of(groups.begin(), groups.end(),
                                       [&](const auto& g) { return !g.empty() && static_cast<Index>(g.size()) < k; });
    if (too_small) {
      logger()->warn("split_folds: a class has fewer than {} samples; using unstratified folds", k);
      groups.clear();
    }
  }
  if (groups.empty()) {
    groups.emplace_back(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) groups.front()[static_cast<std::size_t>(i)] = i;
  }

  std::vector<std::vector<Index>> members(static_cast<std::size_t>(k));
  std::size_t next_fold = 0;
  for (auto& group : groups) {
    rng.shuffle(std::span<Index>(group));
    for (Index idx : group) {
      members[next_fold].push_back(idx);
      next_fold = (next_fold + 1) % static_cast<std::size_t>(k);
    }
  }

  std::vector<Fold> folds(static_cast<std::size_t>(k));
  std::vector<int> owner(static_cast<std::size_t>(n));
  for (std::size_t f = 0; f < members.size(); ++f)
    for (Index idx : members[f]) owner[static_cast<std::size_t>(idx)] = static_cast<int>(f);
  for (Index i = 0; i < n; ++i)
    for (std::size_t f = 0; f < folds.size(); ++f)
      (owner[static_cast<std::size_t>(i)] == static_cast<int>(f) ? folds[f].validation : folds[f].train).push_back(i);
  return folds;
}

Dataset subset(const Dataset& dataset, const std::vector<Index>& rows) {
  auto pick_ids = [&](const std::vector<std::string>& ids) {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (Index r : rows) out.push_back(ids.at(static_cast<std::size_t>(r)));
    return out;
  };
  auto pick_rows = [&](const Matrix& m) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
  };
  Dataset out;
  out.mode = dataset.mode;
  out.labels = {pick_rows(dataset.labels.labels), dataset.labels.class_names, pick_ids(dataset.labels.sample_ids)};
  for (const auto& s : dataset.streams)
    out.streams.push_back({s.stream_id, pick_rows(s.scores), pick_ids(s.sample_ids)});
  return out;
}

Index argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Index best = 0;
  for (Index c = 1; c < row.size(); ++c)
    if (row(c) > row(best)) best = c;
  return best;
}

std::vector<Index> true_classes(const LabelMatrix& labels) {
  std::vector<Index> out(static_cast<std::size_t>(labels.samples()));
  for (Index n = 0; n < labels.samples(); ++n) out[static_cast<std::size_t>(n)] = argmax(labels.labels.row(n));
  return out;
}

}  // namespace fusionforge
