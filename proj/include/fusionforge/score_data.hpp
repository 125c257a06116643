#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fusionforge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Per-class prediction scores of one stream: N samples by C classes, every
/// entry a probability in [0, 1].
struct ScoreMatrix {
  std::string stream_id;
  Matrix scores;
  std::vector<std::string> sample_ids;

  Index samples() const { return scores.rows(); }
  Index classes() const { return scores.cols(); }
};

/// Binary ground truth, N by C. `sample_ids` pins the row order shared with
/// every stream of the dataset.
struct LabelMatrix {
  Matrix labels;
  std::vector<std::string> class_names;
  std::vector<std::string> sample_ids;

  Index samples() const { return labels.rows(); }
  Index classes() const { return labels.cols(); }
};

enum class LabelMode { single, multi };

std::string to_string(LabelMode mode);
LabelMode parse_label_mode(const std::string& text);

struct Dataset {
  std::vector<ScoreMatrix> streams;
  LabelMatrix labels;
  LabelMode mode = LabelMode::single;

  Index samples() const { return labels.samples(); }
  Index classes() const { return labels.classes(); }
};

/// Row n is [s_n^1, ..., s_n^M]; column block m holds stream_order[m].
struct StackedScores {
  Matrix matrix;
  std::vector<std::string> stream_order;
};

struct SynthConfig {
  Index n_train = 600;
  Index n_test = 3000;
  Index n_valid = 0;  // optional held-out split for counting the prior
  Index n_classes = 6;
  Index n_streams = 3;
  Matrix reliability;  // n_streams x n_classes, entries in (1/C, 1]
  double confusion_sharpness = 0.3;
  // Each sample draws one signal strength E^spread (E ~ Exp(1)) shared by all
  // streams; larger spread means more samples every stream finds hard.
  double difficulty_spread = 4.0;
  std::uint64_t seed = 0;
};

/// Reliability `high` when c mod M == m and `low` otherwise; the benchmark layout
/// where every stream is the expert for a disjoint subset of classes.
Matrix striped_reliability(Index n_streams, Index n_classes, double high = 0.9, double low = 0.55);

struct Fold {
  std::vector<Index> train;
  std::vector<Index> validation;
};

// Validation. All throw ValidationError with a message naming the problem.
void validate(const ScoreMatrix& scores);
void validate(const LabelMatrix& labels, LabelMode mode);
void validate(const Dataset& dataset);
void validate(const SynthConfig& config);

struct LoadOptions {
  std::optional<Index> expected_classes;
  // Apply a per-row softmax to raw activations before range checking.
  bool softmax_rows = false;
};

ScoreMatrix load_scores(const std::filesystem::path& path, const std::string& stream_id,
                        const LoadOptions& options = {});
void save_scores(const ScoreMatrix& scores, const std::vector<std::string>& class_names,
                 const std::filesystem::path& path);

LabelMatrix load_labels(const std::filesystem::path& path, LabelMode mode);
void save_labels(const LabelMatrix& labels, const std::filesystem::path& path);

/// Reads a manifest (`mode`, `labels`, `streams`); relative paths resolve
/// against the manifest's directory.
Dataset load_manifest(const std::filesystem::path& path, const LoadOptions& options = {});

StackedScores stack_streams(const std::vector<ScoreMatrix>& streams);

/// Column block `m` of a stacked matrix as a standalone ScoreMatrix.
ScoreMatrix stream_block(const StackedScores& stacked, Index m, Index n_classes,
                         const std::vector<std::string>& sample_ids);

struct SyntheticSplits {
  Dataset train;
  Dataset test;
  Dataset valid;  // empty when n_valid is 0
};

/// All splits come from one seeded process; the validation split is drawn
/// last, so train and test do not depend on n_valid.
SyntheticSplits generate_synthetic_splits(const SynthConfig& config);

/// (train, test) of generate_synthetic_splits.
std::pair<Dataset, Dataset> generate_synthetic(const SynthConfig& config);

std::vector<Fold> split_folds(const Dataset& dataset, Index k, std::uint64_t seed);

Dataset subset(const Dataset& dataset, const std::vector<Index>& rows);

/// Index of the largest entry; ties go to the lowest index.
Index argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row);

/// Argmax of each labels row, the single-label ground truth.
std::vector<Index> true_classes(const LabelMatrix& labels);

Matrix softmax_rows(const Matrix& raw);

}  // namespace fusionforge
