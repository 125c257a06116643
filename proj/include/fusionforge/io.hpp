#pragma once

#include <filesystem>
#include <string>

#include "fusionforge/class_prior.hpp"
#include "fusionforge/fusion_solver.hpp"
#include "fusionforge/metrics.hpp"
#include "fusionforge/score_data.hpp"
#include "fusionforge/temporal_lstm.hpp"
#include "json.hpp"

namespace fusionforge {

using Json = nlohmann::ordered_json;

Json matrix_to_json(const Matrix& m);  // list of rows
Matrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

Json prior_to_json(const PriorMatrix& prior);
PriorMatrix prior_from_json(const Json& j);

Json report_to_json(const FitReport& report);

/// `{stream_order, C, M, lambda1, lambda2, W, prior_diagonal, prior, fit_report}`.
Json model_to_json(const FusionModel& model);
FusionModel model_from_json(const Json& j);

Json network_to_json(const lstm::Network& net);
lstm::Network network_from_json(const Json& j);

/// NaN (a class without positives) becomes null.
Json eval_to_json(const EvalReport& report);

Json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const Json& doc, const std::filesystem::path& path);

/// Writes `<split>_labels.csv`, one `<split>_<stream>.csv` per stream and the
/// manifest `<split>.json` (paths relative to `dir`, plus `config`).
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& split,
                                    const Json& config);

}  // namespace fusionforge
