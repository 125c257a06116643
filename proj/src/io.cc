#include "fusionforge/io.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>

#include "fusionforge/error.hpp"

namespace fusionforge {

namespace fs = std::filesystem;

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw ValidationError("expected a matrix (list of rows)");
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows == 0 ? 0 : static_cast<Index>(j.front().size());
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) throw ValidationError("ragged matrix in JSON");
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw ValidationError("expected a vector");
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

Json prior_to_json(const PriorMatrix& prior) {
  Json per_stream = Json::array();
  for (const auto& v : prior.per_stream) per_stream.push_back(matrix_to_json(v));
  return {{"stream_order", prior.stream_order}, {"diagonal", to_string(prior.diagonal)}, {"per_stream", per_stream}};
}

PriorMatrix prior_from_json(const Json& j) {
  try {
    std::vector<Matrix> per_stream;
    for (const auto& v : j.at("per_stream")) per_stream.push_back(matrix_from_json(v));
    const PriorDiagonal diagonal =
        j.contains("diagonal") ? parse_prior_diagonal(j.at("diagonal").get<std::string>()) : PriorDiagonal::accuracy;
    return stack_priors(per_stream, j.at("stream_order").get<std::vector<std::string>>(), diagonal);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed prior JSON: {}", e.what()));
  }
}

Json report_to_json(const FitReport& report) {
  return {{"iterations", report.iterations},
          {"converged", report.converged},
          {"final_step_size", report.final_step_size},
          {"sparsity", report.sparsity},
          {"final_objective", report.objective_trace.empty() ? 0.0 : report.objective_trace.back()},
          {"objective_trace", report.objective_trace}};
}

Json model_to_json(const FusionModel& model) {
  return {{"stream_order", model.stream_order},
          {"C", model.classes()},
          {"M", model.streams()},
          {"lambda1", model.lambda1},
          {"lambda2", model.lambda2},
          {"W", matrix_to_json(model.weights)},
          {"prior_diagonal", to_string(model.prior.diagonal)},
          {"prior", prior_to_json(model.prior)},
          {"fit_report", report_to_json(model.report)}};
}

FusionModel model_from_json(const Json& j) {
  try {
    FusionModel model;
    model.stream_order = j.at("stream_order").get<std::vector<std::string>>();
    model.lambda1 = j.at("lambda1").get<double>();
    model.lambda2 = j.at("lambda2").get<double>();
    model.weights = matrix_from_json(j.at("W"));
    const auto C = j.at("C").get<Index>();
    const auto M = j.at("M").get<Index>();
    if (model.weights.rows() != C * M || model.weights.cols() != C)
      throw ValidationError(
          fmt::format("model JSON: W is {}x{}, expected {}x{}", model.weights.rows(), model.weights.cols(), C * M, C));
    if (static_cast<Index>(model.stream_order.size()) != M)
      throw ValidationError("model JSON: stream_order length differs from M");
    if (!model.weights.allFinite()) throw ValidationError("model JSON: W has non-finite entries");
    if (j.contains("prior")) {
      model.prior = prior_from_json(j.at("prior"));
    } else {
      model.prior = stack_priors(std::vector<Matrix>(static_cast<std::size_t>(M), Matrix::Zero(C, C)),
                                 model.stream_order, parse_prior_diagonal(j.at("prior_diagonal").get<std::string>()));
    }
    if (j.contains("fit_report")) {
      const Json& r = j.at("fit_report");
      model.report.iterations = r.at("iterations").get<int>();
      model.report.converged = r.at("converged").get<bool>();
      model.report.final_step_size = r.at("final_step_size").get<double>();
      model.report.sparsity = r.at("sparsity").get<double>();
      model.report.objective_trace = r.at("objective_trace").get<std::vector<double>>();
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed model JSON: {}", e.what()));
  }
}

namespace {

Json gate_to_json(const lstm::Gate& gate) {
  Json j = {{"input", matrix_to_json(gate.input)}, {"recurrent", matrix_to_json(gate.recurrent)}};
  if (gate.peephole.size() > 0) j["peephole"] = vector_to_json(gate.peephole);
  j["bias"] = vector_to_json(gate.bias);
  return j;
}

lstm::Gate gate_from_json(const Json& j) {
  lstm::Gate gate;
  gate.input = matrix_from_json(j.at("input"));
  gate.recurrent = matrix_from_json(j.at("recurrent"));
  if (j.contains("peephole")) gate.peephole = vector_from_json(j.at("peephole"));
  gate.bias = vector_from_json(j.at("bias"));
  return gate;
}

}  // namespace

Json network_to_json(const lstm::Network& net) {
  Json layers = Json::array();
  for (const auto& layer : net.layers) {
    layers.push_back({{"input_dim", layer.input_dim},
                      {"hidden_dim", layer.hidden_dim},
                      {"input_gate", gate_to_json(layer.input_gate)},
                      {"forget_gate", gate_to_json(layer.forget_gate)},
                      {"candidate", gate_to_json(layer.candidate)},
                      {"output_gate", gate_to_json(layer.output_gate)}});
  }
  return {{"input_dim", net.input_dim()},
          {"classes", net.classes()},
          {"layers", layers},
          {"head_weights", matrix_to_json(net.head_weights)},
          {"head_bias", vector_to_json(net.head_bias)}};
}

lstm::Network network_from_json(const Json& j) {
  try {
    lstm::Network net;
    for (const auto& l : j.at("layers")) {
      lstm::Layer layer;
      layer.input_dim = l.at("input_dim").get<Index>();
      layer.hidden_dim = l.at("hidden_dim").get<Index>();
      layer.input_gate = gate_from_json(l.at("input_gate"));
      layer.forget_gate = gate_from_json(l.at("forget_gate"));
      layer.candidate = gate_from_json(l.at("candidate"));
      layer.output_gate = gate_from_json(l.at("output_gate"));
      net.layers.push_back(std::move(layer));
    }
    net.head_weights = matrix_from_json(j.at("head_weights"));
    net.head_bias = vector_from_json(j.at("head_bias"));
    lstm::validate(net);
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed network JSON: {}", e.what()));
  }
}

Json eval_to_json(const EvalReport& report) {
  Json per_class = Json::array();
  for (double ap : report.per_class_ap) per_class.push_back(std::isnan(ap) ? Json(nullptr) : Json(ap));
  Json j = Json::object();
  j["accuracy"] = report.accuracy ? Json(*report.accuracy) : Json(nullptr);
  j["map"] = report.map;
  j["per_class_ap"] = per_class;
  return j;
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open file: {}", path.string()));
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
}

void write_json(const Json& doc, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(fmt::format("cannot write file: {}", path.string()));
  out << doc.dump(2) << '\n';
  if (!out) throw ValidationError(fmt::format("write failed: {}", path.string()));
}

fs::path write_dataset(const Dataset& dataset, const fs::path& dir, const std::string& split, const Json& config) {
  fs::create_directories(dir);
  const std::string label_file = split + "_labels.csv";
  save_labels(dataset.labels, dir / label_file);
  Json streams = Json::array();
  for (const auto& stream : dataset.streams) {
    const std::string file = fmt::format("{}_{}.csv", split, stream.stream_id);
    save_scores(stream, dataset.labels.class_names, dir / file);
    streams.push_back({{"id", stream.stream_id}, {"path", file}});
  }
  Json manifest = {{"mode", to_string(dataset.mode)}, {"labels", label_file}, {"streams", streams}, {"config", config}};
  const fs::path path = dir / (split + ".json");
  write_json(manifest, path);
  return path;
}

}  // namespace fusionforge
