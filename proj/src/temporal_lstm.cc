#include "fusionforge/temporal_lstm.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "fusionforge/error.hpp"
#include "fusionforge/rng.hpp"

namespace fusionforge::lstm {

namespace {

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Vector sigmoid(const Vector& z) {
  return z.unaryExpr([](double v) { return logistic(v); });
}
Vector tanh_of(const Vector& z) { return z.array().tanh().matrix(); }

Gate zero_gate(Index input_dim, Index hidden_dim, bool peephole) {
  return {Matrix::Zero(hidden_dim, input_dim), Matrix::Zero(hidden_dim, hidden_dim),
          peephole ? Vector::Zero(hidden_dim) : Vector(), Vector::Zero(hidden_dim)};
}

template <typename GateT, typename Visit>
void visit_gate(GateT& gate, Visit&& visit) {
  visit(gate.input);
  visit(gate.recurrent);
  if (gate.peephole.size() > 0) visit(gate.peephole);
  visit(gate.bias);
}

template <typename NetT, typename Visit>
void visit_arrays(NetT& net, Visit&& visit) {
  for (auto& layer : net.layers) {
    visit_gate(layer.input_gate, visit);
    visit_gate(layer.forget_gate, visit);
    visit_gate(layer.candidate, visit);
    visit_gate(layer.output_gate, visit);
  }
  visit(net.head_weights);
  visit(net.head_bias);
}

void check_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NumericalError(fmt::format("lstm: non-finite {}", what));
}

// Everything one layer step needs for the backward pass.
struct StepCache {
  Vector input, prev_hidden, prev_cell;
  Vector in_gate, forget, candidate, cell, out_gate, cell_tanh, hidden;
};

StepCache step_cached(const Layer& layer, const Vector& x, const Vector& h_prev, const Vector& c_prev) {
  StepCache s;
  s.input = x;
  s.prev_hidden = h_prev;
  s.prev_cell = c_prev;
  const auto pre = [&](const Gate& g) -> Vector { return g.input * x + g.recurrent * h_prev + g.bias; };
  s.in_gate = sigmoid(pre(layer.input_gate) + layer.input_gate.peephole.cwiseProduct(c_prev));
  s.forget = sigmoid(pre(layer.forget_gate) + layer.forget_gate.peephole.cwiseProduct(c_prev));
  s.candidate = tanh_of(pre(layer.candidate));
  s.cell = s.forget.cwiseProduct(c_prev) + s.in_gate.cwiseProduct(s.candidate);
  s.out_gate = sigmoid(pre(layer.output_gate) + layer.output_gate.peephole.cwiseProduct(s.cell));
  s.cell_tanh = tanh_of(s.cell);
  s.hidden = s.out_gate.cwiseProduct(s.cell_tanh);
  check_finite(s.hidden, "hidden state");
  check_finite(s.cell, "cell state");
  return s;
}

void check_sample(const Network& net, const SequenceSample& sample) {
  if (sample.inputs.empty()) throw ValidationError("lstm: empty sequence");
  if (sample.label < 0 || sample.label >= net.classes())
    throw ValidationError(fmt::format("lstm: label {} outside [0, {})", sample.label, net.classes()));
  for (const auto& x : sample.inputs)
    if (x.size() != net.input_dim())
      throw ValidationError(
          fmt::format("lstm: input of size {} for a network with input_dim {}", x.size(), net.input_dim()));
}

// caches[l][t]
std::vector<std::vector<StepCache>> run(const Network& net, const SequenceSample& sample) {
  validate(net);
  if (sample.inputs.empty()) throw ValidationError("lstm: empty sequence");
  std::vector<std::vector<StepCache>> caches(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    Vector h = Vector::Zero(layer.hidden_dim);
    Vector c = Vector::Zero(layer.hidden_dim);
    for (std::size_t t = 0; t < sample.inputs.size(); ++t) {
      const Vector& x = l == 0 ? sample.inputs[t] : caches[l - 1][t].hidden;
      if (x.size() != layer.input_dim)
        throw ValidationError(
            fmt::format("lstm: layer {} expects input size {}, got {}", l, layer.input_dim, x.size()));
      caches[l].push_back(step_cached(layer, x, h, c));
      h = caches[l].back().hidden;
      c = caches[l].back().cell;
    }
  }
  return caches;
}

Vector head_logits(const Network& net, const Vector& top_hidden) {
  return net.head_weights * top_hidden + net.head_bias;
}

double log_sum_exp(const Vector& z) {
  const double peak = z.maxCoeff();
  return peak + std::log((z.array() - peak).exp().sum());
}

}  // namespace

Layer Layer::zeros(Index input_dim, Index hidden_dim) {
  Layer layer;
  layer.input_dim = input_dim;
  layer.hidden_dim = hidden_dim;
  layer.input_gate = zero_gate(input_dim, hidden_dim, true);
  layer.forget_gate = zero_gate(input_dim, hidden_dim, true);
  layer.candidate = zero_gate(input_dim, hidden_dim, false);
  layer.output_gate = zero_gate(input_dim, hidden_dim, true);
  return layer;
}

Network Network::zeros(Index input_dim, const std::vector<Index>& hidden, Index classes) {
  if (hidden.empty()) throw ValidationError("lstm: need at least one layer");
  if (input_dim < 1 || classes < 2) throw ValidationError("lstm: need input_dim >= 1 and classes >= 2");
  Network net;
  Index in = input_dim;
  for (Index h : hidden) {
    if (h < 1) throw ValidationError("lstm: hidden sizes must be positive");
    net.layers.push_back(Layer::zeros(in, h));
    in = h;
  }
  net.head_weights = Matrix::Zero(classes, in);
  net.head_bias = Vector::Zero(classes);
  return net;
}

Network Network::random(Index input_dim, const std::vector<Index>& hidden, Index classes, std::uint64_t seed,
                        double scale, double forget_bias) {
  Network net = zeros(input_dim, hidden, classes);
  Rng rng(seed);
  for_each_parameter(net, [&](std::span<double> values) {
    for (double& v : values) v = rng.uniform(-scale, scale);
  });
  for (auto& layer : net.layers) {
    layer.input_gate.bias.setZero();
    layer.candidate.bias.setZero();
    layer.output_gate.bias.setZero();
    layer.forget_gate.bias.setConstant(forget_bias);
  }
  net.head_bias.setZero();
  return net;
}

void validate(const Network& net) {
  if (net.layers.empty()) throw ValidationError("lstm: network has no layers");
  Index in = net.layers.front().input_dim;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    const Index h = layer.hidden_dim;
    if (layer.input_dim != in) throw ValidationError(fmt::format("lstm: layer {} input dim does not chain", l));
    for (const Gate* gate : {&layer.input_gate, &layer.forget_gate, &layer.candidate, &layer.output_gate}) {
      const bool peephole_ok = gate == &layer.candidate ? gate->peephole.size() == 0 : gate->peephole.size() == h;
      if (gate->input.rows() != h || gate->input.cols() != in || gate->recurrent.rows() != h ||
          gate->recurrent.cols() != h || gate->bias.size() != h || !peephole_ok)
        throw ValidationError(fmt::format("lstm: layer {} gate shapes inconsistent", l));
    }
    in = h;
  }
  if (net.head_weights.cols() != in || net.head_bias.size() != net.head_weights.rows() || net.classes() < 2)
    throw ValidationError("lstm: head does not match the last layer");
}

void for_each_parameter(Network& net, const std::function<void(std::span<double>)>& visit) {
  visit_arrays(net,
               [&](auto& array) { visit(std::span<double>(array.data(), static_cast<std::size_t>(array.size()))); });
}

void for_each_parameter(const Network& net, const std::function<void(std::span<const double>)>& visit) {
  visit_arrays(net, [&](const auto& array) {
    visit(std::span<const double>(array.data(), static_cast<std::size_t>(array.size())));
  });
}

Index parameter_count(const Network& net) {
  Index total = 0;
  for_each_parameter(net, [&](std::span<const double> values) { total += static_cast<Index>(values.size()); });
  return total;
}

std::vector<double> flatten(const Network& net) {
  std::vector<double> out;
  for_each_parameter(net, [&](std::span<const double> values) { out.insert(out.end(), values.begin(), values.end()); });
  return out;
}

void unflatten(Network& net, std::span<const double> values) {
  if (static_cast<Index>(values.size()) != parameter_count(net))
    throw ValidationError("lstm: parameter vector length does not match the network");
  std::size_t offset = 0;
  for_each_parameter(net, [&](std::span<double> target) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), target.size(), target.begin());
    offset += target.size();
  });
}

StepResult lstm_step(const Layer& layer, const Vector& input, const Vector& prev_hidden, const Vector& prev_cell) {
  if (input.size() != layer.input_dim || prev_hidden.size() != layer.hidden_dim || prev_cell.size() != layer.hidden_dim)
    throw ValidationError("lstm_step: dimension mismatch");
  if (!prev_hidden.allFinite() || !prev_cell.allFinite()) throw ValidationError("lstm_step: non-finite state");
  StepCache s = step_cached(layer, input, prev_hidden, prev_cell);
  return {std::move(s.hidden), std::move(s.cell)};
}

Vector softmax(const Vector& logits) {
  if (!logits.allFinite()) throw ValidationError("softmax: non-finite logits");
  const Vector shifted = (logits.array() - logits.maxCoeff()).exp().matrix();
  return shifted / shifted.sum();
}

ForwardResult forward(const Network& net, const SequenceSample& sample) {
  const auto caches = run(net, sample);
  ForwardResult result;
  for (std::size_t t = 0; t < sample.inputs.size(); ++t) {
    State state;
    for (const auto& layer_cache : caches) {
      state.hidden.push_back(layer_cache[t].hidden);
      state.cell.push_back(layer_cache[t].cell);
    }
    result.states.push_back(std::move(state));
  }
  result.probabilities = softmax(head_logits(net, caches.back().back().hidden));
  return result;
}

double loss(const Network& net, const SequenceSample& sample) {
  check_sample(net, sample);
  const auto caches = run(net, sample);
  const Vector logits = head_logits(net, caches.back().back().hidden);
  return log_sum_exp(logits) - logits(sample.label);
}

namespace {

// Gradient of the loss, which is also stored in *loss_out when given; both
// come from one forward pass.
Network gradients_with_loss(const Network& net, const SequenceSample& sample, double* loss_out) {
  check_sample(net, sample);
  const auto caches = run(net, sample);
  const std::size_t steps = sample.inputs.size();
  Network grad = net;
  for_each_parameter(grad, [](std::span<double> values) { std::fill(values.begin(), values.end(), 0.0); });

  const Vector& top = caches.back().back().hidden;
  const Vector logits = head_logits(net, top);
  if (loss_out) *loss_out = log_sum_exp(logits) - logits(sample.label);
  Vector d_logits = softmax(logits);
  d_logits(sample.label) -= 1.0;
  grad.head_weights = d_logits * top.transpose();
  grad.head_bias = d_logits;

  // Gradient w.r.t. each hidden output of the layer being processed, fed
  // from the layer above (or the head at the final step).
  std::vector<Vector> d_output(steps, Vector::Zero(net.layers.back().hidden_dim));
  d_output.back() = net.head_weights.transpose() * d_logits;

  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Layer& layer = net.layers[l];
    Layer& g = grad.layers[l];
    const Index H = layer.hidden_dim;
    std::vector<Vector> d_input(steps, Vector::Zero(layer.input_dim));
    Vector d_hidden_next = Vector::Zero(H);
    Vector d_cell_next = Vector::Zero(H);
    for (std::size_t t = steps; t-- > 0;) {
      const StepCache& s = caches[l][t];
      const Vector d_hidden = d_output[t] + d_hidden_next;

      const Vector d_out_pre =
          d_hidden.cwiseProduct(s.cell_tanh).cwiseProduct(s.out_gate.cwiseProduct(Vector::Ones(H) - s.out_gate));
      const Vector d_cell = d_cell_next +
                            d_hidden.cwiseProduct(s.out_gate).cwiseProduct(Vector::Ones(H) - s.cell_tanh.cwiseAbs2()) +
                            d_out_pre.cwiseProduct(layer.output_gate.peephole);
      const Vector d_forget_pre =
          d_cell.cwiseProduct(s.prev_cell).cwiseProduct(s.forget.cwiseProduct(Vector::Ones(H) - s.forget));
      const Vector d_in_pre =
          d_cell.cwiseProduct(s.candidate).cwiseProduct(s.in_gate.cwiseProduct(Vector::Ones(H) - s.in_gate));
      const Vector d_cand_pre = d_cell.cwiseProduct(s.in_gate).cwiseProduct(Vector::Ones(H) - s.candidate.cwiseAbs2());

      const auto accumulate = [&](Gate& gg, const Gate& pg, const Vector& d_pre) {
        gg.input.noalias() += d_pre * s.input.transpose();
        gg.recurrent.noalias() += d_pre * s.prev_hidden.transpose();
        gg.bias += d_pre;
        d_input[t].noalias() += pg.input.transpose() * d_pre;
      };
      d_input[t].setZero();
      accumulate(g.input_gate, layer.input_gate, d_in_pre);
      accumulate(g.forget_gate, layer.forget_gate, d_forget_pre);
      accumulate(g.candidate, layer.candidate, d_cand_pre);
      accumulate(g.output_gate, layer.output_gate, d_out_pre);
      g.input_gate.peephole += d_in_pre.cwiseProduct(s.prev_cell);
      g.forget_gate.peephole += d_forget_pre.cwiseProduct(s.prev_cell);
      g.output_gate.peephole += d_out_pre.cwiseProduct(s.cell);

      d_hidden_next =
          layer.input_gate.recurrent.transpose() * d_in_pre + layer.forget_gate.recurrent.transpose() * d_forget_pre +
          layer.candidate.recurrent.transpose() * d_cand_pre + layer.output_gate.recurrent.transpose() * d_out_pre;
      d_cell_next = d_cell.cwiseProduct(s.forget) + d_in_pre.cwiseProduct(layer.input_gate.peephole) +
                    d_forget_pre.cwiseProduct(layer.forget_gate.peephole);
      check_finite(d_cell_next, "cell gradient (exploding gradient?)");
    }
    d_output = std::move(d_input);
  }
  return grad;
}

}  // namespace

Network bptt_gradients(const Network& net, const SequenceSample& sample) {
  return gradients_with_loss(net, sample, nullptr);
}

GradientCheck gradient_check(const Network& net, const SequenceSample& sample, double step, double floor) {
  const Network analytic_net = bptt_gradients(net, sample);
  const std::vector<double> analytic = flatten(analytic_net);
  std::vector<double> params = flatten(net);
  Network probe = net;
  GradientCheck check;
  check.parameters = static_cast<Index>(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double original = params[k];
    params[k] = original + step;
    unflatten(probe, params);
    const double up = loss(probe, sample);
    params[k] = original - step;
    unflatten(probe, params);
    const double down = loss(probe, sample);
    params[k] = original;
    const double numeric = (up - down) / (2.0 * step);
    const double error = std::abs(analytic[k] - numeric) / std::max({std::abs(analytic[k]), std::abs(numeric), floor});
    if (error > check.max_relative_error) {
      check.max_relative_error = error;
      check.worst_parameter = static_cast<Index>(k);
    }
  }
  return check;
}

TrainResult train(Network net, const std::vector<SequenceSample>& samples, const TrainOptions& options) {
  if (samples.empty()) throw ValidationError("lstm train: no samples");
  if (options.batch_size < 1) throw ValidationError("lstm train: batch size must be >= 1");
  if (options.learning_rate < 0.0 || options.momentum < 0.0 || options.momentum >= 1.0)
    throw ValidationError("lstm train: need learning_rate >= 0 and momentum in [0, 1)");
  validate(net);
  for (const auto& s : samples) check_sample(net, s);

  Rng rng(options.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t cursor = 0;

  std::vector<double> params = flatten(net);
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> batch_grad(params.size());
  TrainResult result;
  for (int iter = 0; iter < options.max_iters; ++iter) {
    std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
    double batch_loss = 0.0;
    const auto batch =
        static_cast<std::size_t>(std::min<Index>(options.batch_size, static_cast<Index>(samples.size())));
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const SequenceSample& sample = samples[order[cursor++]];
      double sample_loss = 0.0;
      const std::vector<double> g = flatten(gradients_with_loss(net, sample, &sample_loss));
      batch_loss += sample_loss;
      for (std::size_t k = 0; k < g.size(); ++k) batch_grad[k] += g[k];
    }
    const double scale = 1.0 / static_cast<double>(batch);
    batch_loss *= scale;
    if (!std::isfinite(batch_loss))
      throw NumericalError(fmt::format("lstm train: loss diverged at iteration {}", iter));
    result.loss_trace.push_back(batch_loss);

    double norm_sq = 0.0;
    for (double& v : batch_grad) {
      v *= scale;
      norm_sq += v * v;
    }
    const double norm = std::sqrt(norm_sq);
    const double clip = (options.clip_norm > 0.0 && norm > options.clip_norm) ? options.clip_norm / norm : 1.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      velocity[k] = options.momentum * velocity[k] - options.learning_rate * clip * batch_grad[k];
      params[k] += velocity[k];
    }
    unflatten(net, params);
  }
  result.net = std::move(net);
  return result;
}

Index predict_class(const Network& net, const SequenceSample& sample) {
  return argmax(forward(net, sample).probabilities.transpose());
}

double accuracy(const Network& net, const std::vector<SequenceSample>& samples) {
  if (samples.empty()) throw ValidationError("lstm accuracy: no samples");
  Index hits = 0;
  for (const auto& s : samples)
    if (predict_class(net, s) == s.label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

std::vector<SequenceSample> majority_symbol_task(const MajorityTaskConfig& config) {
  if (config.count < 1 || config.seq_len < 1 || config.classes < 2)
    throw ValidationError("majority task: need count >= 1, seq_len >= 1, classes >= 2");
  if (!(config.bias >= 0.0 && config.bias <= 1.0)) throw ValidationError("majority task: bias must lie in [0, 1]");
  Rng rng(config.seed);
  std::vector<SequenceSample> out;
  std::vector<Index> symbols(static_cast<std::size_t>(config.seq_len));
  std::vector<Index> counts(static_cast<std::size_t>(config.classes));
  while (static_cast<Index>(out.size()) < config.count) {
    const auto label = static_cast<Index>(rng.index(static_cast<std::size_t>(config.classes)));
    std::fill(counts.begin(), counts.end(), 0);
    for (auto& sym : symbols) {
      sym =
          rng.uniform() < config.bias ? label : static_cast<Index>(rng.index(static_cast<std::size_t>(config.classes)));
      ++counts[static_cast<std::size_t>(sym)];
    }
    bool strict = true;
    for (Index c = 0; c < config.classes; ++c)
      if (c != label && counts[static_cast<std::size_t>(c)] >= counts[static_cast<std::size_t>(label)]) strict = false;
    if (!strict) continue;
    SequenceSample sample;
    sample.label = label;
    for (Index sym : symbols) {
      Vector x = Vector::Zero(config.classes);
      x(sym) = 1.0;
      sample.inputs.push_back(std::move(x));
    }
    out.push_back(std::move(sample));
  }
  return out;
}

MajorityOutcome run_majority_experiment(const MajorityExperiment& experiment) {
  Rng root(experiment.seed);
  MajorityTaskConfig task = experiment.task;
  task.seed = root.fork(0).next();
  MajorityTaskConfig held = task;
  held.count = experiment.holdout;
  held.seed = root.fork(1).next();
  TrainOptions options = experiment.train;
  options.seed = root.fork(3).next();

  const auto train_set = majority_symbol_task(task);
  const auto net = Network::random(task.classes, experiment.hidden, task.classes, root.fork(2).next());
  MajorityOutcome outcome;
  outcome.result = train(net, train_set, options);
  outcome.train_accuracy = accuracy(outcome.result.net, train_set);
  outcome.holdout_accuracy = std::numeric_limits<double>::quiet_NaN();
  if (experiment.holdout > 0) outcome.holdout_accuracy = accuracy(outcome.result.net, majority_symbol_task(held));
  return outcome;
}

}  // namespace fusionforge::lstm
