#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fusionforge/score_data.hpp"

namespace fusionforge::lstm {

/// Pre-activation weights of one gate: input and recurrent matrices, an
/// elementwise cell-to-gate (peephole) vector, and a bias. The cell
/// candidate has no peephole, so its `peephole` is empty.
struct Gate {
  Matrix input;      // hidden x input_dim
  Matrix recurrent;  // hidden x hidden
  Vector peephole;   // hidden, or empty
  Vector bias;       // hidden
};

/// One LSTM layer:
///   i = sigma(Wxi x + Whi h' + wci . c' + bi)
///   f = sigma(Wxf x + Whf h' + wcf . c' + bf)
///   c = f . c' + i . tanh(Wxc x + Whc h' + bc)
///   o = sigma(Wxo x + Who h' + wco . c + bo)
///   h = o . tanh(c)
/// where h', c' are the previous step's state and `.` is elementwise.
struct Layer {
  Index input_dim = 0;
  Index hidden_dim = 0;
  Gate input_gate;
  Gate forget_gate;
  Gate candidate;
  Gate output_gate;

  static Layer zeros(Index input_dim, Index hidden_dim);
};

/// Stacked layers (layer l reads the hidden states of layer l-1) with a
/// softmax head on the last layer's final hidden state.
struct Network {
  std::vector<Layer> layers;
  Matrix head_weights;  // classes x last hidden
  Vector head_bias;     // classes

  Index input_dim() const { return layers.empty() ? 0 : layers.front().input_dim; }
  Index classes() const { return head_weights.rows(); }

  static Network zeros(Index input_dim, const std::vector<Index>& hidden, Index classes);
  // Uniform in [-scale, scale]; forget-gate biases start at `forget_bias`.
  static Network random(Index input_dim, const std::vector<Index>& hidden, Index classes, std::uint64_t seed,
                        double scale = 0.08, double forget_bias = 1.0);
};

void validate(const Network& net);

/// Visits every parameter array in a fixed order, identical for any two
/// networks of the same shape. Gradients share the Network layout.
void for_each_parameter(Network& net, const std::function<void(std::span<double>)>& visit);
void for_each_parameter(const Network& net, const std::function<void(std::span<const double>)>& visit);
Index parameter_count(const Network& net);
std::vector<double> flatten(const Network& net);
void unflatten(Network& net, std::span<const double> values);

struct State {
  std::vector<Vector> hidden;  // per layer
  std::vector<Vector> cell;    // per layer
};

struct SequenceSample {
  std::vector<Vector> inputs;
  Index label = 0;
};

struct StepResult {
  Vector hidden;
  Vector cell;
};

StepResult lstm_step(const Layer& layer, const Vector& input, const Vector& prev_hidden, const Vector& prev_cell);

/// Max-shifted softmax.
Vector softmax(const Vector& logits);

struct ForwardResult {
  std::vector<State> states;  // states[t] is the state after consuming inputs[t]
  Vector probabilities;       // softmax head on the last layer at the final step
};

ForwardResult forward(const Network& net, const SequenceSample& sample);

/// Cross-entropy at the final step, -log p[label].
double loss(const Network& net, const SequenceSample& sample);

/// Exact gradient of loss() for every parameter, by backpropagation through
/// time over all steps and layers. Throws NumericalError on non-finite values.
Network bptt_gradients(const Network& net, const SequenceSample& sample);

struct GradientCheck {
  double max_relative_error = 0.0;
  Index worst_parameter = 0;
  Index parameters = 0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor), numeric from
/// central differences of loss() with the given step.
inline constexpr double kGradientCheckFloor = 1e-4;
GradientCheck gradient_check(const Network& net, const SequenceSample& sample, double step = 1e-5,
                             double floor = kGradientCheckFloor);

struct TrainOptions {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double clip_norm = 5.0;
  int max_iters = 5000;
  Index batch_size = 10;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Network net;
  std::vector<double> loss_trace;  // mean mini-batch loss before each update
};

/// Mini-batch momentum SGD on the mean loss with global-norm clipping.
/// Batches walk a per-epoch shuffle drawn from `seed`.
TrainResult train(Network net, const std::vector<SequenceSample>& samples, const TrainOptions& options);

Index predict_class(const Network& net, const SequenceSample& sample);
double accuracy(const Network& net, const std::vector<SequenceSample>& samples);

struct MajorityTaskConfig {
  Index count = 1000;
  Index seq_len = 20;
  Index classes = 4;
  double bias = 0.25;  // chance that a step repeats the label symbol
  std::uint64_t seed = 0;
};

/// One-hot symbol sequences labeled by their strictly most frequent symbol.
std::vector<SequenceSample> majority_symbol_task(const MajorityTaskConfig& config);

/// One seeded run of the majority task. The training set, held-out set,
/// initial network and batch order each draw from their own stream of `seed`;
/// the seed fields of `task` and `train` are ignored.
struct MajorityExperiment {
  MajorityTaskConfig task;
  Index holdout = 1000;
  std::vector<Index> hidden{16, 12};
  TrainOptions train;
  std::uint64_t seed = 0;
};

struct MajorityOutcome {
  TrainResult result;
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;  // NaN when holdout is 0
};

MajorityOutcome run_majority_experiment(const MajorityExperiment& experiment);

}  // namespace fusionforge::lstm
