#include "mmtseg/trainer.hpp"

#include <stdexcept>

#include "mmtseg/label_align.hpp"
#include "mmtseg/losses.hpp"

namespace mmtseg {

OutputModel parse_output_model(const std::string& name) {
  if (name == "model1") return OutputModel::model1;
  if (name == "model2") return OutputModel::model2;
  if (name == "mean1") return OutputModel::mean1;
  if (name == "mean2") return OutputModel::mean2;
  throw std::invalid_argument("unknown output model '" + name + "' (model1|model2|mean1|mean2)");
}

std::string to_string(OutputModel m) {
  switch (m) {
    case OutputModel::model1: return "model1";
    case OutputModel::model2: return "model2";
    case OutputModel::mean1: return "mean1";
    case OutputModel::mean2: return "mean2";
  }
  return "?";
}

void TrainerConfig::validate() const {
  network.validate();
  if (iterations < 1) throw std::invalid_argument("iterations must be at least 1");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in [0, 1)");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be non-negative");
}

const ModelParams& TrainerState::select(OutputModel m) const {
  switch (m) {
    case OutputModel::model1: return model1;
    case OutputModel::model2: return model2;
    case OutputModel::mean1: return mean1;
    case OutputModel::mean2: return mean2;
  }
  return mean1;
}

TrainerState init_state(const TrainerConfig& config) {
  config.network.validate();
  TrainerState s;
  s.model1 = init_params(config.network, config.seed1);
  s.model2 = init_params(config.network, config.seed2);
  s.mean1 = s.model1;
  s.mean2 = s.model2;
  return s;
}

void ema_update(ModelParams& mean, const ModelParams& current, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("ema_update: alpha must lie in [0, 1)");
  auto dst = mean.tensors();
  const auto src = current.tensors();
  if (dst.size() != src.size()) throw std::invalid_argument("ema_update: parameter sets differ in layout");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    Tensor& m = dst[k]->value;
    const Tensor& c = src[k]->value;
    if (!m.same_shape(c)) {
      throw std::invalid_argument("ema_update: shape " + shape_string(m.shape()) + " vs " +
                                  shape_string(c.shape()));
    }
    if (alpha == 0.0) {
      m = c;
      continue;
    }
    // Increment form: leaves the mean bit-identical when it already equals current.
    const double rate = 1.0 - alpha;
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += rate * (c[i] - m[i]);
  }
}

StepMetrics train_step(int learner, TrainerState& state, const ImageTensor& image,
                       const TrainerConfig& config) {
  if (learner != 1 && learner != 2) throw std::invalid_argument("train_step: learner must be 1 or 2");
  ModelParams& model = state.learner(learner);

  ForwardTrace trace;
  const FeatureMap features = forward(model, image, trace);
  const LabelMap current = assign_labels(features);

  LabelMap teacher = current;
  if (config.mode == TrainingMode::mutual) {
    teacher = assign_labels(forward(state.mean(learner == 1 ? 2 : 1), image));
  }
  const LabelMapping mapping = solve_assignment(overlap_matrix(teacher, current));
  const LabelMap targets = apply_mapping(teacher, mapping);

  const LossValue sim = sim_loss(features, targets);
  const LossValue tv = tv_loss(features);
  Tensor grad = sim.gradient;
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += config.beta * tv.gradient[i];

  StepMetrics m;
  m.iteration = state.iteration;
  m.network = learner;
  m.sim = sim.value;
  m.tv = tv.value;
  m.total = sim.value + config.beta * tv.value;
  m.clusters = current.cluster_count();
  m.teacher_clusters = teacher.cluster_count();
  m.degenerate_teacher = m.teacher_clusters == 1;
  m.identity_alignment = mapping.is_identity();

  // Pixel-mean objective for the update; keeps the step size independent of image area.
  const double scale = 1.0 / static_cast<double>(current.pixels());
  for (double& g : grad.data()) g *= scale;
  backward(model, trace, grad);
  sgd_momentum_step(model.tensors(), config.lr, config.momentum);
  ema_update(state.mean(learner), model, config.alpha);

  state.log.push_back(m);
  return m;
}

TrainResult train(const ImageTensor& image, const TrainerConfig& config) {
  config.validate();
  TrainerState state = init_state(config);
  TrainResult result;
  for (std::size_t t = 2; t <= config.iterations; ++t) {
    state.iteration = t;
    const StepMetrics a = train_step(1, state, image, config);
    bool collapsed = a.clusters == 1;
    if (config.mode == TrainingMode::mutual) {
      const StepMetrics b = train_step(2, state, image, config);
      collapsed = collapsed && b.clusters == 1;
    }
    ++result.rounds;
    if (collapsed) {
      result.collapsed = true;
      break;
    }
  }
  OutputModel out = config.output;
  if (config.mode == TrainingMode::single) out = OutputModel::model1;
  result.labels = assign_labels(forward(state.select(out), image));
  result.log = std::move(state.log);
  return result;
}

}  // namespace mmtseg
