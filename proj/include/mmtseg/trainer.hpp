#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmtseg/label_map.hpp"
#include "mmtseg/segnet.hpp"

namespace mmtseg {

/// Which of the four networks produces the final segmentation.
enum class OutputModel { model1, model2, mean1, mean2 };

OutputModel parse_output_model(const std::string& name);
std::string to_string(OutputModel m);

/// `mutual`: the two networks teach each other through their mean models.
/// `single`: network 1 alone, trained on its own current argmax labels.
enum class TrainingMode { mutual, single };

struct TrainerConfig {
  std::size_t iterations = 1000;  // T
  double lr = 0.1;
  double momentum = 0.9;
  double alpha = 0.999;  // EMA coefficient of the mean models
  double beta = 5.0;     // TV weight
  std::uint64_t seed1 = 1;
  std::uint64_t seed2 = 2;
  NetworkConfig network;
  OutputModel output = OutputModel::mean1;
  TrainingMode mode = TrainingMode::mutual;

  void validate() const;
};

struct StepMetrics {
  std::size_t iteration = 0;
  int network = 1;
  double sim = 0.0;
  double tv = 0.0;
  double total = 0.0;
  std::size_t clusters = 0;          // learner's current label count
  std::size_t teacher_clusters = 0;  // pseudo-label count
  bool degenerate_teacher = false;
  bool identity_alignment = false;
};

struct TrainerState {
  ModelParams model1, model2;
  ModelParams mean1, mean2;
  std::size_t iteration = 1;
  std::vector<StepMetrics> log;

  ModelParams& learner(int network) { return network == 1 ? model1 : model2; }
  ModelParams& mean(int network) { return network == 1 ? mean1 : mean2; }
  const ModelParams& select(OutputModel m) const;
};

/// Both networks initialized from their seeds; mean models start equal to them.
TrainerState init_state(const TrainerConfig& config);

/// mean <- alpha * mean + (1 - alpha) * current, on parameter values only.
void ema_update(ModelParams& mean, const ModelParams& current, double alpha);

/// One learner update: the other network's mean model labels the image, the
/// labels are aligned into the learner's current label space, and the learner
/// takes one SGD step on sim + beta * tv before its mean model is refreshed.
StepMetrics train_step(int learner, TrainerState& state, const ImageTensor& image,
                       const TrainerConfig& config);

struct TrainResult {
  LabelMap labels;
  std::vector<StepMetrics> log;
  std::size_t rounds = 0;
  bool collapsed = false;  // stopped early: every learner down to one cluster
};

TrainResult train(const ImageTensor& image, const TrainerConfig& config);

}  // namespace mmtseg
