#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "mmtseg/label_align.hpp"
#include "mmtseg/losses.hpp"
#include "mmtseg/trainer.hpp"
#include "test_helpers.hpp"

using namespace mmtseg;
using mmtseg::testing::random_tensor;

namespace {

TrainerConfig small_trainer() {
  TrainerConfig c;
  c.network.layers = 2;
  c.network.channels = 6;
  c.iterations = 5;
  c.seed1 = 3;
  c.seed2 = 4;
  return c;
}

bool same_values(const ModelParams& a, const ModelParams& b) {
  const auto x = a.tensors(), y = b.tensors();
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k]->value == y[k]->value)) return false;
  }
  return true;
}

ModelParams filled_like(const ModelParams& shape, std::mt19937_64& rng) {
  ModelParams p = shape;
  for (auto* t : p.tensors()) t->value = random_tensor(t->value.shape(), rng);
  return p;
}

}  // namespace

TEST_CASE("ema_update examples") {
  const auto cfg = small_trainer();
  ModelParams mean = init_params(cfg.network, 1), cur = init_params(cfg.network, 2);
  ModelParams m = mean;
  ema_update(m, cur, 0.0);
  CHECK(same_values(m, cur));

  for (auto* t : mean.tensors()) t->value.fill(0.0);
  for (auto* t : cur.tensors()) t->value.fill(1.0);
  ema_update(mean, cur, 0.999);
  for (const auto* t : mean.tensors())
    for (double v : t->value.data()) CHECK(std::abs(v - 0.001) <= 1e-15);

  CHECK_THROWS_AS(ema_update(mean, cur, 1.0), std::invalid_argument);
  NetworkConfig other = cfg.network;
  other.channels = 5;
  ModelParams wrong = init_params(other, 1);
  CHECK_THROWS_AS(ema_update(mean, wrong, 0.5), std::invalid_argument);
}

TEST_CASE("ema_update leaves optimizer buffers alone") {
  const auto cfg = small_trainer();
  ModelParams mean = init_params(cfg.network, 1), cur = init_params(cfg.network, 2);
  for (auto* t : mean.tensors()) {
    t->grad.fill(0.25);
    t->momentum.fill(-0.5);
  }
  ema_update(mean, cur, 0.3);
  for (const auto* t : mean.tensors()) {
    CHECK(t->grad == Tensor(t->grad.shape(), 0.25));
    CHECK(t->momentum == Tensor(t->momentum.shape(), -0.5));
  }
}

TEST_CASE("ema_update matches the closed-form expansion") {
  const auto cfg = small_trainer();
  std::mt19937_64 rng(31);
  const ModelParams start = filled_like(init_params(cfg.network, 1), rng);
  for (double alpha : {0.5, 0.9, 0.999}) {
    ModelParams mean = start;
    std::vector<ModelParams> history;
    for (int t = 0; t < 10; ++t) {
      history.push_back(filled_like(start, rng));
      ema_update(mean, history.back(), alpha);
    }
    // alpha^T * mean0 + (1 - alpha) * sum_t alpha^(T - t) * theta_t
    const auto got = mean.tensors();
    const auto init = start.tensors();
    for (std::size_t k = 0; k < got.size(); ++k) {
      for (std::size_t i = 0; i < got[k]->value.size(); ++i) {
        double expect = std::pow(alpha, 10) * init[k]->value[i];
        for (int t = 0; t < 10; ++t) expect += (1 - alpha) * std::pow(alpha, 9 - t) * history[t].tensors()[k]->value[i];
        CHECK(std::abs(got[k]->value[i] - expect) <= 1e-12);
      }
    }
  }
}

TEST_CASE("init_state starts the mean models at the networks") {
  const auto cfg = small_trainer();
  const TrainerState s = init_state(cfg);
  CHECK(same_values(s.mean1, s.model1));
  CHECK(same_values(s.mean2, s.model2));
  CHECK(!same_values(s.model1, s.model2));
}

TEST_CASE("a step touches only the learner and its mean model") {
  const auto cfg = small_trainer();
  const Tensor img = testing::two_region_image(8);
  for (int learner : {1, 2}) {
    TrainerState s = init_state(cfg);
    const TrainerState before = s;
    train_step(learner, s, img, cfg);
    const int other = learner == 1 ? 2 : 1;
    CHECK(same_values(s.learner(other), other == 1 ? before.model1 : before.model2));
    CHECK(same_values(s.mean(other), other == 1 ? before.mean1 : before.mean2));
    CHECK(!same_values(s.learner(learner), learner == 1 ? before.model1 : before.model2));
    CHECK(!same_values(s.mean(learner), learner == 1 ? before.mean1 : before.mean2));
  }
}

TEST_CASE("zero learning rate leaves every model in place") {
  auto cfg = small_trainer();
  cfg.lr = 0.0;  // train_step itself accepts what validate() would refuse
  const Tensor img = testing::two_region_image(8);
  TrainerState s = init_state(cfg);
  const TrainerState before = s;
  train_step(1, s, img, cfg);
  CHECK(same_values(s.model1, before.model1));
  CHECK(same_values(s.mean1, before.mean1));
}

TEST_CASE("reported loss matches an independent recomputation") {
  const auto cfg = small_trainer();
  std::mt19937_64 rng(32);
  const Tensor img = random_tensor({3, 7, 9}, rng, 0, 1);
  TrainerState s = init_state(cfg);
  for (int learner : {1, 2, 1}) {
    const ModelParams model = s.learner(learner);
    const ModelParams teacher_model = s.mean(learner == 1 ? 2 : 1);
    const StepMetrics m = train_step(learner, s, img, cfg);

    const FeatureMap f = forward(model, img);
    const LabelMap current = assign_labels(f);
    const LabelMap teacher = assign_labels(forward(teacher_model, img));
    const LabelMap targets = align_labels(teacher, current);
    const LossValue expect = total_loss(f, targets, cfg.beta);
    CHECK(std::abs(m.total - expect.value) <= 1e-12 * std::max(1.0, std::abs(expect.value)));
    CHECK(std::abs(m.sim + cfg.beta * m.tv - m.total) <= 1e-12 * std::max(1.0, m.total));
    CHECK(m.clusters == current.cluster_count());
    CHECK(m.teacher_clusters == teacher.cluster_count());
    CHECK(m.network == learner);
  }
}

TEST_CASE("single mode teaches a network with its own labels") {
  auto cfg = small_trainer();
  cfg.mode = TrainingMode::single;
  std::mt19937_64 rng(33);
  const Tensor img = random_tensor({3, 6, 6}, rng, 0, 1);
  TrainerState s = init_state(cfg);
  const StepMetrics m = train_step(1, s, img, cfg);
  CHECK(m.identity_alignment);
  CHECK(m.teacher_clusters == m.clusters);
}

TEST_CASE("equal seeds start from a symmetric state") {
  auto cfg = small_trainer();
  cfg.seed2 = cfg.seed1;
  cfg.alpha = 0.0;
  std::mt19937_64 rng(34);
  const Tensor img = random_tensor({3, 6, 6}, rng, 0, 1);
  TrainerState s = init_state(cfg);
  CHECK(same_values(s.model1, s.model2));
  // The first step sees its own labels as the teacher's, so alignment is trivial.
  const StepMetrics m = train_step(1, s, img, cfg);
  CHECK(m.identity_alignment);
  CHECK(m.teacher_clusters == m.clusters);
  // With alpha = 0 the mean model is the network itself.
  CHECK(same_values(s.mean1, s.model1));
}

TEST_CASE("train contract and determinism") {
  const auto cfg = small_trainer();
  std::mt19937_64 rng(35);
  const Tensor img = random_tensor({3, 6, 7}, rng, 0, 1);
  const TrainResult a = train(img, cfg), b = train(img, cfg);
  CHECK(a.labels == b.labels);
  CHECK(a.labels.width == 7);
  CHECK(a.labels.height == 6);
  for (Label l : a.labels.labels) CHECK(l < static_cast<Label>(cfg.network.channels));
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t k = 0; k < a.log.size(); ++k) CHECK(a.log[k].total == b.log[k].total);
  if (!a.collapsed) {
    CHECK(a.rounds == cfg.iterations - 1);
    CHECK(a.log.size() == 2 * (cfg.iterations - 1));
  }
  CHECK(a.log.front().network == 1);
  CHECK(a.log.front().iteration == 2);
}

TEST_CASE("training on a constant image ends with one cluster") {
  auto cfg = small_trainer();
  cfg.iterations = 4;
  const TrainResult r = train(Tensor({3, 8, 8}, 0.4), cfg);
  CHECK(r.labels.cluster_count() == 1);
  CHECK(r.collapsed);
  CHECK(r.rounds == 1);
}

TEST_CASE("recorded mean trajectory obeys the closed form over 50 steps") {
  auto cfg = small_trainer();
  cfg.alpha = 0.9;
  std::mt19937_64 rng(36);
  const Tensor img = random_tensor({3, 6, 6}, rng, 0, 1);
  TrainerState s = init_state(cfg);
  const ModelParams mean0 = s.mean1;
  std::vector<ModelParams> thetas;
  for (int t = 0; t < 50; ++t) {
    train_step(1, s, img, cfg);
    thetas.push_back(s.model1);
  }
  const auto got = s.mean1.tensors();
  double worst = 0.0;
  for (std::size_t k = 0; k < got.size(); ++k) {
    for (std::size_t i = 0; i < got[k]->value.size(); ++i) {
      double expect = std::pow(cfg.alpha, 50) * mean0.tensors()[k]->value[i];
      for (int t = 0; t < 50; ++t) expect += (1 - cfg.alpha) * std::pow(cfg.alpha, 49 - t) * thetas[t].tensors()[k]->value[i];
      worst = std::max(worst, std::abs(got[k]->value[i] - expect));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("trainer config validation") {
  TrainerConfig c;
  CHECK_NOTHROW(c.validate());
  c.alpha = 1.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.lr = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.iterations = 0;
  CHECK_THROWS(c.validate());
  CHECK(parse_output_model("mean2") == OutputModel::mean2);
  CHECK(to_string(OutputModel::model1) == "model1");
  CHECK_THROWS_AS(parse_output_model("best"), std::invalid_argument);
}
