#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>

#include "doctest.h"
#include "fcdd/train.hpp"

namespace fs = std::filesystem;
using namespace fcdd;

namespace {

std::vector<NamedParam<double>> one_param(Tensor<double>& t) {
  return {{"p", t}};
}

Dataset blob_dataset(float level, int count, int label = 0) {
  Dataset ds;
  for (int i = 0; i < count; ++i) {
    Sample s;
    s.image = Image::zeros(1, 16, 16);
    Rng rng(derive_seed(7, label, i));
    std::uniform_real_distribution<float> dist(-0.1f, 0.1f);
    for (auto& v : s.image.data) v = std::clamp(level + dist(rng), 0.f, 1.f);
    s.label = label;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

ArchitectureSpec tiny_arch() {
  ArchitectureSpec s;
  s.in_channels = 1;
  s.in_height = s.in_width = 16;
  s.layers = {LayerSpec::conv(1, 4, 3, 1, 1), LayerSpec::batchnorm(),
              LayerSpec::leaky_relu(0.01), LayerSpec::maxpool(2, 2),
              LayerSpec::conv(4, 1, 3, 1, 1)};
  return s;
}

}  // namespace

TEST_CASE("sgd_nesterov_step matches the hand-computed recurrence") {
  auto theta = Tensor<double>::from({2}, {1.0, -2.0}, true);
  theta.grad() = {0.5, -1.0};
  auto params = one_param(theta);
  OptimizerState<double> st;
  const double lr = 0.1, mu = 0.9, wd = 0.01;

  // Step 1: geff = g + wd*theta; v = geff; theta -= lr*(geff + mu*v).
  const double g0 = 0.5 + 0.01 * 1.0, g1 = -1.0 + 0.01 * -2.0;
  const double v0 = g0, v1 = g1;
  const double t0 = 1.0 - lr * (g0 + mu * v0);
  const double t1 = -2.0 - lr * (g1 + mu * v1);
  sgd_nesterov_step(params, st, lr, mu, wd);
  CHECK(theta.values()[0] == doctest::Approx(t0).epsilon(1e-12));
  CHECK(theta.values()[1] == doctest::Approx(t1).epsilon(1e-12));
  CHECK(st.step == 1);

  // Step 2 with the same raw gradient, velocity accumulates.
  const double g0b = 0.5 + 0.01 * t0;
  const double v0b = mu * v0 + g0b;
  const double t0b = t0 - lr * (g0b + mu * v0b);
  sgd_nesterov_step(params, st, lr, mu, wd);
  CHECK(theta.values()[0] == doctest::Approx(t0b).epsilon(1e-12));
  (void)v1;
  (void)t1;
}

TEST_CASE("adam_step matches the bias-corrected update") {
  auto theta = Tensor<double>::from({1}, {0.5}, true);
  theta.grad() = {0.2};
  auto params = one_param(theta);
  OptimizerState<double> st;
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  const double m = (1 - b1) * 0.2;
  const double v = (1 - b2) * 0.04;
  const double mhat = m / (1 - b1);
  const double vhat = v / (1 - b2);
  const double want = 0.5 - lr * mhat / (std::sqrt(vhat) + eps);
  adam_step(params, st, lr, b1, b2, 0.0);
  CHECK(theta.values()[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("adam weight decay: decoupled shrinks theta directly") {
  auto a = Tensor<double>::from({1}, {1.0}, true);
  auto b = Tensor<double>::from({1}, {1.0}, true);
  a.grad() = {0.0};
  b.grad() = {0.0};
  auto pa = one_param(a);
  auto pb = one_param(b);
  OptimizerState<double> sa, sb;
  adam_step(pa, sa, 0.1, 0.9, 0.999, 0.5, /*coupled=*/false);
  adam_step(pb, sb, 0.1, 0.9, 0.999, 0.5, /*coupled=*/true);
  // Decoupled: theta <- theta - lr*wd*theta = 0.95, then a zero-moment update.
  CHECK(a.values()[0] == doctest::Approx(0.95).epsilon(1e-6));
  // Coupled: wd enters the moments, so the sqrt-normalized step is much larger.
  CHECK(b.values()[0] < 0.95);
}

TEST_CASE("schedule_lr") {
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  CHECK(schedule_lr(5, cfg) == 0.1);
  cfg.schedule = "exponential";
  cfg.gamma = 0.5;
  CHECK(schedule_lr(0, cfg) == doctest::Approx(0.1));
  CHECK(schedule_lr(3, cfg) == doctest::Approx(0.1 * 0.125));
  cfg.schedule = "milestones";
  cfg.milestones = {2, 4};
  CHECK(schedule_lr(1, cfg) == doctest::Approx(0.1));
  CHECK(schedule_lr(2, cfg) == doctest::Approx(0.01));
  CHECK(schedule_lr(4, cfg) == doctest::Approx(0.001));
  CHECK_THROWS_AS(schedule_lr(-1, cfg), UsageError);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.anomaly_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.optimizer.family = "lbfgs";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.optimizer.schedule = "cosine";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(parse_loss_mode("mse"), ConfigError);
}

TEST_CASE("training separates two intensity populations") {
  // Nominal dark blobs vs anomalous bright blobs via outlier exposure.
  Dataset train_data = blob_dataset(0.2f, 24);
  Dataset oe = blob_dataset(0.8f, 24, 0);

  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 8;
  cfg.loss = LossMode::kFcdd;
  cfg.anomaly_source = AnomalySource::kOutlierExposure;
  cfg.anomaly_prob = 0.5;
  cfg.seed = 11;
  cfg.optimizer.lr = 5e-3;

  auto model = FCNModel<float>::build(tiny_arch(), 11);
  const TrainLog log = train(model, train_data, oe, cfg);
  REQUIRE(log.entries.size() == 12);
  CHECK(log.entries.front().mean_loss > log.entries.back().mean_loss);

  // Scores must rank the bright population above the dark one.
  auto score = [&](const Dataset& ds) {
    double total = 0;
    for (const Sample& s : ds.samples) {
      auto phi = model.forward(to_tensor({s}), Mode::kEval);
      total += anomaly_score(heatmap_A(phi));
    }
    return total / ds.size();
  };
  CHECK(score(oe) > score(train_data));
}

TEST_CASE("training is deterministic in the seed") {
  Dataset train_data = blob_dataset(0.3f, 12);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.anomaly_source = AnomalySource::kConfetti;
  cfg.confetti = ConfettiConfig{1, 2, 3, 6, "shift"};
  cfg.anomaly_prob = 0.5;
  cfg.seed = 5;

  auto a = FCNModel<float>::build(tiny_arch(), 5);
  auto b = FCNModel<float>::build(tiny_arch(), 5);
  const TrainLog la = train(a, train_data, {}, cfg);
  const TrainLog lb = train(b, train_data, {}, cfg);
  CHECK(la.entries.back().mean_loss == lb.entries.back().mean_loss);
  CHECK(a.conv_weights()[0].values() == b.conv_weights()[0].values());

  cfg.seed = 6;
  auto c = FCNModel<float>::build(tiny_arch(), 5);
  train(c, train_data, {}, cfg);
  CHECK(a.conv_weights()[0].values() != c.conv_weights()[0].values());
}

TEST_CASE("pixel loss mode trains end to end through the upsampler") {
  Dataset train_data = blob_dataset(0.25f, 12);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.loss = LossMode::kFcddPixel;
  cfg.anomaly_source = AnomalySource::kConfetti;
  cfg.confetti = ConfettiConfig{1, 2, 3, 6, "shift"};
  cfg.anomaly_prob = 0.5;
  cfg.seed = 8;
  auto model = FCNModel<float>::build(tiny_arch(), 8);
  const TrainLog log = train(model, train_data, {}, cfg);
  for (const auto& e : log.entries) CHECK(std::isfinite(e.mean_loss));
}

TEST_CASE("checkpoint cadence and train log files") {
  const fs::path out = fs::temp_directory_path() / "fcdd_train_out";
  fs::remove_all(out);
  Dataset train_data = blob_dataset(0.3f, 8);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.seed = 2;
  cfg.out_dir = out.string();
  cfg.checkpoint_every = 2;
  auto model = FCNModel<float>::build(tiny_arch(), 2);
  train(model, train_data, {}, cfg);
  CHECK(fs::exists(out / "epoch_2.ckpt"));
  CHECK(fs::exists(out / "epoch_4.ckpt"));
  CHECK(fs::exists(out / "model.ckpt"));
  CHECK(fs::exists(out / "train_log.csv"));
  fs::remove_all(out);
}

TEST_CASE("outlier exposure without a corpus is a configuration error") {
  Dataset train_data = blob_dataset(0.3f, 8);
  TrainConfig cfg;
  cfg.anomaly_source = AnomalySource::kOutlierExposure;
  auto model = FCNModel<float>::build(tiny_arch(), 1);
  CHECK_THROWS_AS(train(model, train_data, {}, cfg), ConfigError);
  CHECK_THROWS_AS(train(model, Dataset{}, {}, TrainConfig{}), ConfigError);
}
