#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fcdd/data.hpp"
#include "fcdd/loss.hpp"
#include "fcdd/model.hpp"
#include "fcdd/model_io.hpp"
#include "fcdd/rng.hpp"
#include "fcdd/upsample.hpp"

namespace fcdd {

// --- optimizers ----------------------------------------------------------

struct OptimizerConfig {
  std::string family = "sgd_nesterov";  // "sgd_nesterov" | "adam"
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  bool decoupled_weight_decay = true;  // adam only; coupled mode available
  std::string schedule = "none";       // "none" | "exponential" | "milestones"
  double gamma = 0.98;                 // exponential per-epoch factor
  std::vector<long> milestones;        // divide-by-10 epochs

  void validate() const {
    if (family != "sgd_nesterov" && family != "adam")
      throw ConfigError("optimizer family must be sgd_nesterov or adam");
    if (!(lr > 0)) throw ConfigError("optimizer: lr must be > 0");
    if (momentum < 0 || momentum >= 1)
      throw ConfigError("optimizer: momentum must be in [0,1)");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw ConfigError("optimizer: betas must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("optimizer: weight decay must be >= 0");
    if (schedule != "none" && schedule != "exponential" && schedule != "milestones")
      throw ConfigError("optimizer: unknown schedule '" + schedule + "'");
  }
};

// Per-tensor optimizer state (momentum or Adam moments).
template <class T>
struct OptimizerState {
  std::vector<std::vector<T>> momentum;  // sgd velocity
  std::vector<std::vector<T>> m, v;      // adam moments
  long step = 0;

  void ensure(const std::vector<NamedParam<T>>& params) {
    auto fit = [&](std::vector<std::vector<T>>& bufs) {
      if (bufs.size() != params.size()) {
        bufs.clear();
        for (const auto& p : params)
          bufs.emplace_back(p.tensor.numel(), T(0));
      }
    };
    fit(momentum);
    fit(m);
    fit(v);
  }
};

// v <- mu*v + g + wd*theta; theta <- theta - lr*(g + wd*theta + mu*v).
template <class T>
void sgd_nesterov_step(std::vector<NamedParam<T>>& params,
                       OptimizerState<T>& state, T lr, T mu, T wd) {
  state.ensure(params);
  for (size_t p = 0; p < params.size(); ++p) {
    auto& theta = params[p].tensor.values();
    const auto& grad = params[p].tensor.grad();
    if (grad.size() != theta.size())
      throw UsageError("sgd step: gradient shape mismatch for " + params[p].name);
    auto& vel = state.momentum[p];
    for (size_t i = 0; i < theta.size(); ++i) {
      const T geff = grad[i] + wd * theta[i];
      vel[i] = mu * vel[i] + geff;
      theta[i] -= lr * (geff + mu * vel[i]);
    }
  }
  ++state.step;
}

// Bias-corrected Adam; weight decay is decoupled (applied directly to theta)
// unless `coupled` folds it into the gradient.
template <class T>
void adam_step(std::vector<NamedParam<T>>& params, OptimizerState<T>& state,
               T lr, T beta1, T beta2, T wd, bool coupled = false,
               T eps = T(1e-8)) {
  state.ensure(params);
  const long t = ++state.step;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), t));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), t));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& theta = params[p].tensor.values();
    const auto& grad = params[p].tensor.grad();
    if (grad.size() != theta.size())
      throw UsageError("adam step: gradient shape mismatch for " + params[p].name);
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (size_t i = 0; i < theta.size(); ++i) {
      T g = grad[i];
      if (coupled)
        g += wd * theta[i];
      else
        theta[i] -= lr * wd * theta[i];
      m[i] = beta1 * m[i] + (T(1) - beta1) * g;
      v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

inline double schedule_lr(long epoch, const OptimizerConfig& cfg) {
  if (epoch < 0) throw UsageError("schedule_lr: negative epoch");
  if (cfg.schedule == "exponential")
    return cfg.lr * std::pow(cfg.gamma, static_cast<double>(epoch));
  if (cfg.schedule == "milestones") {
    long hits = 0;
    for (long m : cfg.milestones)
      if (m <= epoch) ++hits;
    return cfg.lr * std::pow(10.0, -static_cast<double>(hits));
  }
  return cfg.lr;
}

// --- training loop -------------------------------------------------------

enum class LossMode { kHsc, kFcdd, kFcddPixel };

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "hsc") return LossMode::kHsc;
  if (s == "fcdd") return LossMode::kFcdd;
  if (s == "fcdd_pixel") return LossMode::kFcddPixel;
  throw ConfigError("loss mode must be hsc, fcdd or fcdd_pixel");
}

// How anomalous training samples are sourced for nominal-only datasets.
enum class AnomalySource { kNone, kOutlierExposure, kConfetti };

struct TrainConfig {
  long epochs = 10;
  long batch_size = 32;
  LossMode loss = LossMode::kFcdd;
  AnomalySource anomaly_source = AnomalySource::kNone;
  double anomaly_prob = 0.5;  // per-nominal-sample replacement/injection chance
  ConfettiConfig confetti;
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  // 0: final only (when out_dir set)
  std::string out_dir;        // empty: no checkpoints
  long anomaly_repeat = 1;    // oversampling factor for labeled anomalies
  float upsample_sigma = 1.2f;  // fcdd_pixel mode
  OptimizerConfig optimizer;

  void validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("train: batch size must be >= 2");
    if (anomaly_prob < 0 || anomaly_prob > 1)
      throw ConfigError("train: anomaly probability must be in [0,1]");
    if (anomaly_repeat < 1) throw ConfigError("train: anomaly repeat must be >= 1");
    if (!(upsample_sigma > 0)) throw ConfigError("train: upsample sigma must be > 0");
    optimizer.validate();
  }
};

struct TrainLogEntry {
  long epoch;
  double mean_loss;
  double lr;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;

  void to_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write train log: " + path);
    out << "epoch,loss,lr\n";
    for (const auto& e : entries)
      out << e.epoch << "," << e.mean_loss << "," << e.lr << "\n";
  }
};

namespace detail {

inline Tensor<float> reshape_to_rows(const Tensor<float>& t, long b, long d) {
  std::vector<float> vals = t.values();
  return fcdd::detail::make_node<float>(
      {b, d}, std::move(vals), {t}, [](fcdd::detail::TensorImpl<float>& self) {
        auto& pin = *self.parents[0];
        pin.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pin.grad[i] += self.grad[i];
      });
}

}  // namespace detail

// One optimization run per Appendix-style pipeline: shuffle, augment, mix in
// anomalies, forward, loss, backward, step. Deterministic given (config,
// seed) within one build. Throws NumericError on divergence after writing a
// diagnostic checkpoint when an output directory is set.
inline TrainLog train(FCNModel<float>& model, const Dataset& train_data,
                      const Dataset& oe_data, const TrainConfig& cfg,
                      const AugmentPolicy& augment_policy = {}) {
  cfg.validate();
  if (cfg.anomaly_source == AnomalySource::kOutlierExposure &&
      cfg.anomaly_prob > 0 && oe_data.empty())
    throw ConfigError("train: outlier exposure requested with empty OE dataset");
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  const RFInfo rf = receptive_field(model.spec());
  const long in_h = model.spec().in_height, in_w = model.spec().in_width;

  // Epoch index list: every sample once, labeled anomalies oversampled.
  std::vector<size_t> base_indices;
  for (size_t i = 0; i < train_data.size(); ++i) {
    const long repeat = train_data.samples[i].label == 1 ? cfg.anomaly_repeat : 1;
    for (long r = 0; r < repeat; ++r) base_indices.push_back(i);
  }
  if (base_indices.empty()) throw ConfigError("train: empty training dataset");

  AugmentPolicy pre = augment_policy;
  pre.normalize = false;
  AugmentPolicy post;  // normalization runs after anomaly injection
  post.normalize = augment_policy.normalize;
  post.mean = augment_policy.mean;
  post.stddev = augment_policy.stddev;

  auto params = model.parameters();
  OptimizerState<float> opt_state;
  TrainLog log;

  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule_lr(epoch, cfg.optimizer);
    std::vector<size_t> order = base_indices;
    {
      Rng rng(derive_seed(cfg.seed, 0x5f5fULL, static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
    }
    double loss_sum = 0;
    long batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;  // batchnorm needs >= 2 samples
      std::vector<Sample> batch;
      std::vector<std::vector<float>> gt;
      for (size_t bi = start; bi < end; ++bi) {
        const size_t idx = order[bi];
        Sample s = train_data.samples[idx];
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 17,
                            static_cast<std::uint64_t>(idx) * 2654435761ULL + bi));
        // Samples carrying ground-truth maps skip geometric augmentation so
        // image and mask stay aligned.
        AugmentPolicy p = pre;
        if (s.gt_map) {
          p.crop_size = 0;
          p.hflip_prob = 0.0;
        }
        s.image = augment(s.image, p, rng);
        if (s.label == 0 && cfg.anomaly_prob > 0) {
          std::uniform_real_distribution<double> coin(0.0, 1.0);
          if (cfg.anomaly_source == AnomalySource::kOutlierExposure) {
            if (coin(rng) < cfg.anomaly_prob) {
              std::uniform_int_distribution<size_t> pick(0, oe_data.size() - 1);
              s = oe_data.samples[pick(rng)];
              s.label = 1;
              s.image = augment(s.image, pre, rng);
            }
          } else if (cfg.anomaly_source == AnomalySource::kConfetti) {
            if (coin(rng) < cfg.anomaly_prob) {
              auto [img, mask] = confetti(s.image, cfg.confetti, rng);
              s.image = std::move(img);
              s.gt_map = std::move(mask);
              s.label = 1;
            }
          }
        }
        s.image = augment(s.image, post, rng);
        if (cfg.loss == LossMode::kFcddPixel) {
          if (s.gt_map)
            gt.push_back(*s.gt_map);
          else
            gt.emplace_back(static_cast<size_t>(in_h * in_w),
                            s.label == 1 ? 1.f : 0.f);
        }
        batch.push_back(std::move(s));
      }

      std::vector<int> labels;
      for (const auto& s : batch) labels.push_back(s.label);
      Tensor<float> x = to_tensor(batch);
      Tensor<float> loss;
      try {
        Tensor<float> phi = model.forward(x, Mode::kTrain);
        switch (cfg.loss) {
          case LossMode::kHsc: {
            const long b = phi.dim(0);
            loss = hsc_loss(detail::reshape_to_rows(phi, b, phi.numel() / b), labels);
            break;
          }
          case LossMode::kFcdd:
            loss = fcdd_loss(heatmap_A(phi), labels);
            break;
          case LossMode::kFcddPixel: {
            Tensor<float> A = heatmap_A(phi);
            Tensor<float> full = upsample(A, rf, cfg.upsample_sigma, in_h, in_w);
            std::vector<float> gt_flat;
            for (const auto& g : gt) gt_flat.insert(gt_flat.end(), g.begin(), g.end());
            loss = pixel_loss(full, gt_flat, full.dim(0), in_h, in_w);
            break;
          }
        }
        if (!std::isfinite(static_cast<double>(loss.item())))
          throw NumericError("training loss is non-finite");
        model.zero_grad();
        backward(loss);
      } catch (const NumericError&) {
        if (!cfg.out_dir.empty())
          save_model(model, (std::filesystem::path(cfg.out_dir) / "diagnostic.ckpt").string());
        throw;
      }
      if (cfg.optimizer.family == "adam")
        adam_step(params, opt_state, static_cast<float>(lr),
                  static_cast<float>(cfg.optimizer.beta1),
                  static_cast<float>(cfg.optimizer.beta2),
                  static_cast<float>(cfg.optimizer.weight_decay),
                  !cfg.optimizer.decoupled_weight_decay);
      else
        sgd_nesterov_step(params, opt_state, static_cast<float>(lr),
                          static_cast<float>(cfg.optimizer.momentum),
                          static_cast<float>(cfg.optimizer.weight_decay));
      loss_sum += loss.item();
      ++batches;
    }
    log.entries.push_back({epoch, batches > 0 ? loss_sum / batches : 0.0, lr});
    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0) {
      save_model(model, (std::filesystem::path(cfg.out_dir) /
                         ("epoch_" + std::to_string(epoch + 1) + ".ckpt"))
                            .string());
    }
  }
  if (!cfg.out_dir.empty()) {
    save_model(model, (std::filesystem::path(cfg.out_dir) / "model.ckpt").string());
    log.to_csv((std::filesystem::path(cfg.out_dir) / "train_log.csv").string());
  }
  return log;
}

}  // namespace fcdd
