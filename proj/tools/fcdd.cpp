// fcdd command-line tool: train, eval, heatmap, rf-info, synth.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fcdd/config.hpp"
#include "fcdd/data.hpp"
#include "fcdd/eval.hpp"
#include "fcdd/model_io.hpp"
#include "fcdd/train.hpp"

namespace fs = std::filesystem;
using namespace fcdd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::uint64_t env_seed_override(std::uint64_t seed) {
  if (const char* env = std::getenv("FCDD_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("FCDD_SEED is not an unsigned integer");
    }
  }
  return seed;
}

ArchitectureSpec resolve_arch(const std::string& arch_file,
                              const std::string& preset_name, long first_kernel) {
  if (!arch_file.empty() && !preset_name.empty())
    throw ConfigError("give either an architecture file or a preset, not both");
  if (!arch_file.empty()) return load_architecture(arch_file);
  if (!preset_name.empty()) return preset(preset_name, first_kernel);
  throw ConfigError("an architecture file or preset is required");
}

const std::set<std::string> kTrainKeys = {
    "arch", "preset", "preset.first_kernel", "dataset.root", "oe.root", "loss",
    "anomaly.source", "anomaly.prob", "anomaly.repeat", "confetti.min_blobs",
    "confetti.max_blobs", "confetti.min_side", "confetti.max_side",
    "confetti.color_mode", "optimizer", "lr", "momentum", "beta1", "beta2",
    "weight_decay", "decoupled_weight_decay", "schedule", "gamma", "milestones",
    "epochs", "batch", "seed", "out", "checkpoint_every", "upsample.sigma",
    "augment.jitter", "augment.crop_pad", "augment.crop_size", "augment.hflip",
    "augment.noise_sigma", "augment.normalize"};

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& overrides) {
  const RunConfig cfg = RunConfig::from_file(config_path, kTrainKeys, overrides);

  const std::string data_root = cfg.get("dataset.root");
  if (!fs::exists(fs::path(data_root) / "index.csv"))
    throw ConfigError("dataset.root does not contain an index.csv: " + data_root);
  const std::string out_dir = cfg.get("out");

  ArchitectureSpec arch =
      resolve_arch(cfg.get_or("arch", ""), cfg.get_or("preset", ""),
                   cfg.get_long("preset.first_kernel", 0));

  TrainConfig tc;
  tc.epochs = cfg.get_long("epochs", 10);
  tc.batch_size = cfg.get_long("batch", 32);
  tc.loss = parse_loss_mode(cfg.get_or("loss", "fcdd"));
  const std::string src = cfg.get_or("anomaly.source", "none");
  if (src == "none")
    tc.anomaly_source = AnomalySource::kNone;
  else if (src == "oe")
    tc.anomaly_source = AnomalySource::kOutlierExposure;
  else if (src == "confetti")
    tc.anomaly_source = AnomalySource::kConfetti;
  else
    throw ConfigError("anomaly.source must be none, oe or confetti");
  tc.anomaly_prob = cfg.get_double("anomaly.prob", 0.5);
  tc.anomaly_repeat = cfg.get_long("anomaly.repeat", 1);
  tc.confetti.min_blobs = cfg.get_long("confetti.min_blobs", tc.confetti.min_blobs);
  tc.confetti.max_blobs = cfg.get_long("confetti.max_blobs", tc.confetti.max_blobs);
  tc.confetti.min_side = cfg.get_long("confetti.min_side", tc.confetti.min_side);
  tc.confetti.max_side = cfg.get_long("confetti.max_side", tc.confetti.max_side);
  tc.confetti.color_mode = cfg.get_or("confetti.color_mode", tc.confetti.color_mode);
  tc.seed = env_seed_override(static_cast<std::uint64_t>(cfg.get_long("seed", 0)));
  tc.checkpoint_every = cfg.get_long("checkpoint_every", 0);
  tc.out_dir = out_dir;
  tc.upsample_sigma = static_cast<float>(cfg.get_double("upsample.sigma", 1.2));
  tc.optimizer.family = cfg.get_or("optimizer", "sgd_nesterov");
  tc.optimizer.lr = cfg.get_double("lr", 1e-3);
  tc.optimizer.momentum = cfg.get_double("momentum", 0.9);
  tc.optimizer.beta1 = cfg.get_double("beta1", 0.9);
  tc.optimizer.beta2 = cfg.get_double("beta2", 0.999);
  tc.optimizer.weight_decay = cfg.get_double("weight_decay", 0.0);
  tc.optimizer.decoupled_weight_decay = cfg.get_bool("decoupled_weight_decay", true);
  tc.optimizer.schedule = cfg.get_or("schedule", "none");
  tc.optimizer.gamma = cfg.get_double("gamma", 0.98);
  if (cfg.has("milestones")) {
    std::istringstream ms(cfg.get("milestones"));
    for (std::string tok; std::getline(ms, tok, ',');)
      tc.optimizer.milestones.push_back(std::stol(tok));
  }
  tc.validate();

  const Dataset train_data = load_dataset(data_root);
  Dataset oe_data;
  if (cfg.has("oe.root")) oe_data = load_dataset(cfg.get("oe.root"));

  AugmentPolicy aug;
  aug.jitter = cfg.get_double("augment.jitter", 0.0);
  aug.crop_pad = cfg.get_long("augment.crop_pad", 0);
  aug.crop_size = cfg.get_long("augment.crop_size", 0);
  aug.hflip_prob = cfg.get_double("augment.hflip", 0.0);
  aug.noise_sigma = cfg.get_double("augment.noise_sigma", 0.0);
  if (cfg.get_bool("augment.normalize", false)) {
    aug.normalize = true;
    dataset_stats(train_data, aug.mean, aug.stddev);
  }

  FCNModel<float> model = FCNModel<float>::build(arch, tc.seed);
  train(model, train_data, oe_data, tc, aug);
  // The architecture travels as a sibling text file of the checkpoint.
  std::ofstream arch_out(fs::path(out_dir) / "model.arch");
  arch_out << format_architecture(arch);
  std::cout << "checkpoint=" << (fs::path(out_dir) / "model.ckpt").string() << "\n";
  return kExitOk;
}

struct EvalResult {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::vector<float>> heatmaps;  // full-res A'
  std::vector<std::vector<float>> gt_maps;
};

EvalResult score_dataset(FCNModel<float>& model, const Dataset& ds,
                         float sigma) {
  const RFInfo rf = receptive_field(model.spec());
  const long h = model.spec().in_height, w = model.spec().in_width;
  EvalResult res;
  for (const Sample& s : ds.samples) {
    Tensor<float> x = to_tensor({s});
    Tensor<float> A = heatmap_A(model.forward(x, Mode::kEval));
    res.scores.push_back(anomaly_score(A));
    res.labels.push_back(s.label);
    Tensor<float> full = upsample(A, rf, sigma, h, w);
    res.heatmaps.push_back(full.values());
    if (s.gt_map) res.gt_maps.push_back(*s.gt_map);
  }
  return res;
}

int cmd_eval(const std::string& ckpt_path, const std::string& arch_file,
             const std::string& preset_name, const std::string& data_root,
             double sigma, const std::string& pixel_mode,
             const std::string& scores_csv) {
  ArchitectureSpec arch = resolve_arch(arch_file, preset_name, 0);
  FCNModel<float> model = load_model<float>(arch, ckpt_path);
  const Dataset test = load_dataset(data_root);
  if (test.empty()) throw ConfigError("empty test dataset: " + data_root);

  EvalResult res = score_dataset(model, test, static_cast<float>(sigma));
  const long n_anom = std::count(res.labels.begin(), res.labels.end(), 1);
  if (n_anom == 0 || n_anom == static_cast<long>(res.labels.size()))
    throw ConfigError("test set must contain both nominal and anomalous samples");

  std::cout << "sample_auc=" << roc_auc({res.scores, res.labels}) << "\n";
  if (!res.gt_maps.empty()) {
    // Pixel AUC pools all samples that come with ground-truth masks, plus the
    // nominal samples (all-zero masks).
    std::vector<std::vector<float>> maps, gts;
    size_t gt_i = 0;
    for (size_t i = 0; i < test.samples.size(); ++i) {
      if (test.samples[i].gt_map) {
        maps.push_back(res.heatmaps[i]);
        gts.push_back(res.gt_maps[gt_i++]);
      } else if (test.samples[i].label == 0) {
        maps.push_back(res.heatmaps[i]);
        gts.emplace_back(res.heatmaps[i].size(), 0.f);
      }
    }
    const double pauc = pixel_mode == "mean" ? pixel_auc_per_sample_mean(maps, gts)
                                             : pixel_auc(maps, gts);
    std::cout << "pixel_auc=" << pauc << "\n";
  }
  if (!scores_csv.empty()) {
    std::ofstream out(scores_csv);
    out << "index,label,score\n";
    for (size_t i = 0; i < res.scores.size(); ++i)
      out << i << "," << res.labels[i] << "," << res.scores[i] << "\n";
  }
  return kExitOk;
}

int cmd_heatmap(const std::string& ckpt_path, const std::string& arch_file,
                const std::string& preset_name, const std::string& data_root,
                const std::string& out_dir, double eta, double sigma,
                const std::string& ref_mode) {
  if (ref_mode != "self" && ref_mode != "set")
    throw ConfigError("ref mode must be self or set");
  ArchitectureSpec arch = resolve_arch(arch_file, preset_name, 0);
  FCNModel<float> model = load_model<float>(arch, ckpt_path);
  const Dataset inputs = load_dataset(data_root);
  if (inputs.empty()) throw ConfigError("no inputs to render: " + data_root);
  fs::create_directories(out_dir);

  EvalResult res = score_dataset(model, inputs, static_cast<float>(sigma));
  const long h = model.spec().in_height, w = model.spec().in_width;

  std::vector<std::vector<float>> normalized;
  if (ref_mode == "set") {
    normalized = normalize_heatmaps(res.heatmaps, eta, res.heatmaps);
  } else {
    for (const auto& m : res.heatmaps) {
      auto one = normalize_heatmaps({m}, eta, {m});
      normalized.push_back(std::move(one[0]));
    }
  }
  for (size_t i = 0; i < normalized.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "heatmap_%05zu.ppm", i);
    render(normalized[i], h, w, (fs::path(out_dir) / name).string());
  }
  // Raw full-resolution scores: u32 h, w, count header then f32 grids.
  std::ofstream raw(fs::path(out_dir) / "heatmaps.bin", std::ios::binary);
  if (!raw) throw LoadError("cannot write raw heatmap dump");
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(h),
                                   static_cast<std::uint32_t>(w),
                                   static_cast<std::uint32_t>(res.heatmaps.size())};
  raw.write(reinterpret_cast<const char*>(header), sizeof(header));
  for (const auto& m : res.heatmaps)
    raw.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(float)));
  return kExitOk;
}

int cmd_rfinfo(const std::string& arch_file, const std::string& preset_name,
               long first_kernel) {
  ArchitectureSpec arch = resolve_arch(arch_file, preset_name, first_kernel);
  const RFInfo rf = receptive_field(arch);
  const auto [u, v] = arch.output_extent();
  std::cout << "rf_size=" << rf.rf_size << " stride=" << rf.cumulative_stride
            << " center_offset=" << rf.center_offset << " output=" << u << "x"
            << v << "\n";
  return kExitOk;
}

const std::set<std::string> kSynthKeys = {
    "scenario", "size", "train_count", "test_nominal", "test_anomalous",
    "seed", "correlation", "labeled_anomalies", "confetti.min_blobs",
    "confetti.max_blobs", "confetti.min_side", "confetti.max_side",
    "confetti.color_mode", "out"};

int cmd_synth(const std::string& config_path,
              const std::vector<std::string>& overrides) {
  const RunConfig cfg =
      config_path.empty()
          ? RunConfig::from_overrides(kSynthKeys, overrides)
          : RunConfig::from_file(config_path, kSynthKeys, overrides);
  ScenarioConfig sc;
  sc.scenario = cfg.get_or("scenario", "texture");
  sc.image_size = cfg.get_long("size", 64);
  sc.train_count = cfg.get_long("train_count", 400);
  sc.test_nominal = cfg.get_long("test_nominal", 100);
  sc.test_anomalous = cfg.get_long("test_anomalous", 100);
  sc.seed = env_seed_override(static_cast<std::uint64_t>(cfg.get_long("seed", 0)));
  sc.watermark_correlation = cfg.get_double("correlation", 1.0);
  sc.labeled_anomalies = cfg.get_long("labeled_anomalies", 0);
  sc.confetti_cfg.min_blobs = cfg.get_long("confetti.min_blobs", sc.confetti_cfg.min_blobs);
  sc.confetti_cfg.max_blobs = cfg.get_long("confetti.max_blobs", sc.confetti_cfg.max_blobs);
  sc.confetti_cfg.min_side = cfg.get_long("confetti.min_side", sc.confetti_cfg.min_side);
  sc.confetti_cfg.max_side = cfg.get_long("confetti.max_side", sc.confetti_cfg.max_side);
  sc.confetti_cfg.color_mode = cfg.get_or("confetti.color_mode", sc.confetti_cfg.color_mode);
  const std::string out_dir = cfg.get("out");

  const ScenarioData data = synth_scenario(sc);
  save_dataset((fs::path(out_dir) / "train").string(), data.train);
  save_dataset((fs::path(out_dir) / "test").string(), data.test);
  std::cout << "train=" << data.train.size() << " test=" << data.test.size()
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fully convolutional one-class anomaly detection"};
  app.require_subcommand(1);

  std::string config_path, ckpt, arch_file, preset_name, data_root, out_dir;
  std::string pixel_mode = "pooled", ref_mode = "self", scores_csv;
  std::vector<std::string> overrides;
  double eta = 1.0, sigma = 1.2;
  long first_kernel = 0;

  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "run configuration file")->required();
  train_cmd->add_option("--set", overrides, "key=value overrides");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--arch", arch_file, "architecture file");
  eval_cmd->add_option("--preset", preset_name, "architecture preset");
  eval_cmd->add_option("--data", data_root)->required();
  eval_cmd->add_option("--sigma", sigma, "upsampling kernel sigma");
  eval_cmd->add_option("--pixel-mode", pixel_mode, "pooled|mean");
  eval_cmd->add_option("--scores-csv", scores_csv, "per-sample score CSV path");

  auto* heat_cmd = app.add_subcommand("heatmap", "render full-resolution heatmaps");
  heat_cmd->add_option("--checkpoint", ckpt)->required();
  heat_cmd->add_option("--arch", arch_file);
  heat_cmd->add_option("--preset", preset_name);
  heat_cmd->add_option("--data", data_root)->required();
  heat_cmd->add_option("--out", out_dir)->required();
  heat_cmd->add_option("--eta", eta, "normalization percentile in (0,1]");
  heat_cmd->add_option("--sigma", sigma, "upsampling kernel sigma");
  heat_cmd->add_option("--ref", ref_mode, "self|set normalization reference");

  auto* rf_cmd = app.add_subcommand("rf-info", "print receptive-field geometry");
  rf_cmd->add_option("--arch", arch_file);
  rf_cmd->add_option("--preset", preset_name);
  rf_cmd->add_option("--first-kernel", first_kernel, "first conv kernel override");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic benchmark");
  synth_cmd->add_option("--config", config_path);
  synth_cmd->add_option("--set", overrides, "key=value overrides");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, overrides);
    if (eval_cmd->parsed())
      return cmd_eval(ckpt, arch_file, preset_name, data_root, sigma, pixel_mode,
                      scores_csv);
    if (heat_cmd->parsed())
      return cmd_heatmap(ckpt, arch_file, preset_name, data_root, out_dir, eta,
                         sigma, ref_mode);
    if (rf_cmd->parsed()) return cmd_rfinfo(arch_file, preset_name, first_kernel);
    if (synth_cmd->parsed()) return cmd_synth(config_path, overrides);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
