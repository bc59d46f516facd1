#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fcdd/errors.hpp"
#include "fcdd/rng.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

// 8-bit image buffer used at the file boundary; channels is 1 (PGM) or 3 (PPM).
struct ImageU8 {
  long channels = 0;
  long height = 0;
  long width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved rows, RGB for 3 channels
};

ImageU8 read_pnm(const std::string& path);
void write_pnm(const std::string& path, const ImageU8& img);

// Planar float image with values in [0,1] before normalization.
struct Image {
  long channels = 0;
  long height = 0;
  long width = 0;
  std::vector<float> data;  // [c][h][w]

  float& at(long c, long y, long x) { return data[(c * height + y) * width + x]; }
  float at(long c, long y, long x) const {
    return data[(c * height + y) * width + x];
  }
  static Image zeros(long c, long h, long w) {
    return Image{c, h, w, std::vector<float>(static_cast<size_t>(c * h * w), 0.f)};
  }
};

Image to_float(const ImageU8& img);
ImageU8 to_u8(const Image& img);

struct Sample {
  Image image;
  int label = 0;                       // 0 nominal, 1 anomalous
  std::optional<std::vector<float>> gt_map;  // binary h*w, anomalous support
};

struct Dataset {
  std::vector<Sample> samples;
  bool empty() const { return samples.empty(); }
  size_t size() const { return samples.size(); }
};

// root/index.csv with columns file,label,mask_file(optional); images as
// binary PPM (P6) or PGM (P5), masks as PGM with 0/255.
Dataset load_dataset(const std::string& root);
void save_dataset(const std::string& root, const Dataset& ds);

// --- synthetic anomalies -------------------------------------------------

struct ConfettiConfig {
  long min_blobs = 1;
  long max_blobs = 4;
  long min_side = 4;
  long max_side = 10;
  // "rgb": uniform random color per blob; "shift": additive intensity shift.
  std::string color_mode = "rgb";

  void validate(long h, long w) const;
};

// Pastes k ~ U[min,max] axis-aligned square blobs; returns the modified image
// and the binary union mask of the pasted supports.
std::pair<Image, std::vector<float>> confetti(const Image& image,
                                              const ConfettiConfig& cfg,
                                              Rng& rng);

// Replaces each nominal sample independently with probability p by a
// uniformly drawn OE sample labeled anomalous. Anomalous inputs and the
// batch size are never altered.
std::vector<Sample> oe_mix(const std::vector<Sample>& batch,
                           const Dataset& oe_source, double p, Rng& rng);

// --- procedural benchmarks ----------------------------------------------

struct ScenarioConfig {
  std::string scenario = "texture";  // "texture" | "watermark"
  long image_size = 64;
  long train_count = 400;
  long test_nominal = 100;
  long test_anomalous = 100;
  std::uint64_t seed = 0;
  // texture scenario
  ConfettiConfig confetti_cfg{1, 3, 5, 9, "shift"};
  // watermark scenario: fraction of anomalous train images carrying the glyph
  double watermark_correlation = 1.0;
  // number of labeled anomalous train samples (with gt maps) for the
  // semi-supervised texture protocol; 0 keeps training purely nominal
  long labeled_anomalies = 0;

  void validate() const;
};

struct ScenarioData {
  Dataset train;
  Dataset test;
};

ScenarioData synth_scenario(const ScenarioConfig& cfg);

// --- augmentation --------------------------------------------------------

struct AugmentPolicy {
  double jitter = 0.0;        // per-channel affine perturbation strength
  long crop_pad = 0;          // zero-padding before the random crop
  long crop_size = 0;         // 0 disables cropping
  double hflip_prob = 0.0;
  double noise_sigma = 0.0;   // additive Gaussian noise
  bool normalize = false;
  std::vector<float> mean, stddev;  // per-channel, from the nominal train split
};

Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng);

// Per-channel mean/std over the nominal samples of a dataset.
void dataset_stats(const Dataset& ds, std::vector<float>& mean,
                   std::vector<float>& stddev);

// --- tensor bridging -----------------------------------------------------

Tensor<float> to_tensor(const std::vector<Sample>& batch);

}  // namespace fcdd
