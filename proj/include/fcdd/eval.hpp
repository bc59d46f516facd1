#pragma once

#include <string>
#include <vector>

#include "fcdd/errors.hpp"
#include "fcdd/loss.hpp"
#include "fcdd/model.hpp"
#include "fcdd/upsample.hpp"

namespace fcdd {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // binary
};

// Mann-Whitney AUC: P(score_anom > score_nom) + 0.5 * P(tie).
double roc_auc(const ScoredSet& s);

// Linear-interpolation percentile on sorted values (index (n-1)*eta).
double percentile(std::vector<double> values, double eta);

// ROC-AUC over the pooled pixels of all heatmap/mask pairs.
double pixel_auc(const std::vector<std::vector<float>>& heatmaps,
                 const std::vector<std::vector<float>>& gt_maps);

// Per-sample AUC averaged over samples whose masks contain both classes.
double pixel_auc_per_sample_mean(const std::vector<std::vector<float>>& heatmaps,
                                 const std::vector<std::vector<float>>& gt_maps);

// Percentile contrast normalization into [0,1]:
// I_j = min{(A'_j - min(ref)) / q_eta({ref - min(ref)}), 1}, clamped.
// A degenerate reference (q_eta ~ 0) maps everything to zero.
std::vector<std::vector<float>> normalize_heatmaps(
    const std::vector<std::vector<float>>& maps, double eta,
    const std::vector<std::vector<float>>& ref);

// Diverging colormap PPM: 0 -> dark blue, 0.5 -> white, 1 -> red.
void render(const std::vector<float>& map, long h, long w,
            const std::string& out_path);

// |d anomaly_score / d x|, per-pixel channel maximum, blurred. The gradient
// baseline heatmap for non-FCN-restricted comparisons.
template <class T>
std::vector<T> gradient_heatmap(FCNModel<T>& model, const Tensor<T>& x,
                                T blur_sigma) {
  if (x.rank() != 4 || x.dim(0) != 1)
    throw UsageError("gradient_heatmap expects a single [1,c,h,w] input");
  Tensor<T> input = Tensor<T>::from(x.shape(), x.values(), true);
  Tensor<T> phi = model.forward(input, Mode::kEval);
  Tensor<T> score = sum_all(heatmap_A(phi));
  backward(score);
  const long c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> map(static_cast<size_t>(h * w), T(0));
  for (long ic = 0; ic < c; ++ic)
    for (long i = 0; i < h * w; ++i) {
      const T g = std::abs(input.grad()[ic * h * w + i]);
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("gradient_heatmap: non-finite gradient");
      map[i] = std::max(map[i], g);
    }
  if (blur_sigma > T(0)) map = blur(map, h, w, blur_sigma);
  return map;
}

}  // namespace fcdd
