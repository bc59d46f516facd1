#include "fcdd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fcdd {

double roc_auc(const ScoredSet& s) {
  if (s.scores.size() != s.labels.size() || s.scores.empty())
    throw UsageError("roc_auc: malformed scored set");
  const long n = static_cast<long>(s.scores.size());
  long n_pos = std::count(s.labels.begin(), s.labels.end(), 1);
  long n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw UsageError("roc_auc: both classes must be present");
  // Rank-sum with average ranks on ties; equivalent to pair counting with
  // half credit for ties.
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](long a, long b) { return s.scores[a] < s.scores[b]; });
  double rank_sum_pos = 0;
  long i = 0;
  while (i < n) {
    long j = i;
    while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
    const double avg_rank = (i + j + 1) / 2.0;  // 1-based average rank
    for (long t = i; t < j; ++t)
      if (s.labels[order[t]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) /
         (static_cast<double>(n_pos) * n_neg);
}

double percentile(std::vector<double> values, double eta) {
  if (values.empty()) throw UsageError("percentile: empty input");
  if (!(eta > 0.0 && eta <= 1.0))
    throw UsageError("percentile: eta must be in (0,1]");
  std::sort(values.begin(), values.end());
  const double pos = (values.size() - 1) * eta;
  const size_t lo = static_cast<size_t>(pos);
  if (lo + 1 >= values.size()) return values.back();
  const double t = pos - lo;
  return values[lo] * (1.0 - t) + values[lo + 1] * t;
}

namespace {

ScoredSet pool_pixels(const std::vector<std::vector<float>>& heatmaps,
                      const std::vector<std::vector<float>>& gt_maps) {
  if (heatmaps.size() != gt_maps.size() || heatmaps.empty())
    throw UsageError("pixel_auc: heatmap/mask count mismatch");
  ScoredSet set;
  for (size_t i = 0; i < heatmaps.size(); ++i) {
    if (heatmaps[i].size() != gt_maps[i].size())
      throw UsageError("pixel_auc: heatmap/mask extent mismatch at sample " +
                       std::to_string(i));
    for (size_t j = 0; j < heatmaps[i].size(); ++j) {
      set.scores.push_back(heatmaps[i][j]);
      set.labels.push_back(gt_maps[i][j] != 0.f ? 1 : 0);
    }
  }
  return set;
}

}  // namespace

double pixel_auc(const std::vector<std::vector<float>>& heatmaps,
                 const std::vector<std::vector<float>>& gt_maps) {
  return roc_auc(pool_pixels(heatmaps, gt_maps));
}

double pixel_auc_per_sample_mean(const std::vector<std::vector<float>>& heatmaps,
                                 const std::vector<std::vector<float>>& gt_maps) {
  if (heatmaps.size() != gt_maps.size() || heatmaps.empty())
    throw UsageError("pixel_auc: heatmap/mask count mismatch");
  double total = 0;
  long counted = 0;
  for (size_t i = 0; i < heatmaps.size(); ++i) {
    ScoredSet set;
    for (size_t j = 0; j < heatmaps[i].size(); ++j) {
      set.scores.push_back(heatmaps[i][j]);
      set.labels.push_back(gt_maps[i][j] != 0.f ? 1 : 0);
    }
    const long pos = std::count(set.labels.begin(), set.labels.end(), 1);
    if (pos == 0 || pos == static_cast<long>(set.labels.size())) continue;
    total += roc_auc(set);
    ++counted;
  }
  if (counted == 0)
    throw UsageError("pixel_auc: no sample contains both pixel classes");
  return total / counted;
}

std::vector<std::vector<float>> normalize_heatmaps(
    const std::vector<std::vector<float>>& maps, double eta,
    const std::vector<std::vector<float>>& ref) {
  if (ref.empty()) throw UsageError("normalize_heatmaps: empty reference set");
  double ref_min = std::numeric_limits<double>::infinity();
  for (const auto& m : ref)
    for (float v : m) ref_min = std::min(ref_min, static_cast<double>(v));
  std::vector<double> shifted;
  for (const auto& m : ref)
    for (float v : m) shifted.push_back(v - ref_min);
  const double denom = percentile(std::move(shifted), eta);
  std::vector<std::vector<float>> out;
  out.reserve(maps.size());
  for (const auto& m : maps) {
    std::vector<float> norm(m.size());
    if (denom <= 1e-12) {
      // Constant reference set: no contrast to normalize against.
      std::fill(norm.begin(), norm.end(), 0.f);
    } else {
      for (size_t j = 0; j < m.size(); ++j)
        norm[j] = static_cast<float>(
            std::clamp((m[j] - ref_min) / denom, 0.0, 1.0));
    }
    out.push_back(std::move(norm));
  }
  return out;
}

void render(const std::vector<float>& map, long h, long w,
            const std::string& out_path) {
  if (static_cast<long>(map.size()) != h * w)
    throw UsageError("render: map extent mismatch");
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw LoadError("cannot write rendered heatmap: " + out_path);
  out << "P6\n" << w << " " << h << "\n255\n";
  // Piecewise-linear: 0 -> (0,0,128), 0.5 -> (255,255,255), 1 -> (200,0,0).
  const double lo[3] = {0, 0, 128}, mid[3] = {255, 255, 255}, hi[3] = {200, 0, 0};
  std::vector<std::uint8_t> row(static_cast<size_t>(w * 3));
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const double v = std::clamp(static_cast<double>(map[y * w + x]), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double col = v <= 0.5 ? lo[c] + (mid[c] - lo[c]) * (v / 0.5)
                                    : mid[c] + (hi[c] - mid[c]) * ((v - 0.5) / 0.5);
        row[x * 3 + c] = static_cast<std::uint8_t>(std::lround(col));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw LoadError("write failure on rendered heatmap: " + out_path);
}

}  // namespace fcdd
