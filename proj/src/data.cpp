#include "fcdd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace fcdd {

// --- PNM ----------------------------------------------------------------

namespace {

int pnm_next_token(std::istream& in, std::string& token) {
  token.clear();
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {  // comment to end of line
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) return 1;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token.empty() ? 0 : 1;
}

long pnm_int(std::istream& in, const std::string& path) {
  std::string tok;
  if (!pnm_next_token(in, tok)) throw LoadError("truncated PNM header: " + path);
  try {
    return std::stol(tok);
  } catch (const std::exception&) {
    throw LoadError("bad PNM header token '" + tok + "': " + path);
  }
}

}  // namespace

ImageU8 read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image: " + path);
  std::string magic;
  if (!pnm_next_token(in, magic) || (magic != "P5" && magic != "P6"))
    throw LoadError("unsupported PNM magic in " + path);
  ImageU8 img;
  img.channels = magic == "P6" ? 3 : 1;
  img.width = pnm_int(in, path);
  img.height = pnm_int(in, path);
  const long maxval = pnm_int(in, path);
  if (img.width < 1 || img.height < 1)
    throw LoadError("bad PNM dimensions in " + path);
  if (maxval != 255) throw LoadError("only 8-bit PNM supported: " + path);
  const size_t n = static_cast<size_t>(img.channels * img.height * img.width);
  img.pixels.resize(n);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    throw LoadError("truncated PNM pixel data: " + path);
  return img;
}

void write_pnm(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ConfigError("write_pnm: channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write image: " + path);
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw LoadError("write failure on image: " + path);
}

Image to_float(const ImageU8& img) {
  Image out = Image::zeros(img.channels, img.height, img.width);
  // interleaved u8 -> planar float in [0,1]
  for (long y = 0; y < img.height; ++y)
    for (long x = 0; x < img.width; ++x)
      for (long c = 0; c < img.channels; ++c)
        out.at(c, y, x) =
            img.pixels[(y * img.width + x) * img.channels + c] / 255.f;
  return out;
}

ImageU8 to_u8(const Image& img) {
  ImageU8 out;
  out.channels = img.channels;
  out.height = img.height;
  out.width = img.width;
  out.pixels.resize(static_cast<size_t>(img.channels * img.height * img.width));
  for (long y = 0; y < img.height; ++y)
    for (long x = 0; x < img.width; ++x)
      for (long c = 0; c < img.channels; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
        out.pixels[(y * img.width + x) * img.channels + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.f));
      }
  return out;
}

// --- dataset I/O ---------------------------------------------------------

Dataset load_dataset(const std::string& root) {
  const fs::path index = fs::path(root) / "index.csv";
  std::ifstream in(index);
  if (!in) throw LoadError("missing dataset index: " + index.string());
  Dataset ds;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("file,", 0) == 0) continue;  // header
    std::istringstream ls(line);
    std::string file, label_str, mask_file;
    std::getline(ls, file, ',');
    std::getline(ls, label_str, ',');
    std::getline(ls, mask_file, ',');
    if (file.empty() || label_str.empty())
      throw LoadError("malformed index row " + std::to_string(line_no) + " in " +
                      index.string());
    Sample s;
    if (label_str != "0" && label_str != "1")
      throw LoadError("bad label '" + label_str + "' at index row " +
                      std::to_string(line_no) + " in " + index.string());
    s.label = label_str == "1" ? 1 : 0;
    const fs::path img_path = fs::path(root) / file;
    if (!fs::exists(img_path))
      throw LoadError("index references missing file: " + img_path.string());
    s.image = to_float(read_pnm(img_path.string()));
    if (!mask_file.empty()) {
      const fs::path mask_path = fs::path(root) / mask_file;
      if (!fs::exists(mask_path))
        throw LoadError("index references missing mask: " + mask_path.string());
      const ImageU8 mask = read_pnm(mask_path.string());
      if (mask.channels != 1 || mask.height != s.image.height ||
          mask.width != s.image.width)
        throw LoadError("mask shape mismatch for " + mask_path.string());
      std::vector<float> gt(mask.pixels.size());
      for (size_t i = 0; i < mask.pixels.size(); ++i)
        gt[i] = mask.pixels[i] >= 128 ? 1.f : 0.f;
      if (s.label == 0)
        for (float v : gt)
          if (v != 0.f)
            throw LoadError("nominal sample has nonzero mask: " +
                            mask_path.string());
      s.gt_map = std::move(gt);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const std::string& root, const Dataset& ds) {
  fs::create_directories(root);
  std::ofstream index(fs::path(root) / "index.csv");
  if (!index) throw LoadError("cannot write dataset index under " + root);
  index << "file,label,mask_file\n";
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    char name[64];
    std::snprintf(name, sizeof(name), "img_%05zu.%s", i,
                  s.image.channels == 3 ? "ppm" : "pgm");
    write_pnm((fs::path(root) / name).string(), to_u8(s.image));
    index << name << "," << s.label << ",";
    if (s.gt_map) {
      char mname[64];
      std::snprintf(mname, sizeof(mname), "mask_%05zu.pgm", i);
      ImageU8 mask;
      mask.channels = 1;
      mask.height = s.image.height;
      mask.width = s.image.width;
      mask.pixels.resize(s.gt_map->size());
      for (size_t j = 0; j < s.gt_map->size(); ++j)
        mask.pixels[j] = (*s.gt_map)[j] != 0.f ? 255 : 0;
      write_pnm((fs::path(root) / mname).string(), mask);
      index << mname;
    }
    index << "\n";
  }
}

// --- confetti noise ------------------------------------------------------

void ConfettiConfig::validate(long h, long w) const {
  if (min_blobs < 1 || max_blobs < min_blobs)
    throw ConfigError("confetti: invalid blob count range");
  if (min_side < 1 || max_side < min_side)
    throw ConfigError("confetti: invalid blob side range");
  if (max_side > std::min(h, w) / 2)
    throw ConfigError("confetti: blob side exceeds half the image extent");
  if (color_mode != "rgb" && color_mode != "shift")
    throw ConfigError("confetti: unknown color mode '" + color_mode + "'");
}

std::pair<Image, std::vector<float>> confetti(const Image& image,
                                              const ConfettiConfig& cfg,
                                              Rng& rng) {
  cfg.validate(image.height, image.width);
  Image out = image;
  std::vector<float> mask(static_cast<size_t>(image.height * image.width), 0.f);
  std::uniform_int_distribution<long> blob_count(cfg.min_blobs, cfg.max_blobs);
  std::uniform_int_distribution<long> side_dist(cfg.min_side, cfg.max_side);
  const long k = blob_count(rng);
  for (long blob = 0; blob < k; ++blob) {
    const long side = side_dist(rng);
    std::uniform_int_distribution<long> ypos(0, image.height - side);
    std::uniform_int_distribution<long> xpos(0, image.width - side);
    const long y0 = ypos(rng);
    const long x0 = xpos(rng);
    std::vector<float> color(image.channels);
    float shift = 0.f;
    if (cfg.color_mode == "rgb") {
      std::uniform_real_distribution<float> cdist(0.f, 1.f);
      for (auto& c : color) c = cdist(rng);
    } else {
      std::uniform_real_distribution<float> mag(0.3f, 0.7f);
      shift = mag(rng) * (rng() % 2 == 0 ? 1.f : -1.f);
    }
    for (long y = y0; y < y0 + side; ++y)
      for (long x = x0; x < x0 + side; ++x) {
        mask[y * image.width + x] = 1.f;
        for (long c = 0; c < image.channels; ++c) {
          const float v = cfg.color_mode == "rgb" ? color[c]
                                                  : image.at(c, y, x) + shift;
          out.at(c, y, x) = std::clamp(v, 0.f, 1.f);
        }
      }
  }
  return {std::move(out), std::move(mask)};
}

// --- OE mixing -----------------------------------------------------------

std::vector<Sample> oe_mix(const std::vector<Sample>& batch,
                           const Dataset& oe_source, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw ConfigError("oe_mix: p must be in [0,1]");
  if (p > 0.0 && oe_source.empty())
    throw ConfigError("oe_mix: nonzero probability with empty OE source");
  std::vector<Sample> out = batch;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (Sample& s : out) {
    if (s.label != 0) continue;
    if (coin(rng) < p) {
      std::uniform_int_distribution<size_t> pick(0, oe_source.size() - 1);
      s = oe_source.samples[pick(rng)];
      s.label = 1;
    }
  }
  return out;
}

// --- procedural scenarios ------------------------------------------------

namespace {

// Coarse-grid value noise, bilinearly upsampled; smooth backdrop texture.
std::vector<float> value_noise(long h, long w, long grid, float amp, Rng& rng) {
  std::uniform_real_distribution<float> dist(-amp, amp);
  const long gh = grid + 2, gw = grid + 2;
  std::vector<float> coarse(static_cast<size_t>(gh * gw));
  for (auto& v : coarse) v = dist(rng);
  std::vector<float> out(static_cast<size_t>(h * w));
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const float fy = static_cast<float>(y) * grid / h;
      const float fx = static_cast<float>(x) * grid / w;
      const long iy = static_cast<long>(fy), ix = static_cast<long>(fx);
      const float ty = fy - iy, tx = fx - ix;
      const float a = coarse[iy * gw + ix], b = coarse[iy * gw + ix + 1];
      const float c = coarse[(iy + 1) * gw + ix], d = coarse[(iy + 1) * gw + ix + 1];
      out[y * w + x] = a * (1 - ty) * (1 - tx) + b * (1 - ty) * tx +
                       c * ty * (1 - tx) + d * ty * tx;
    }
  return out;
}

Image texture_image(long size, Rng& rng) {
  std::uniform_real_distribution<float> angle(0.f, 3.14159265f);
  std::uniform_real_distribution<float> freq(0.25f, 0.55f);
  std::uniform_real_distribution<float> phase(0.f, 6.2831853f);
  const float th = angle(rng), f = freq(rng), ph = phase(rng);
  const float cth = std::cos(th), sth = std::sin(th);
  const auto noise = value_noise(size, size, 8, 0.08f, rng);
  Image img = Image::zeros(1, size, size);
  for (long y = 0; y < size; ++y)
    for (long x = 0; x < size; ++x) {
      const float s = 0.5f + 0.22f * std::sin(f * (x * cth + y * sth) + ph);
      img.at(0, y, x) = std::clamp(s + noise[y * size + x], 0.f, 1.f);
    }
  return img;
}

// 9x9 high-contrast glyph stamped near the lower-left corner.
void stamp_watermark(Image& img) {
  static const char* rows[9] = {
      "#########", "#.......#", "#.##.##.#", "#.#...#.#", "#.#.#.#.#",
      "#.#...#.#", "#.##.##.#", "#.......#", "#########"};
  const long y0 = img.height - 13, x0 = 4;
  for (long y = 0; y < 9; ++y)
    for (long x = 0; x < 9; ++x) {
      const float v = rows[y][x] == '#' ? 1.0f : 0.0f;
      for (long c = 0; c < img.channels; ++c) img.at(c, y0 + y, x0 + x) = v;
    }
}

bool watermark_region(long y, long x, long h) {
  return y >= h - 13 && y < h - 4 && x >= 4 && x < 13;
}

// Low-contrast bar object on a noisy backdrop; horizontal orientation marks
// the anomalous class. The bar is the scenario's "true object".
Image watermark_base(long size, bool anomalous, std::vector<float>* gt_mask,
                     Rng& rng) {
  const auto noise = value_noise(size, size, 10, 0.10f, rng);
  Image img = Image::zeros(1, size, size);
  for (long y = 0; y < size; ++y)
    for (long x = 0; x < size; ++x)
      img.at(0, y, x) = std::clamp(0.5f + noise[y * size + x], 0.f, 1.f);
  std::uniform_int_distribution<long> jitter(-6, 6);
  const long cy = size / 2 + jitter(rng), cx = size / 2 + jitter(rng);
  const long half_len = 11, half_thick = 2;
  const float contrast = 0.08f;
  if (gt_mask) gt_mask->assign(static_cast<size_t>(size * size), 0.f);
  for (long y = 0; y < size; ++y)
    for (long x = 0; x < size; ++x) {
      const long dy = y - cy, dx = x - cx;
      const bool inside = anomalous
                              ? (std::labs(dy) <= half_thick && std::labs(dx) <= half_len)
                              : (std::labs(dy) <= half_len && std::labs(dx) <= half_thick);
      if (!inside) continue;
      img.at(0, y, x) = std::clamp(img.at(0, y, x) + contrast, 0.f, 1.f);
      if (anomalous && gt_mask) (*gt_mask)[y * size + x] = 1.f;
    }
  return img;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (scenario != "texture" && scenario != "watermark")
    throw ConfigError("unknown scenario '" + scenario + "'");
  if (image_size < 16) throw ConfigError("scenario image size too small");
  if (train_count < 1 || test_nominal < 1 || test_anomalous < 1)
    throw ConfigError("scenario counts must be >= 1");
  if (watermark_correlation < 0.0 || watermark_correlation > 1.0)
    throw ConfigError("watermark correlation must be in [0,1]");
  if (labeled_anomalies < 0)
    throw ConfigError("labeled anomaly count must be >= 0");
  confetti_cfg.validate(image_size, image_size);
}

ScenarioData synth_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  ScenarioData out;
  const long n = cfg.image_size;

  auto make_texture = [&](std::uint64_t tag, long index, bool anomalous) {
    Rng rng(derive_seed(cfg.seed, tag, static_cast<std::uint64_t>(index)));
    Sample s;
    s.image = texture_image(n, rng);
    if (anomalous) {
      auto [img, mask] = confetti(s.image, cfg.confetti_cfg, rng);
      s.image = std::move(img);
      s.gt_map = std::move(mask);
      s.label = 1;
    }
    return s;
  };

  auto make_watermark = [&](std::uint64_t tag, long index, bool anomalous) {
    // The glyph draw uses its own stream so the base image is identical
    // across correlation settings (watermark-removal experiments).
    Rng rng(derive_seed(cfg.seed, tag, static_cast<std::uint64_t>(index)));
    Sample s;
    std::vector<float> gt;
    s.image = watermark_base(n, anomalous, anomalous ? &gt : nullptr, rng);
    if (anomalous) {
      s.label = 1;
      s.gt_map = std::move(gt);
      Rng glyph_rng(derive_seed(cfg.seed, tag ^ 0xabcdef, static_cast<std::uint64_t>(index)));
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      if (coin(glyph_rng) < cfg.watermark_correlation) stamp_watermark(s.image);
    }
    return s;
  };

  const bool texture = cfg.scenario == "texture";
  for (long i = 0; i < cfg.train_count; ++i)
    out.train.samples.push_back(texture ? make_texture(1, i, false)
                                        : make_watermark(1, i, false));
  if (texture) {
    for (long i = 0; i < cfg.labeled_anomalies; ++i)
      out.train.samples.push_back(make_texture(2, i, true));
  } else {
    // The watermark scenario trains with both classes present.
    for (long i = 0; i < cfg.train_count; ++i)
      out.train.samples.push_back(make_watermark(2, i, true));
  }
  for (long i = 0; i < cfg.test_nominal; ++i)
    out.test.samples.push_back(texture ? make_texture(3, i, false)
                                       : make_watermark(3, i, false));
  for (long i = 0; i < cfg.test_anomalous; ++i)
    out.test.samples.push_back(texture ? make_texture(4, i, true)
                                       : make_watermark(4, i, true));
  return out;
}

// --- augmentation --------------------------------------------------------

Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng) {
  Image img = image;
  if (policy.jitter > 0.0) {
    std::uniform_real_distribution<float> sc(1.f - policy.jitter, 1.f + policy.jitter);
    std::uniform_real_distribution<float> sh(-policy.jitter, policy.jitter);
    for (long c = 0; c < img.channels; ++c) {
      const float scale = sc(rng), shift = sh(rng);
      for (long y = 0; y < img.height; ++y)
        for (long x = 0; x < img.width; ++x)
          img.at(c, y, x) = std::clamp(img.at(c, y, x) * scale + shift, 0.f, 1.f);
    }
  }
  if (policy.crop_size > 0) {
    const long ph = img.height + 2 * policy.crop_pad;
    const long pw = img.width + 2 * policy.crop_pad;
    if (policy.crop_size > ph || policy.crop_size > pw)
      throw ConfigError("augment: crop larger than padded image");
    std::uniform_int_distribution<long> ydist(0, ph - policy.crop_size);
    std::uniform_int_distribution<long> xdist(0, pw - policy.crop_size);
    const long y0 = ydist(rng), x0 = xdist(rng);
    Image cropped = Image::zeros(img.channels, policy.crop_size, policy.crop_size);
    for (long c = 0; c < img.channels; ++c)
      for (long y = 0; y < policy.crop_size; ++y)
        for (long x = 0; x < policy.crop_size; ++x) {
          const long sy = y0 + y - policy.crop_pad;
          const long sx = x0 + x - policy.crop_pad;
          if (sy >= 0 && sy < img.height && sx >= 0 && sx < img.width)
            cropped.at(c, y, x) = img.at(c, sy, sx);
        }
    img = std::move(cropped);
  }
  if (policy.hflip_prob > 0.0) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < policy.hflip_prob) {
      for (long c = 0; c < img.channels; ++c)
        for (long y = 0; y < img.height; ++y)
          for (long x = 0; x < img.width / 2; ++x)
            std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
    }
  }
  if (policy.noise_sigma > 0.0) {
    std::normal_distribution<float> noise(0.f, static_cast<float>(policy.noise_sigma));
    for (auto& v : img.data) v = std::clamp(v + noise(rng), 0.f, 1.f);
  }
  if (policy.normalize) {
    if (static_cast<long>(policy.mean.size()) != img.channels ||
        static_cast<long>(policy.stddev.size()) != img.channels)
      throw ConfigError("augment: normalization stats channel mismatch");
    for (long c = 0; c < img.channels; ++c) {
      const float sd = policy.stddev[c] > 1e-8f ? policy.stddev[c] : 1.f;
      for (long y = 0; y < img.height; ++y)
        for (long x = 0; x < img.width; ++x)
          img.at(c, y, x) = (img.at(c, y, x) - policy.mean[c]) / sd;
    }
  }
  return img;
}

void dataset_stats(const Dataset& ds, std::vector<float>& mean,
                   std::vector<float>& stddev) {
  mean.clear();
  stddev.clear();
  long channels = 0;
  double count = 0;
  std::vector<double> sum, sumsq;
  for (const Sample& s : ds.samples) {
    if (s.label != 0) continue;
    if (channels == 0) {
      channels = s.image.channels;
      sum.assign(channels, 0.0);
      sumsq.assign(channels, 0.0);
    }
    for (long c = 0; c < channels; ++c)
      for (long y = 0; y < s.image.height; ++y)
        for (long x = 0; x < s.image.width; ++x) {
          const double v = s.image.at(c, y, x);
          sum[c] += v;
          sumsq[c] += v * v;
        }
    count += s.image.height * s.image.width;
  }
  if (count == 0) throw UsageError("dataset_stats: no nominal samples");
  for (long c = 0; c < channels; ++c) {
    const double m = sum[c] / count;
    mean.push_back(static_cast<float>(m));
    stddev.push_back(
        static_cast<float>(std::sqrt(std::max(0.0, sumsq[c] / count - m * m))));
  }
}

Tensor<float> to_tensor(const std::vector<Sample>& batch) {
  if (batch.empty()) throw UsageError("to_tensor: empty batch");
  const Image& first = batch[0].image;
  std::vector<float> data;
  data.reserve(batch.size() * first.data.size());
  for (const Sample& s : batch) {
    if (s.image.channels != first.channels || s.image.height != first.height ||
        s.image.width != first.width)
      throw UsageError("to_tensor: mixed image shapes in batch");
    data.insert(data.end(), s.image.data.begin(), s.image.data.end());
  }
  return Tensor<float>::from(
      {static_cast<long>(batch.size()), first.channels, first.height, first.width},
      std::move(data));
}

}  // namespace fcdd
