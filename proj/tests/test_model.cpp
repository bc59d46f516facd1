#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <random>

#include "doctest.h"
#include "fcdd/arch.hpp"
#include "fcdd/checkpoint.hpp"
#include "fcdd/model.hpp"
#include "fcdd/model_io.hpp"

using namespace fcdd;

namespace {

// Empirical receptive field of output pixel (oy, ox): the set of input pixels
// whose perturbation changes that output. Positive weights, a positive leaky
// slope and a huge perturbation make every influence strict, including through
// max pooling, so the changed set equals the geometric receptive field.
std::vector<std::pair<long, long>> empirical_rf(const ArchitectureSpec& spec,
                                                long oy, long ox) {
  FCNModel<double> model = FCNModel<double>::build(spec, 1);
  for (auto& w : model.conv_weights())
    for (auto& v : w.values()) v = 0.05;
  const long h = spec.in_height, w = spec.in_width;
  const auto [u, v] = spec.output_extent();
  auto out_at = [&](const std::vector<double>& img) {
    auto x = Tensor<double>::from({1, 1, h, w}, img);
    return model.forward(x, Mode::kEval).values()[oy * v + ox];
  };
  std::vector<double> base_img(static_cast<size_t>(h * w), 0.0);
  const double base = out_at(base_img);
  std::vector<std::pair<long, long>> hits;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      std::vector<double> img = base_img;
      img[y * w + x] = 1000.0;
      if (out_at(img) != base) hits.emplace_back(y, x);
    }
  (void)u;
  return hits;
}

// Backward interval propagation of one output index through the spatial
// layers (square input assumed). With `clip` the interval is bounded by each
// layer's actual input extent, which accounts for columns a truncating
// conv/pool drops; without it the result is the pure geometric span that
// RFInfo describes.
std::pair<long, long> propagate_span(const ArchitectureSpec& spec, long o,
                                     bool clip) {
  std::vector<long> extents;
  long h = spec.in_height;
  for (const LayerSpec& l : spec.layers) {
    if (l.kind == LayerKind::kConv) {
      extents.push_back(h);
      h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
    } else if (l.kind == LayerKind::kMaxPool) {
      extents.push_back(h);
      h = (h - l.kernel) / l.stride + 1;
    }
  }
  long a = o, b = o;
  size_t idx = extents.size();
  for (auto it = spec.layers.rbegin(); it != spec.layers.rend(); ++it) {
    const LayerSpec& l = *it;
    if (l.kind != LayerKind::kConv && l.kind != LayerKind::kMaxPool) continue;
    --idx;
    const long pad = l.kind == LayerKind::kConv ? l.padding : 0;
    a = a * l.stride - pad;
    b = b * l.stride - pad + l.kernel - 1;
    if (clip) {
      a = std::max(a, 0L);
      b = std::min(b, extents[idx] - 1);
    }
  }
  return {a, b + 1};
}

// Receptive field of output pixel (oy, ox) as a clipped pixel set.
std::vector<std::pair<long, long>> analytic_rf(const ArchitectureSpec& spec,
                                               long oy, long ox) {
  auto [y0, y1] = propagate_span(spec, oy, true);
  auto [x0, x1] = propagate_span(spec, ox, true);
  std::vector<std::pair<long, long>> out;
  for (long y = std::max(0L, y0); y < std::min(spec.in_height, y1); ++y)
    for (long x = std::max(0L, x0); x < std::min(spec.in_width, x1); ++x)
      out.emplace_back(y, x);
  return out;
}

}  // namespace

TEST_CASE("receptive-field recurrence on hand-checked stacks") {
  ArchitectureSpec s;
  s.in_channels = 1;
  s.in_height = s.in_width = 16;
  s.layers = {LayerSpec::conv(1, 1, 3, 1, 0)};
  RFInfo rf = receptive_field(s);
  CHECK(rf.rf_size == 3);
  CHECK(rf.cumulative_stride == 1);
  CHECK(rf.center_offset == doctest::Approx(1.0));

  s.layers.push_back(LayerSpec::maxpool(2, 2));
  rf = receptive_field(s);
  CHECK(rf.rf_size == 4);
  CHECK(rf.cumulative_stride == 2);
  CHECK(rf.center_offset == doctest::Approx(1.5));

  s.layers.push_back(LayerSpec::conv(1, 1, 3, 1, 1));
  rf = receptive_field(s);
  CHECK(rf.rf_size == 8);
  CHECK(rf.cumulative_stride == 2);
  CHECK(rf.center_offset == doctest::Approx(1.5));
}

TEST_CASE("preset geometry") {
  const ArchitectureSpec fm = preset("fmnist28");
  RFInfo rf = receptive_field(fm);
  CHECK(rf.rf_size == 18);
  CHECK(rf.cumulative_stride == 4);
  CHECK(fm.output_extent() == std::pair<long, long>{7, 7});
  CHECK(fm.output_channels() == 1);

  // First-kernel sweep: the receptive field grows linearly with the kernel.
  for (long k = 3; k <= 17; k += 2) {
    const ArchitectureSpec c = preset("cifar32", k);
    CHECK(receptive_field(c).rf_size == k + 15);
    CHECK(receptive_field(c).cumulative_stride == 4);
    CHECK(c.output_extent() == std::pair<long, long>{8, 8});
  }

  const ArchitectureSpec vgg = preset("vgg224like");
  CHECK(vgg.output_extent() == std::pair<long, long>{28, 28});
  CHECK(vgg.output_channels() == 1);
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("analytic receptive field equals the perturbation oracle") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    ArchitectureSpec s;
    std::uniform_int_distribution<int> nlayers(1, 3), kpick(0, 2), coin(0, 1);
    const long ks[3] = {1, 3, 5};
    // Redraw until the stack keeps a nonempty output map.
    for (;;) {
      s.layers.clear();
      s.in_channels = 1;
      s.in_height = s.in_width = 17;
      const int n = nlayers(rng);
      for (int i = 0; i < n; ++i) {
        const long k = ks[kpick(rng)];
        // kernel >= stride keeps the receptive-field support contiguous;
        // sub-kernel sampling would punch holes the box recurrence cannot see.
        const long stride = k > 1 && coin(rng) ? 2 : 1;
        const long pad = coin(rng) ? (k - 1) / 2 : 0;
        s.layers.push_back(LayerSpec::conv(1, 1, k, stride, pad));
        if (coin(rng)) s.layers.push_back(LayerSpec::leaky_relu(0.1));
        if (coin(rng)) s.layers.push_back(LayerSpec::maxpool(2, 2));
      }
      try {
        s.validate();
        break;
      } catch (const ConfigError&) {
      }
    }
    const auto [u, v] = s.output_extent();
    const RFInfo rf = receptive_field(s);
    // RFInfo must reproduce the unclipped backward interval for every output
    // index: same span length, stride and center.
    for (long o : {0L, u / 2, u - 1}) {
      const auto [lo, hi] = propagate_span(s, o, false);
      CAPTURE(rep);
      CHECK(hi - lo == rf.rf_size);
      CHECK(lo == std::llround(rf.center_offset + o * rf.cumulative_stride -
                               (rf.rf_size - 1) / 2.0));
    }
    // And the clipped interval must match what perturbation actually reaches.
    for (auto [oy, ox] : {std::pair<long, long>{0, 0}, {u / 2, v / 2}}) {
      CAPTURE(rep);
      CHECK(empirical_rf(s, oy, ox) == analytic_rf(s, oy, ox));
    }
  }
}

TEST_CASE("validation rejects malformed stacks") {
  ArchitectureSpec s;
  s.in_channels = 3;
  s.in_height = s.in_width = 8;
  s.layers = {LayerSpec::conv(1, 1, 3, 1, 1)};  // channel chain broken
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s.layers = {LayerSpec::conv(3, 2, 3, 1, 1)};  // 2 output channels
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s.layers = {LayerSpec::conv(3, 1, 3, 1, 1), LayerSpec::maxpool(2, 2),
              LayerSpec::maxpool(2, 2), LayerSpec::maxpool(2, 2),
              LayerSpec::maxpool(2, 2)};  // collapses below 1x1
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("architecture text round trip") {
  const std::string text =
      "# toy stack\n"
      "input c=3 h=32 w=32\n"
      "conv in=3 out=8 k=3 s=1 p=1\n"
      "bn\n"
      "lrelu a=0.01\n"
      "maxpool k=2 s=2\n"
      "conv in=8 out=1 k=1 s=1 p=0\n";
  const ArchitectureSpec s = parse_architecture(text);
  CHECK(s.in_channels == 3);
  CHECK(s.layers.size() == 5);
  CHECK(s.layers[2].alpha == doctest::Approx(0.01));
  const ArchitectureSpec again = parse_architecture(format_architecture(s));
  CHECK(again.layers.size() == s.layers.size());
  CHECK(again.output_extent() == s.output_extent());
  CHECK(receptive_field(again).rf_size == receptive_field(s).rf_size);
}

TEST_CASE("parser rejects unknown layer kinds and bad input lines") {
  CHECK_THROWS_AS(parse_architecture("input c=1 h=8 w=8\ndense out=10\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_architecture("conv in=1 out=1 k=3 s=1 p=1\n"),
                  ConfigError);  // missing input line
}

TEST_CASE("model build is deterministic in the seed") {
  const ArchitectureSpec s = preset("fmnist28");
  auto a = FCNModel<float>::build(s, 42);
  auto b = FCNModel<float>::build(s, 42);
  auto c = FCNModel<float>::build(s, 43);
  CHECK(a.conv_weights()[0].values() == b.conv_weights()[0].values());
  CHECK(a.conv_weights()[0].values() != c.conv_weights()[0].values());
  // Biases start at zero; the last one is the hypersphere center.
  for (float v : a.final_bias().values()) CHECK(v == 0.f);
}

TEST_CASE("forward produces the declared output extent") {
  const ArchitectureSpec s = preset("fmnist28");
  auto m = FCNModel<float>::build(s, 1);
  auto x = Tensor<float>::filled({2, 1, 28, 28}, 0.3f);
  auto y = m.forward(x, Mode::kTrain);
  CHECK(y.shape() == Shape{2, 1, 7, 7});
  CHECK_THROWS_AS(m.forward(Tensor<float>::zeros({2, 3, 28, 28}), Mode::kEval),
                  UsageError);
}

TEST_CASE("parameter names follow the layer indices") {
  auto m = FCNModel<float>::build(preset("fmnist28"), 1);
  const auto params = m.parameters();
  REQUIRE(!params.empty());
  CHECK(params[0].name == "layer0.weight");
  CHECK(params[1].name == "layer0.bias");
  bool saw_gamma = false;
  for (const auto& p : params) saw_gamma |= p.name.find(".gamma") != std::string::npos;
  CHECK(saw_gamma);
}

TEST_CASE("save_model / load_model round trip preserves eval outputs") {
  const ArchitectureSpec s = preset("fmnist28");
  auto m = FCNModel<float>::build(s, 9);
  // Push the running stats away from their init so the round trip covers them.
  auto x = Tensor<float>::filled({4, 1, 28, 28}, 0.7f);
  (void)m.forward(x, Mode::kTrain);

  const std::string path = "roundtrip.ckpt";
  save_model(m, path);
  auto m2 = load_model<float>(s, path);
  auto probe = Tensor<float>::filled({1, 1, 28, 28}, 0.4f);
  CHECK(m.forward(probe, Mode::kEval).values() ==
        m2.forward(probe, Mode::kEval).values());
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  const std::string path = "corrupt.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE1234";
  }
  CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "FCDD";  // truncated after the magic
  }
  CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("does_not_exist.ckpt"), LoadError);
}

TEST_CASE("checkpoint round trip keeps shapes, dtypes and values") {
  Checkpoint ck;
  ck["a"] = CheckpointEntry{{2, 3}, 0, {1, 2, 3, 4, 5, 6}};
  ck["b"] = CheckpointEntry{{4}, 1, {0.25, -0.5, 1e-12, 3.7}};
  const std::string path = "pair.ckpt";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  REQUIRE(back.size() == 2);
  CHECK(back.at("a").shape == Shape{2, 3});
  CHECK(back.at("a").dtype == 0);
  CHECK(back.at("b").values == ck["b"].values);  // f64 survives exactly
  std::remove(path.c_str());
}
