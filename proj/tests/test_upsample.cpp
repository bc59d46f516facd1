#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "fcdd/upsample.hpp"
#include "oracles.hpp"

using namespace fcdd;

TEST_CASE("gaussian_kernel is normalized, symmetric and peaked at the center") {
  const auto k = gaussian_kernel<double>(7, 1.7);
  double total = 0;
  for (double v : k.values) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  const double peak = k.values[3 * 7 + 3];
  for (long y = 0; y < 7; ++y)
    for (long x = 0; x < 7; ++x) {
      CHECK(k.values[y * 7 + x] <= peak);
      CHECK(k.values[y * 7 + x] ==
            doctest::Approx(k.values[(6 - y) * 7 + (6 - x)]).epsilon(1e-12));
      CHECK(k.values[y * 7 + x] ==
            doctest::Approx(k.values[x * 7 + y]).epsilon(1e-12));
    }
  CHECK_THROWS_AS(gaussian_kernel<double>(4, 1.0), ConfigError);
  CHECK_THROWS_AS(gaussian_kernel<double>(3, 0.0), ConfigError);
}

TEST_CASE("even receptive fields use the next smaller odd kernel") {
  CHECK(upsample_kernel_size({18, 4, 1.5}) == 17);
  CHECK(upsample_kernel_size({9, 2, 1.0}) == 9);
}

TEST_CASE("upsample matches the per-pixel Gaussian stamping oracle") {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> dist(0.0, 2.0);
  std::uniform_real_distribution<double> sig(0.6, 6.0);
  for (int rep = 0; rep < 24; ++rep) {
    std::uniform_int_distribution<long> upick(2, 6);
    const long b = 1 + rep % 2, u = upick(rng), v = upick(rng);
    const long stride = 1 + rep % 4;
    RFInfo rf;
    rf.cumulative_stride = stride;
    rf.rf_size = stride + 2 + (rep % 5);
    rf.center_offset = (rf.rf_size - 1) / 2.0 - (rep % 3);
    const double sigma = sig(rng);
    const long out_h = (u - 1) * stride + rf.rf_size;
    const long out_w = (v - 1) * stride + rf.rf_size - (rep % 2);

    std::vector<double> a(static_cast<size_t>(b * u * v));
    for (auto& x : a) x = dist(rng);
    auto A = Tensor<double>::from({b, 1, u, v}, a);
    const auto got = upsample(A, rf, sigma, out_h, out_w);
    const long k = upsample_kernel_size(rf);
    const auto want = oracle::upsample_stamps(a, b, u, v, k, stride,
                                              rf.center_offset, sigma, out_h,
                                              out_w);
    REQUIRE(got.values().size() == want.size());
    double worst = 0;
    for (size_t i = 0; i < want.size(); ++i)
      worst = std::max(worst, std::abs(got.values()[i] - want[i]));
    CAPTURE(rep);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("upsample is linear: gradients pass through to A") {
  RFInfo rf{5, 2, 2.0};
  auto A = Tensor<double>::filled({1, 1, 3, 3}, 1.0, true);
  auto full = upsample(A, rf, 1.3, 9, 9);
  backward(sum_all(full));
  // With the whole kernel inside the canvas, each low-res pixel's gradient is
  // the kernel mass, i.e. exactly 1.
  CHECK(A.grad()[1 * 3 + 1] == doctest::Approx(1.0).epsilon(1e-12));
  for (double g : A.grad()) {
    CHECK(g > 0.0);
    CHECK(g <= 1.0 + 1e-12);
  }
}

TEST_CASE("upsample validates geometry") {
  RFInfo rf{5, 2, 2.0};
  auto A = Tensor<double>::zeros({1, 1, 3, 3});
  CHECK_THROWS_AS(upsample(A, rf, 1.0, 0L, 8L), ConfigError);
  CHECK_THROWS_AS(upsample(Tensor<double>::zeros({1, 2, 3, 3}), rf, 1.0, 8L, 8L),
                  ConfigError);
}

TEST_CASE("blur keeps constants constant and mass approximately") {
  std::vector<double> flat(64, 0.37);
  const auto out = blur(flat, 8L, 8L, 1.5);
  for (double v : out) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

  std::vector<double> spike(121, 0.0);
  spike[5 * 11 + 5] = 1.0;
  const auto sm = blur(spike, 11L, 11L, 1.0);
  double total = 0;
  for (double v : sm) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sm[5 * 11 + 5] < 1.0);
  CHECK(sm[5 * 11 + 5] > sm[0]);
}
