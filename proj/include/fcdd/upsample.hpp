#pragma once

#include <cmath>
#include <vector>

#include "fcdd/arch.hpp"
#include "fcdd/ops.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

// Normalized isotropic Gaussian: entries sum to 1, center is the maximum,
// exact 4-fold symmetry.
template <class T>
struct GaussianKernel {
  long size = 1;
  T sigma = T(1);
  std::vector<T> values;  // size*size, row-major
};

template <class T>
GaussianKernel<T> gaussian_kernel(long size, T sigma) {
  if (size < 1 || size % 2 == 0)
    throw ConfigError("gaussian_kernel: size must be odd and >= 1");
  if (!(sigma > T(0))) throw ConfigError("gaussian_kernel: sigma must be > 0");
  GaussianKernel<T> kern;
  kern.size = size;
  kern.sigma = sigma;
  kern.values.resize(static_cast<size_t>(size * size));
  const double c = (size - 1) / 2.0;
  const double inv = 1.0 / (2.0 * static_cast<double>(sigma) * sigma);
  double total = 0;
  for (long y = 0; y < size; ++y)
    for (long x = 0; x < size; ++x) {
      const double d2 = (x - c) * (x - c) + (y - c) * (y - c);
      const double v = std::exp(-d2 * inv);
      kern.values[y * size + x] = static_cast<T>(v);
      total += v;
    }
  for (auto& v : kern.values) v = static_cast<T>(v / total);
  return kern;
}

// Kernel size for a receptive field: even sizes are reduced by 1 so a center
// pixel exists (alignment error <= 0.5 pixel).
inline long upsample_kernel_size(const RFInfo& rf) {
  return rf.rf_size % 2 == 0 ? rf.rf_size - 1 : rf.rf_size;
}

namespace detail {

// Extracts rows [top, top+out_h) x cols [left, left+out_w) of a [b,1,H,W]
// tensor, zero-filling out-of-range coordinates. Linear, so gradients pass
// straight through.
template <class T>
Tensor<T> crop2d(const Tensor<T>& input, long top, long left, long out_h,
                 long out_w) {
  const long b = input.dim(0), H = input.dim(2), W = input.dim(3);
  std::vector<T> out(static_cast<size_t>(b * out_h * out_w), T(0));
  const T* in = input.values().data();
  for (long ib = 0; ib < b; ++ib)
    for (long y = 0; y < out_h; ++y) {
      const long sy = top + y;
      if (sy < 0 || sy >= H) continue;
      for (long x = 0; x < out_w; ++x) {
        const long sx = left + x;
        if (sx < 0 || sx >= W) continue;
        out[(ib * out_h + y) * out_w + x] = in[(ib * H + sy) * W + sx];
      }
    }
  auto backprop = [=](fcdd::detail::TensorImpl<T>& self) {
    auto& pin = *self.parents[0];
    pin.ensure_grad();
    for (long ib = 0; ib < b; ++ib)
      for (long y = 0; y < out_h; ++y) {
        const long sy = top + y;
        if (sy < 0 || sy >= H) continue;
        for (long x = 0; x < out_w; ++x) {
          const long sx = left + x;
          if (sx < 0 || sx >= W) continue;
          pin.grad[(ib * H + sy) * W + sx] += self.grad[(ib * out_h + y) * out_w + x];
        }
      }
  };
  return fcdd::detail::make_node<T>({b, 1, out_h, out_w}, std::move(out),
                                    {input}, backprop);
}

}  // namespace detail

// Full-resolution heatmap: a strided transposed convolution of A with a
// normalized Gaussian whose size matches the receptive field, each kernel
// centered at the (analytic, unclipped) receptive-field center of its output
// pixel, then cropped/zero-padded to exactly out_h x out_w. Linear in A, so
// training may backpropagate through it.
template <class T>
Tensor<T> upsample(const Tensor<T>& A, const RFInfo& rf, T sigma, long out_h,
                   long out_w) {
  if (A.rank() != 4 || A.dim(1) != 1)
    throw ConfigError("upsample expects [b,1,u,v] heatmaps");
  if (out_h < 1 || out_w < 1) throw ConfigError("upsample: bad output shape");
  const long k = upsample_kernel_size(rf);
  const long stride = rf.cumulative_stride;
  const long u = A.dim(2), v = A.dim(3);
  const long c0 = std::lround(rf.center_offset);
  // The kernel centers span [c0, c0 + (u-1)*stride]; if that band misses the
  // requested canvas entirely the geometry is inconsistent.
  if (c0 - (k - 1) / 2 + (u - 1) * stride + k <= 0 ||
      c0 + (v - 1) * stride - (k - 1) / 2 >= out_w + k)
    throw ConfigError("upsample: output shape inconsistent with rf geometry");
  const auto kern = gaussian_kernel<T>(k, sigma);
  Tensor<T> full = transposed_conv2d(A, kern.values, k, stride);
  // Transposed-output row r sits at input coordinate r + c0 - (k-1)/2.
  const long top = (k - 1) / 2 - c0;
  return detail::crop2d(full, top, top, out_h, out_w);
}

// Stride-1 convolution with the same normalized Gaussian, reflective border
// handling. Post-processing only; not gradient-tracked.
template <class T>
std::vector<T> blur(const std::vector<T>& map, long h, long w, T sigma,
                    long kernel_size = 0) {
  if (kernel_size == 0) {
    kernel_size = 2 * std::max<long>(1, std::lround(2.0 * sigma)) + 1;
    kernel_size = std::min(kernel_size, 2 * std::min(h, w) - 1);
    if (kernel_size % 2 == 0) --kernel_size;
  }
  const auto kern = gaussian_kernel<T>(kernel_size, sigma);
  const long r = kernel_size / 2;
  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - i - 1;
    }
    return i;
  };
  std::vector<T> out(map.size(), T(0));
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (long ky = -r; ky <= r; ++ky)
        for (long kx = -r; kx <= r; ++kx) {
          const long sy = reflect(y + ky, h);
          const long sx = reflect(x + kx, w);
          acc += static_cast<double>(map[sy * w + sx]) *
                 kern.values[(ky + r) * kernel_size + (kx + r)];
        }
      out[y * w + x] = static_cast<T>(acc);
    }
  return out;
}

}  // namespace fcdd
