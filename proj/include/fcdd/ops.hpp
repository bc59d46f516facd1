#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fcdd/tensor.hpp"

namespace fcdd {

// --- elementwise / reduction helpers -----------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw UsageError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.values());
  for (long i = 0; i < a.numel(); ++i) out[i] += b.values()[i];
  return detail::make_node<T>(
      a.shape(), std::move(out), {a, b}, [](detail::TensorImpl<T>& self) {
        for (int p = 0; p < 2; ++p) {
          auto& par = *self.parents[p];
          par.ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            par.grad[i] += self.grad[i];
        }
      });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw UsageError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.values());
  for (long i = 0; i < a.numel(); ++i) out[i] *= b.values()[i];
  return detail::make_node<T>(
      a.shape(), std::move(out), {a, b}, [](detail::TensorImpl<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        pa.ensure_grad();
        pb.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
          pa.grad[i] += self.grad[i] * pb.values[i];
          pb.grad[i] += self.grad[i] * pa.values[i];
        }
      });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= factor;
  return detail::make_node<T>(
      a.shape(), std::move(out), {a}, [factor](detail::TensorImpl<T>& self) {
        auto& par = *self.parents[0];
        par.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          par.grad[i] += factor * self.grad[i];
      });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T total = std::accumulate(a.values().begin(), a.values().end(), T(0));
  return detail::make_node<T>(
      Shape{1}, {total}, {a}, [](detail::TensorImpl<T>& self) {
        auto& par = *self.parents[0];
        par.ensure_grad();
        for (auto& g : par.grad) g += self.grad[0];
      });
}

// --- conv2d -------------------------------------------------------------

// input [b,c,h,w], weight [o,c,k,k], bias [o]; zero padding.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, long stride, long padding) {
  if (input.rank() != 4 || weight.rank() != 4)
    throw ConfigError("conv2d expects 4-d input and weight");
  const long b = input.dim(0), c = input.dim(1), h = input.dim(2),
             w = input.dim(3);
  const long o = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c)
    throw ConfigError("conv2d: weight channels " +
                      std::to_string(weight.dim(1)) + " != input channels " +
                      std::to_string(c));
  if (weight.dim(2) != weight.dim(3))
    throw ConfigError("conv2d: only square kernels supported");
  if (bias.numel() != o) throw ConfigError("conv2d: bias length != out channels");
  if (stride < 1 || padding < 0) throw ConfigError("conv2d: bad stride/padding");
  if (k > h + 2 * padding || k > w + 2 * padding)
    throw ConfigError("conv2d: kernel larger than padded input");

  const long oh = (h + 2 * padding - k) / stride + 1;
  const long ow = (w + 2 * padding - k) / stride + 1;
  std::vector<T> out(static_cast<size_t>(b * o * oh * ow));

  const T* in = input.values().data();
  const T* wt = weight.values().data();
  const T* bs = bias.values().data();
  for (long ib = 0; ib < b; ++ib)
    for (long io = 0; io < o; ++io)
      for (long y = 0; y < oh; ++y)
        for (long x = 0; x < ow; ++x) {
          T acc = bs[io];
          const long iy0 = y * stride - padding;
          const long ix0 = x * stride - padding;
          for (long ic = 0; ic < c; ++ic) {
            const T* inp = in + ((ib * c + ic) * h) * w;
            const T* wp = wt + ((io * c + ic) * k) * k;
            for (long ky = 0; ky < k; ++ky) {
              const long iy = iy0 + ky;
              if (iy < 0 || iy >= h) continue;
              for (long kx = 0; kx < k; ++kx) {
                const long ix = ix0 + kx;
                if (ix < 0 || ix >= w) continue;
                acc += inp[iy * w + ix] * wp[ky * k + kx];
              }
            }
          }
          out[((ib * o + io) * oh + y) * ow + x] = acc;
        }
  check_finite(out, "conv2d");

  auto backprop = [=](detail::TensorImpl<T>& self) {
    auto& pin = *self.parents[0];
    auto& pwt = *self.parents[1];
    auto& pbs = *self.parents[2];
    pin.ensure_grad();
    pwt.ensure_grad();
    pbs.ensure_grad();
    const T* gout = self.grad.data();
    for (long ib = 0; ib < b; ++ib)
      for (long io = 0; io < o; ++io)
        for (long y = 0; y < oh; ++y)
          for (long x = 0; x < ow; ++x) {
            const T g = gout[((ib * o + io) * oh + y) * ow + x];
            if (g == T(0)) continue;
            pbs.grad[io] += g;
            const long iy0 = y * stride - padding;
            const long ix0 = x * stride - padding;
            for (long ic = 0; ic < c; ++ic) {
              const long inbase = ((ib * c + ic) * h) * w;
              const long wbase = ((io * c + ic) * k) * k;
              for (long ky = 0; ky < k; ++ky) {
                const long iy = iy0 + ky;
                if (iy < 0 || iy >= h) continue;
                for (long kx = 0; kx < k; ++kx) {
                  const long ix = ix0 + kx;
                  if (ix < 0 || ix >= w) continue;
                  pin.grad[inbase + iy * w + ix] += g * pwt.values[wbase + ky * k + kx];
                  pwt.grad[wbase + ky * k + kx] += g * pin.values[inbase + iy * w + ix];
                }
              }
            }
          }
  };
  return detail::make_node<T>({b, o, oh, ow}, std::move(out),
                              {input, weight, bias}, backprop);
}

// --- transposed conv2d (fixed kernel) ------------------------------------

// input [b,1,u,v], fixed (non-learned) k*k kernel. Output
// [b,1,(u-1)s+k,(v-1)s+k]; overlapping kernel placements add up. The op is
// linear in the input, so gradient flows through it to the input only.
template <class T>
Tensor<T> transposed_conv2d(const Tensor<T>& input,
                            const std::vector<T>& kernel, long k, long stride) {
  if (k < 1 || stride < 1)
    throw ConfigError("transposed_conv2d: kernel size and stride must be >= 1");
  if (input.rank() != 4 || input.dim(1) != 1)
    throw ConfigError("transposed_conv2d expects [b,1,u,v] input");
  if (static_cast<long>(kernel.size()) != k * k)
    throw ConfigError("transposed_conv2d: kernel length != k*k");
  const long b = input.dim(0), u = input.dim(2), v = input.dim(3);
  const long oh = (u - 1) * stride + k;
  const long ow = (v - 1) * stride + k;
  std::vector<T> out(static_cast<size_t>(b * oh * ow), T(0));
  const T* in = input.values().data();
  for (long ib = 0; ib < b; ++ib)
    for (long y = 0; y < u; ++y)
      for (long x = 0; x < v; ++x) {
        const T a = in[(ib * u + y) * v + x];
        if (a == T(0)) continue;
        T* op = out.data() + (ib * oh + y * stride) * ow + x * stride;
        for (long ky = 0; ky < k; ++ky)
          for (long kx = 0; kx < k; ++kx)
            op[ky * ow + kx] += a * kernel[ky * k + kx];
      }
  check_finite(out, "transposed_conv2d");

  auto backprop = [=](detail::TensorImpl<T>& self) {
    auto& pin = *self.parents[0];
    pin.ensure_grad();
    const T* g = self.grad.data();
    for (long ib = 0; ib < b; ++ib)
      for (long y = 0; y < u; ++y)
        for (long x = 0; x < v; ++x) {
          T acc = T(0);
          const T* gp = g + (ib * oh + y * stride) * ow + x * stride;
          for (long ky = 0; ky < k; ++ky)
            for (long kx = 0; kx < k; ++kx)
              acc += gp[ky * ow + kx] * kernel[ky * k + kx];
          pin.grad[(ib * u + y) * v + x] += acc;
        }
  };
  return detail::make_node<T>({b, 1, oh, ow}, std::move(out), {input}, backprop);
}

// --- maxpool2d ----------------------------------------------------------

// Backward routes the gradient to the argmax; ties go to the first
// (scan-order) maximum so the pass is deterministic.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& input, long k, long stride) {
  if (input.rank() != 4) throw ConfigError("maxpool2d expects 4-d input");
  if (k < 1 || stride < 1) throw ConfigError("maxpool2d: bad kernel/stride");
  const long b = input.dim(0), c = input.dim(1), h = input.dim(2),
             w = input.dim(3);
  if (k > h || k > w) throw ConfigError("maxpool2d: window larger than input");
  const long oh = (h - k) / stride + 1;
  const long ow = (w - k) / stride + 1;
  std::vector<T> out(static_cast<size_t>(b * c * oh * ow));
  std::vector<long> argmax(out.size());
  const T* in = input.values().data();
  for (long ib = 0; ib < b; ++ib)
    for (long ic = 0; ic < c; ++ic) {
      const long base = ((ib * c + ic) * h) * w;
      for (long y = 0; y < oh; ++y)
        for (long x = 0; x < ow; ++x) {
          long best = base + (y * stride) * w + x * stride;
          T bestv = in[best];
          for (long ky = 0; ky < k; ++ky)
            for (long kx = 0; kx < k; ++kx) {
              const long idx = base + (y * stride + ky) * w + (x * stride + kx);
              if (in[idx] > bestv) {
                bestv = in[idx];
                best = idx;
              }
            }
          const long oidx = ((ib * c + ic) * oh + y) * ow + x;
          out[oidx] = bestv;
          argmax[oidx] = best;
        }
    }

  auto backprop = [argmax](detail::TensorImpl<T>& self) {
    auto& pin = *self.parents[0];
    pin.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      pin.grad[argmax[i]] += self.grad[i];
  };
  return detail::make_node<T>({b, c, oh, ow}, std::move(out), {input}, backprop);
}

// --- batchnorm2d --------------------------------------------------------

template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(long channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

enum class Mode { kTrain, kEval };

// Train mode normalizes by batch statistics (biased variance) and updates the
// running stats in `state`; eval mode applies the running stats.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormState<T>& state,
                      Mode mode) {
  if (input.rank() != 4) throw ConfigError("batchnorm2d expects 4-d input");
  const long b = input.dim(0), c = input.dim(1), h = input.dim(2),
             w = input.dim(3);
  if (gamma.numel() != c || beta.numel() != c ||
      static_cast<long>(state.running_mean.size()) != c)
    throw ConfigError("batchnorm2d: channel count mismatch");
  if (mode == Mode::kTrain && b < 2)
    throw ConfigError("batchnorm2d: train mode requires batch size >= 2");

  const long plane = h * w;
  const long per_channel = b * plane;
  const T eps = state.eps;
  std::vector<T> mean(c), var(c);
  if (mode == Mode::kTrain) {
    const T* in = input.values().data();
    for (long ic = 0; ic < c; ++ic) {
      double m = 0;
      for (long ib = 0; ib < b; ++ib) {
        const T* p = in + ((ib * c + ic) * plane);
        for (long i = 0; i < plane; ++i) m += p[i];
      }
      m /= per_channel;
      double v = 0;
      for (long ib = 0; ib < b; ++ib) {
        const T* p = in + ((ib * c + ic) * plane);
        for (long i = 0; i < plane; ++i) {
          double d = p[i] - m;
          v += d * d;
        }
      }
      v /= per_channel;
      mean[ic] = static_cast<T>(m);
      var[ic] = static_cast<T>(v);
      // Running variance uses the unbiased estimate, as is conventional.
      const double unbiased =
          per_channel > 1 ? v * per_channel / (per_channel - 1) : v;
      state.running_mean[ic] =
          (T(1) - state.momentum) * state.running_mean[ic] + state.momentum * mean[ic];
      state.running_var[ic] =
          (T(1) - state.momentum) * state.running_var[ic] +
          state.momentum * static_cast<T>(unbiased);
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<T> out(input.values().size());
  std::vector<T> xhat(mode == Mode::kTrain ? input.values().size() : 0);
  {
    const T* in = input.values().data();
    const T* g = gamma.values().data();
    const T* bt = beta.values().data();
    for (long ib = 0; ib < b; ++ib)
      for (long ic = 0; ic < c; ++ic) {
        const T inv = T(1) / std::sqrt(var[ic] + eps);
        const long base = (ib * c + ic) * plane;
        for (long i = 0; i < plane; ++i) {
          const T xh = (in[base + i] - mean[ic]) * inv;
          if (mode == Mode::kTrain) xhat[base + i] = xh;
          out[base + i] = g[ic] * xh + bt[ic];
        }
      }
  }
  check_finite(out, "batchnorm2d");

  auto backprop = [=, xhat = std::move(xhat)](detail::TensorImpl<T>& self) {
    auto& pin = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    pin.ensure_grad();
    pg.ensure_grad();
    pb.ensure_grad();
    const T* gy = self.grad.data();
    if (mode == Mode::kEval) {
      for (long ib = 0; ib < b; ++ib)
        for (long ic = 0; ic < c; ++ic) {
          const T inv = T(1) / std::sqrt(var[ic] + eps);
          const long base = (ib * c + ic) * plane;
          for (long i = 0; i < plane; ++i) {
            const T g = gy[base + i];
            const T xh = (pin.values[base + i] - mean[ic]) * inv;
            pin.grad[base + i] += g * pg.values[ic] * inv;
            pg.grad[ic] += g * xh;
            pb.grad[ic] += g;
          }
        }
      return;
    }
    // Train mode: dx = gamma/sqrt(var+eps) * (dy - mean(dy) - xhat*mean(dy*xhat)).
    for (long ic = 0; ic < c; ++ic) {
      double sum_gy = 0, sum_gy_xh = 0;
      for (long ib = 0; ib < b; ++ib) {
        const long base = (ib * c + ic) * plane;
        for (long i = 0; i < plane; ++i) {
          sum_gy += gy[base + i];
          sum_gy_xh += gy[base + i] * xhat[base + i];
        }
      }
      const T mean_gy = static_cast<T>(sum_gy / per_channel);
      const T mean_gy_xh = static_cast<T>(sum_gy_xh / per_channel);
      const T inv = T(1) / std::sqrt(var[ic] + eps);
      const T gscale = pg.values[ic] * inv;
      for (long ib = 0; ib < b; ++ib) {
        const long base = (ib * c + ic) * plane;
        for (long i = 0; i < plane; ++i) {
          pin.grad[base + i] +=
              gscale * (gy[base + i] - mean_gy - xhat[base + i] * mean_gy_xh);
        }
      }
      pg.grad[ic] += static_cast<T>(sum_gy_xh);
      pb.grad[ic] += static_cast<T>(sum_gy);
    }
  };
  return detail::make_node<T>(input.shape(), std::move(out),
                              {input, gamma, beta}, backprop);
}

// --- activation ---------------------------------------------------------

// Elementwise max(x, alpha*x) with alpha in [0,1); alpha = 0 gives relu.
// The subgradient at exactly 0 is defined as alpha.
template <class T>
Tensor<T> activation(const Tensor<T>& input, T alpha) {
  if (!(alpha >= T(0) && alpha < T(1)))
    throw ConfigError("activation: alpha must be in [0,1)");
  std::vector<T> out(input.values());
  for (auto& v : out)
    if (v < T(0)) v *= alpha;
  auto backprop = [alpha](detail::TensorImpl<T>& self) {
    auto& pin = *self.parents[0];
    pin.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const T slope = pin.values[i] > T(0) ? T(1) : alpha;
      pin.grad[i] += slope * self.grad[i];
    }
  };
  return detail::make_node<T>(input.shape(), std::move(out), {input}, backprop);
}

}  // namespace fcdd
