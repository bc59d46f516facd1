#pragma once

#include <cmath>
#include <vector>

#include "fcdd/ops.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

// The anomalous -log(1-exp(-s)) term diverges at s = 0; the exponent is
// clamped below at kExpArgFloor, capping the term at kLogCap (~13.8).
inline constexpr double kExpArgFloor = 1e-6;
inline const double kLogCap = -std::log(1.0 - std::exp(-kExpArgFloor));

namespace detail {

// -log(1 - exp(-max(s, floor))) and its derivative w.r.t. s.
template <class T>
std::pair<T, T> anomalous_term(T s) {
  if (s <= T(kExpArgFloor)) return {static_cast<T>(kLogCap), T(0)};
  const double e = std::exp(-static_cast<double>(s));
  const double g = 1.0 - e;
  return {static_cast<T>(-std::log(g)), static_cast<T>(-e / g)};
}

}  // namespace detail

// h(a) = sqrt(||a||^2 + 1) - 1, interpolating from quadratic to linear.
template <class T>
T pseudo_huber(const std::vector<T>& a) {
  double sq = 0;
  for (T x : a) {
    if (!std::isfinite(static_cast<double>(x)))
      throw NumericError("pseudo_huber: non-finite input");
    sq += static_cast<double>(x) * x;
  }
  return static_cast<T>(std::sqrt(sq + 1.0) - 1.0);
}

// A(X) = sqrt(phi^2 + 1) - 1 elementwise; all entries are nonnegative.
template <class T>
Tensor<T> heatmap_A(const Tensor<T>& phi_out) {
  std::vector<T> out(phi_out.values());
  for (auto& v : out) {
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("heatmap_A: non-finite input");
    v = static_cast<T>(std::sqrt(static_cast<double>(v) * v + 1.0) - 1.0);
  }
  auto backprop = [](fcdd::detail::TensorImpl<T>& self) {
    auto& pin = *self.parents[0];
    pin.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = pin.values[i];
      pin.grad[i] += self.grad[i] * static_cast<T>(x / std::sqrt(x * x + 1.0));
    }
  };
  return fcdd::detail::make_node<T>(phi_out.shape(), std::move(out), {phi_out},
                                    backprop);
}

// ||A(X)||_1: the sample-level anomaly score.
template <class T>
T anomaly_score(const Tensor<T>& A) {
  double s = 0;
  for (T v : A.values()) s += v;
  return static_cast<T>(s);
}

// Mean over the batch of: nominal -> (1/uv)||A_i||_1,
// anomalous -> -log(1 - exp(-(1/uv)||A_i||_1)), clamped.
template <class T>
Tensor<T> fcdd_loss(const Tensor<T>& A, const std::vector<int>& labels) {
  if (A.rank() != 4 || A.dim(1) != 1)
    throw UsageError("fcdd_loss expects [b,1,u,v] heatmaps");
  const long b = A.dim(0);
  if (b == 0 || static_cast<long>(labels.size()) != b)
    throw UsageError("fcdd_loss: empty batch or label count mismatch");
  const long plane = A.dim(2) * A.dim(3);
  std::vector<T> dscore(b);  // dL/ds_i, where s_i is the per-sample mean
  double total = 0;
  for (long i = 0; i < b; ++i) {
    double s = 0;
    const T* p = A.values().data() + i * plane;
    for (long j = 0; j < plane; ++j) s += p[j];
    s /= plane;
    if (labels[i] == 0) {
      total += s;
      dscore[i] = T(1);
    } else {
      auto [val, der] = detail::anomalous_term(static_cast<T>(s));
      total += val;
      dscore[i] = der;
    }
  }
  total /= b;

  auto backprop = [b, plane, dscore](fcdd::detail::TensorImpl<T>& self) {
    auto& pA = *self.parents[0];
    pA.ensure_grad();
    const T g = self.grad[0];
    for (long i = 0; i < b; ++i) {
      const T factor = g * dscore[i] / static_cast<T>(b * plane);
      T* gp = pA.grad.data() + i * plane;
      for (long j = 0; j < plane; ++j) gp[j] += factor;
    }
  };
  return fcdd::detail::make_node<T>(Shape{1}, {static_cast<T>(total)}, {A},
                                    backprop);
}

// HSC objective on dense outputs [b,d]: nominal -> h(phi_i),
// anomalous -> -log(1 - exp(-h(phi_i))), same clamp as fcdd_loss.
template <class T>
Tensor<T> hsc_loss(const Tensor<T>& phi_out, const std::vector<int>& labels) {
  if (phi_out.rank() != 2) throw UsageError("hsc_loss expects [b,d] outputs");
  const long b = phi_out.dim(0), d = phi_out.dim(1);
  if (b == 0 || static_cast<long>(labels.size()) != b)
    throw UsageError("hsc_loss: empty batch or label count mismatch");
  std::vector<T> dh(b), hs(b);
  double total = 0;
  for (long i = 0; i < b; ++i) {
    double sq = 0;
    const T* p = phi_out.values().data() + i * d;
    for (long j = 0; j < d; ++j) sq += static_cast<double>(p[j]) * p[j];
    const double h = std::sqrt(sq + 1.0) - 1.0;
    hs[i] = static_cast<T>(h);
    if (labels[i] == 0) {
      total += h;
      dh[i] = T(1);
    } else {
      auto [val, der] = detail::anomalous_term(static_cast<T>(h));
      total += val;
      dh[i] = der;
    }
  }
  total /= b;

  auto backprop = [b, d, dh](fcdd::detail::TensorImpl<T>& self) {
    auto& pin = *self.parents[0];
    pin.ensure_grad();
    const T g = self.grad[0];
    for (long i = 0; i < b; ++i) {
      const T* p = pin.values.data() + i * d;
      double sq = 0;
      for (long j = 0; j < d; ++j) sq += static_cast<double>(p[j]) * p[j];
      const T inv = static_cast<T>(1.0 / std::sqrt(sq + 1.0));
      const T factor = g * dh[i] / static_cast<T>(b);
      for (long j = 0; j < d; ++j) pin.grad[i * d + j] += factor * p[j] * inv;
    }
  };
  return fcdd::detail::make_node<T>(Shape{1}, {static_cast<T>(total)},
                                    {phi_out}, backprop);
}

// Pixel-wise semi-supervised objective on full-resolution heatmaps.
// Per sample: (1/m) sum (1-Y_j) A'_j - log(1 - exp(-(1/m) sum Y_j A'_j)),
// with the log term omitted when the sample has no anomalous pixels.
template <class T>
Tensor<T> pixel_loss(const Tensor<T>& a_prime, const std::vector<T>& gt,
                     long b, long h, long w) {
  if (a_prime.numel() != b * h * w)
    throw UsageError("pixel_loss: heatmap extent mismatch");
  if (static_cast<long>(gt.size()) != b * h * w)
    throw UsageError("pixel_loss: ground-truth extent mismatch");
  const long m = h * w;
  std::vector<T> danom(b);
  double total = 0;
  for (long i = 0; i < b; ++i) {
    const T* ap = a_prime.values().data() + i * m;
    const T* yp = gt.data() + i * m;
    double nom = 0, anom = 0, ycount = 0;
    for (long j = 0; j < m; ++j) {
      if (yp[j] != T(0) && yp[j] != T(1))
        throw UsageError("pixel_loss: ground-truth maps must be binary");
      nom += (1.0 - yp[j]) * ap[j];
      anom += static_cast<double>(yp[j]) * ap[j];
      ycount += yp[j];
    }
    total += nom / m;
    if (ycount > 0) {
      auto [val, der] = detail::anomalous_term(static_cast<T>(anom / m));
      total += val;
      danom[i] = der;
    } else {
      danom[i] = T(0);
    }
  }
  total /= b;

  auto backprop = [b, m, gt, danom](fcdd::detail::TensorImpl<T>& self) {
    auto& pA = *self.parents[0];
    pA.ensure_grad();
    const T g = self.grad[0];
    for (long i = 0; i < b; ++i) {
      const T* yp = gt.data() + i * m;
      T* gp = pA.grad.data() + i * m;
      const T base = g / static_cast<T>(b * m);
      for (long j = 0; j < m; ++j)
        gp[j] += base * ((T(1) - yp[j]) + danom[i] * yp[j]);
    }
  };
  return fcdd::detail::make_node<T>(Shape{1}, {static_cast<T>(total)},
                                    {a_prime}, backprop);
}

}  // namespace fcdd
