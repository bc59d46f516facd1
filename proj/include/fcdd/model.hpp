#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fcdd/arch.hpp"
#include "fcdd/ops.hpp"
#include "fcdd/rng.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// A fully convolutional model: parameter tensors plus batchnorm running
// state, laid out parallel to the spec's layer list. The bias of the last
// convolution is the hypersphere center; it is the only unconstrained
// additive term of the network.
template <class T>
class FCNModel {
 public:
  FCNModel() = default;

  static FCNModel build(ArchitectureSpec spec, std::uint64_t seed) {
    spec.validate();
    FCNModel m;
    m.spec_ = std::move(spec);
    Rng rng(seed);
    long channels = m.spec_.in_channels;
    for (const LayerSpec& l : m.spec_.layers) {
      if (l.kind == LayerKind::kConv) {
        const long fan_in = l.in_channels * l.kernel * l.kernel;
        const T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<T> w(static_cast<size_t>(l.out_channels * l.in_channels *
                                             l.kernel * l.kernel));
        for (auto& x : w) x = static_cast<T>(dist(rng));
        m.weights_.push_back(Tensor<T>::from(
            {l.out_channels, l.in_channels, l.kernel, l.kernel}, std::move(w),
            true));
        m.biases_.push_back(Tensor<T>::zeros({l.out_channels}, true));
        channels = l.out_channels;
      } else if (l.kind == LayerKind::kBatchNorm) {
        m.gammas_.push_back(Tensor<T>::filled({channels}, T(1), true));
        m.betas_.push_back(Tensor<T>::zeros({channels}, true));
        m.bn_states_.emplace_back(channels);
      }
    }
    return m;
  }

  const ArchitectureSpec& spec() const { return spec_; }

  // phi(X): [b,c,h,w] -> [b,1,u,v]. Train mode updates batchnorm stats.
  Tensor<T> forward(const Tensor<T>& batch, Mode mode) {
    if (batch.rank() != 4 || batch.dim(1) != spec_.in_channels)
      throw UsageError("forward: input shape " + shape_str(batch.shape()) +
                       " does not match architecture input channels " +
                       std::to_string(spec_.in_channels));
    Tensor<T> x = batch;
    size_t conv_i = 0, bn_i = 0;
    for (const LayerSpec& l : spec_.layers) {
      switch (l.kind) {
        case LayerKind::kConv:
          x = conv2d(x, weights_[conv_i], biases_[conv_i], l.stride, l.padding);
          ++conv_i;
          break;
        case LayerKind::kMaxPool:
          x = maxpool2d(x, l.kernel, l.stride);
          break;
        case LayerKind::kBatchNorm:
          x = batchnorm2d(x, gammas_[bn_i], betas_[bn_i], bn_states_[bn_i], mode);
          ++bn_i;
          break;
        case LayerKind::kActivation:
          x = activation(x, static_cast<T>(l.alpha));
          break;
      }
    }
    return x;
  }

  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> out;
    size_t conv_i = 0, bn_i = 0;
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
      const std::string prefix = "layer" + std::to_string(i);
      switch (spec_.layers[i].kind) {
        case LayerKind::kConv:
          out.push_back({prefix + ".weight", weights_[conv_i]});
          out.push_back({prefix + ".bias", biases_[conv_i]});
          ++conv_i;
          break;
        case LayerKind::kBatchNorm:
          out.push_back({prefix + ".gamma", gammas_[bn_i]});
          out.push_back({prefix + ".beta", betas_[bn_i]});
          ++bn_i;
          break;
        default:
          break;
      }
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  std::vector<BatchNormState<T>>& bn_states() { return bn_states_; }
  const std::vector<BatchNormState<T>>& bn_states() const { return bn_states_; }
  std::vector<Tensor<T>>& conv_weights() { return weights_; }
  std::vector<Tensor<T>>& conv_biases() { return biases_; }
  Tensor<T>& final_bias() { return biases_.back(); }

 private:
  ArchitectureSpec spec_;
  std::vector<Tensor<T>> weights_, biases_;  // per conv layer
  std::vector<Tensor<T>> gammas_, betas_;    // per batchnorm layer
  std::vector<BatchNormState<T>> bn_states_;
};

}  // namespace fcdd
