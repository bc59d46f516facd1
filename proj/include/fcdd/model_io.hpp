#pragma once

#include <string>
#include <type_traits>

#include "fcdd/checkpoint.hpp"
#include "fcdd/model.hpp"

namespace fcdd {

template <class T>
void save_model(FCNModel<T>& model, const std::string& path) {
  Checkpoint ckpt;
  const int dtype = std::is_same_v<T, float> ? 0 : 1;
  for (auto& p : model.parameters()) {
    CheckpointEntry e;
    e.shape = p.tensor.shape();
    e.dtype = dtype;
    e.values.assign(p.tensor.values().begin(), p.tensor.values().end());
    ckpt.emplace(p.name, std::move(e));
  }
  // Running batchnorm stats travel with the parameters.
  size_t bn_i = 0;
  const auto& layers = model.spec().layers;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != LayerKind::kBatchNorm) continue;
    const auto& state = model.bn_states()[bn_i++];
    const std::string prefix = "layer" + std::to_string(i);
    CheckpointEntry mean_e, var_e;
    mean_e.dtype = var_e.dtype = dtype;
    mean_e.shape = var_e.shape = {static_cast<long>(state.running_mean.size())};
    mean_e.values.assign(state.running_mean.begin(), state.running_mean.end());
    var_e.values.assign(state.running_var.begin(), state.running_var.end());
    ckpt.emplace(prefix + ".running_mean", std::move(mean_e));
    ckpt.emplace(prefix + ".running_var", std::move(var_e));
  }
  save_checkpoint(path, ckpt);
}

template <class T>
FCNModel<T> load_model(const ArchitectureSpec& spec, const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  FCNModel<T> model = FCNModel<T>::build(spec, 0);
  auto fetch = [&](const std::string& name) -> const CheckpointEntry& {
    auto it = ckpt.find(name);
    if (it == ckpt.end())
      throw LoadError("checkpoint is missing tensor '" + name + "': " + path);
    return it->second;
  };
  for (auto& p : model.parameters()) {
    const CheckpointEntry& e = fetch(p.name);
    if (e.shape != p.tensor.shape())
      throw LoadError("checkpoint tensor '" + p.name + "' has shape " +
                      shape_str(e.shape) + ", expected " +
                      shape_str(p.tensor.shape()));
    for (size_t i = 0; i < e.values.size(); ++i)
      p.tensor.values()[i] = static_cast<T>(e.values[i]);
  }
  size_t bn_i = 0;
  const auto& layers = model.spec().layers;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != LayerKind::kBatchNorm) continue;
    auto& state = model.bn_states()[bn_i++];
    const std::string prefix = "layer" + std::to_string(i);
    const CheckpointEntry& mean_e = fetch(prefix + ".running_mean");
    const CheckpointEntry& var_e = fetch(prefix + ".running_var");
    if (mean_e.values.size() != state.running_mean.size() ||
        var_e.values.size() != state.running_var.size())
      throw LoadError("checkpoint batchnorm stats mismatch at " + prefix);
    for (size_t j = 0; j < state.running_mean.size(); ++j) {
      state.running_mean[j] = static_cast<T>(mean_e.values[j]);
      state.running_var[j] = static_cast<T>(var_e.values[j]);
    }
  }
  return model;
}

}  // namespace fcdd
