#pragma once

#include <cmath>
#include <map>
#include <string>

#include "hsipaws/tensor.hpp"

namespace hsipaws {

enum class OptimizerKind { sgd, lars };

// Shared state for the two update rules. Velocity buffers are created lazily
// per parameter and mirror the parameter shapes.
template <typename S>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  S lr = S(0.01);
  S momentum = S(0.9);
  S weight_decay = S(0);
  S trust_coefficient = S(0.001);  // LARS only
  std::map<std::string, Tensor<S>> velocity;

  static OptimizerState sgd(S lr = S(0.01), S momentum = S(0.9), S weight_decay = S(0)) {
    OptimizerState s;
    s.kind = OptimizerKind::sgd;
    s.lr = lr;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    return s;
  }

  static OptimizerState lars(S lr = S(0.1), S momentum = S(0.9), S weight_decay = S(1e-6),
                             S trust = S(0.001)) {
    OptimizerState s;
    s.kind = OptimizerKind::lars;
    s.lr = lr;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    s.trust_coefficient = trust;
    return s;
  }

  void validate() const {
    if (lr < S(0)) throw ConfigError("optimizer: learning rate must be >= 0");
    if (momentum < S(0) || momentum >= S(1)) throw ConfigError("optimizer: momentum must be in [0,1)");
    if (weight_decay < S(0)) throw ConfigError("optimizer: weight decay must be >= 0");
    if (trust_coefficient <= S(0)) throw ConfigError("optimizer: trust coefficient must be > 0");
  }

  Tensor<S>& velocity_for(const std::string& name, const Tensor<S>& value) {
    auto it = velocity.find(name);
    if (it == velocity.end()) it = velocity.emplace(name, Tensor<S>::zeros(value.shape())).first;
    if (!it->second.same_shape(value))
      throw StateError("optimizer velocity shape mismatch for parameter " + name);
    return it->second;
  }
};

using OptimizerStated = OptimizerState<double>;

namespace detail {

// v <- mu*v + (g + wd*w); w <- w - lr*v
template <typename S>
void sgd_update(Tensor<S>& w, const Tensor<S>& g, Tensor<S>& v, S lr, S mu, S wd) {
  v.storage() = mu * v.storage() + (g.storage() + wd * w.storage());
  w.storage() -= lr * v.storage();
}

}  // namespace detail

template <typename S>
void sgd_step(ParamStore<S>& params, OptimizerState<S>& state) {
  for (auto& [name, entry] : params) {
    if (!entry.grad.same_shape(entry.value)) throw StateError("sgd_step: grad shape mismatch for " + name);
    auto& v = state.velocity_for(name, entry.value);
    detail::sgd_update(entry.value, entry.grad, v, state.lr, state.momentum, state.weight_decay);
    entry.grad.set_zero();
  }
}

// Layer-wise trust-ratio scaling. For adapted parameters:
//   lambda = trust * ||w|| / (||g|| + wd*||w|| + 1e-9)
//   v <- mu*v + lambda*lr*(g + wd*w); w <- w - v
// Non-adapted parameters (biases, 1-D tensors) fall back to the sgd rule.
template <typename S>
void lars_step(ParamStore<S>& params, OptimizerState<S>& state) {
  for (auto& [name, entry] : params) {
    if (!entry.grad.same_shape(entry.value)) throw StateError("lars_step: grad shape mismatch for " + name);
    auto& v = state.velocity_for(name, entry.value);
    if (!entry.lars_adapt) {
      detail::sgd_update(entry.value, entry.grad, v, state.lr, state.momentum, state.weight_decay);
    } else {
      const S w_norm = std::sqrt(static_cast<S>(entry.value.storage().square().sum()));
      const S g_norm = std::sqrt(static_cast<S>(entry.grad.storage().square().sum()));
      const S lambda =
          state.trust_coefficient * w_norm / (g_norm + state.weight_decay * w_norm + S(1e-9));
      v.storage() = state.momentum * v.storage() +
                    lambda * state.lr * (entry.grad.storage() + state.weight_decay * entry.value.storage());
      entry.value.storage() -= v.storage();
    }
    entry.grad.set_zero();
  }
}

template <typename S>
void optimizer_step(ParamStore<S>& params, OptimizerState<S>& state) {
  if (state.kind == OptimizerKind::lars)
    lars_step(params, state);
  else
    sgd_step(params, state);
}

}  // namespace hsipaws
