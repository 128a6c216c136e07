#include "credence/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace credence {

void adam_step(ParameterMap& params, AdamState& state, float lr,
               float weight_decay) {
  if (lr <= 0.0f) {
    throw std::invalid_argument("adam_step: learning rate must be positive");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.data().size(), 0.0f);
      state.v[i].assign(params[i].tensor.data().size(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state sized for " +
                                std::to_string(state.m.size()) +
                                " parameters, got " +
                                std::to_string(params.size()));
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw std::invalid_argument("adam_step: parameter '" + p.name +
                                  "' has no gradient");
    }
  }

  state.t += 1;
  const float bc1 = 1.0f - std::pow(state.beta1, static_cast<float>(state.t));
  const float bc2 = 1.0f - std::pow(state.beta2, static_cast<float>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].tensor.mutable_data();
    const auto& g = params[i].tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      if (weight_decay != 0.0f) theta[j] -= lr * weight_decay * theta[j];
      m[j] = state.beta1 * m[j] + (1.0f - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0f - state.beta2) * g[j] * g[j];
      const float m_hat = m[j] / bc1;
      const float v_hat = v[j] / bc2;
      theta[j] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace credence
