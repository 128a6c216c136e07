#pragma once

#include <cstdint>
#include <vector>

#include "credence/tensor.hpp"

namespace credence {

// Per-parameter first/second moment estimates plus the shared step counter.
// Lazily sized to the parameter set on the first step.
struct AdamState {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  std::int64_t t = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

// Bias-corrected Adam update over every parameter in the map. Decoupled
// weight decay (theta -= lr * lambda * theta) is applied before the Adam
// delta. Every parameter must carry a gradient.
void adam_step(ParameterMap& params, AdamState& state, float lr,
               float weight_decay = 0.0f);

}  // namespace credence
