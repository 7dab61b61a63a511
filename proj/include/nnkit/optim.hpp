#pragma once

#include <span>
#include <vector>

#include "nnkit/graph.hpp"

namespace nnkit {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_grad_norm = 0.0;  // global-norm clipping; 0 disables
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

AdamState make_adam(const AdamConfig& config, std::span<Parameter* const> params);

double global_grad_norm(std::span<Parameter* const> params);

// One bias-corrected adaptive-moment update from each Parameter::grad.
// Returns the pre-clipping global gradient norm.
double adam_step(AdamState& state, std::span<Parameter* const> params);

void zero_grads(std::span<Parameter* const> params);

}  // namespace nnkit
