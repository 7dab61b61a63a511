#include "nnkit/optim.hpp"

#include <cmath>

#include "orbits/errors.hpp"

namespace nnkit {

AdamState make_adam(const AdamConfig& config, std::span<Parameter* const> params) {
  AdamState s{config, 0, {}, {}};
  for (const Parameter* p : params) {
    s.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    s.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

double global_grad_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double adam_step(AdamState& state, std::span<Parameter* const> params) {
  if (state.m.size() != params.size()) throw orbits::ShapeMismatch("optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() || state.m[i].rows() != p.value.rows() ||
        state.m[i].cols() != p.value.cols())
      throw orbits::ShapeMismatch("optimizer: shape mismatch for " + p.name);
  }
  const AdamConfig& c = state.config;
  const double norm = global_grad_norm(params);
  const double clip = (c.max_grad_norm > 0.0 && norm > c.max_grad_norm) ? c.max_grad_norm / norm : 1.0;

  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const Matrix g = p.grad * clip;
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.value.array() -= c.learning_rate * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + c.epsilon);
  }
  return norm;
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace nnkit
