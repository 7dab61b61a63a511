#include "nnkit/layers.hpp"

#include <cmath>

#include "orbits/errors.hpp"

namespace nnkit {

Dense::Dense(const std::string& name, int in, int out, Activation act)
    : weight(name + "/weight", Matrix::Zero(out, in)), bias(name + "/bias", Matrix::Zero(out, 1)), activation(act) {}

Var Dense::forward(Graph& g, Var x) {
  if (x.rows() != in_features())
    throw orbits::ShapeMismatch("dense " + weight.name + ": expected " + std::to_string(in_features()) +
                                " input rows, got " + std::to_string(x.rows()));
  Var y = add_bias(matmul(g.param(weight), x), g.param(bias));
  switch (activation) {
    case Activation::ReLU: return relu(y);
    case Activation::Sigmoid: return sigmoid(y);
    case Activation::None: break;
  }
  return y;
}

GruCell::GruCell(const std::string& name, int input_size, int hidden_size) {
  const auto w = [&](const char* tag, int cols) { return Parameter(name + "/" + tag, Matrix::Zero(hidden_size, cols)); };
  w_ir = w("w_ir", input_size);
  w_iz = w("w_iz", input_size);
  w_in = w("w_in", input_size);
  w_hr = w("w_hr", hidden_size);
  w_hz = w("w_hz", hidden_size);
  w_hn = w("w_hn", hidden_size);
  b_ir = w("b_ir", 1);
  b_iz = w("b_iz", 1);
  b_in = w("b_in", 1);
  b_hr = w("b_hr", 1);
  b_hz = w("b_hz", 1);
  b_hn = w("b_hn", 1);
}

Var GruCell::step(Graph& g, Var x, Var h) {
  if (x.rows() != input_size() || h.rows() != hidden_size() || x.cols() != h.cols())
    throw orbits::ShapeMismatch("gru step: inconsistent input/hidden shapes");
  auto lin = [&](Parameter& w, Parameter& b, Var in) { return add_bias(matmul(g.param(w), in), g.param(b)); };
  Var r = sigmoid(add(lin(w_ir, b_ir, x), lin(w_hr, b_hr, h)));
  Var z = sigmoid(add(lin(w_iz, b_iz, x), lin(w_hz, b_hz, h)));
  Var n = tanh(add(lin(w_in, b_in, x), mul(r, lin(w_hn, b_hn, h))));
  // (1 - z) * n + z * h  ==  n + z * (h - n)
  return add(n, mul(z, sub(h, n)));
}

std::vector<Parameter*> GruCell::parameters() {
  return {&w_ir, &w_iz, &w_in, &w_hr, &w_hz, &w_hn, &b_ir, &b_iz, &b_in, &b_hr, &b_hz, &b_hn};
}

void xavier_uniform(Matrix& w, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  // Row-major fill order so the draw sequence is independent of storage order.
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
}

void init_dense(Dense& d, std::mt19937_64& rng) {
  xavier_uniform(d.weight.value, rng);
  d.bias.value.setZero();
}

void init_gru(GruCell& c, std::mt19937_64& rng) {
  for (Parameter* p : {&c.w_ir, &c.w_iz, &c.w_in, &c.w_hr, &c.w_hz, &c.w_hn}) xavier_uniform(p->value, rng);
  for (Parameter* p : {&c.b_ir, &c.b_iz, &c.b_in, &c.b_hr, &c.b_hz, &c.b_hn}) p->value.setZero();
}

}  // namespace nnkit
