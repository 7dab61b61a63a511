#pragma once

#include <random>
#include <string>
#include <vector>

#include "nnkit/graph.hpp"

namespace nnkit {

enum class Activation { None, ReLU, Sigmoid };

// y = act(W x + b); inputs are column batches (in x batch).
struct Dense {
  Parameter weight;  // out x in
  Parameter bias;    // out x 1
  Activation activation = Activation::None;

  Dense() = default;
  Dense(const std::string& name, int in, int out, Activation act);

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }
  Var forward(Graph& g, Var x);
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

// PyTorch-convention GRU cell:
//   r = s(W_ir x + b_ir + W_hr h + b_hr)
//   z = s(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//   h' = (1 - z) * n + z * h
struct GruCell {
  Parameter w_ir, w_iz, w_in, w_hr, w_hz, w_hn;
  Parameter b_ir, b_iz, b_in, b_hr, b_hz, b_hn;

  GruCell() = default;
  GruCell(const std::string& name, int input_size, int hidden_size);

  int input_size() const { return static_cast<int>(w_ir.value.cols()); }
  int hidden_size() const { return static_cast<int>(w_hr.value.rows()); }
  Var step(Graph& g, Var x, Var h);
  std::vector<Parameter*> parameters();
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void xavier_uniform(Matrix& w, std::mt19937_64& rng);
void init_dense(Dense& d, std::mt19937_64& rng);
void init_gru(GruCell& c, std::mt19937_64& rng);

}  // namespace nnkit
