#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

// Tape-based reverse-mode differentiation over dense column-major matrices.
// Nodes are appended in evaluation order, so reverse insertion order is a
// valid reverse topological order.
namespace nnkit {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

// Lightweight handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Var constant(Matrix value);
  Var param(Parameter& p);
  // Generic node; `backward` reads grad(self) and accumulates into inputs.
  Var record(Matrix value, std::vector<int> inputs, BackwardFn backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool has_grad(int id) const { return nodes_[id].has_grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  void accumulate(int id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.has_grad) n.grad += g;
    else { n.grad = g; n.has_grad = true; }
  }

  // Reverse sweep from a 1x1 node; parameter gradients are added to
  // Parameter::grad (callers zero them between steps).
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Discrete record of every non-smooth branch taken during the forward
  // pass (ReLU masks, softening switches, visibility). Finite-difference
  // probes whose signature differs straddle a kink.
  std::vector<std::uint8_t>& signature() { return signature_; }
  const std::vector<std::uint8_t>& signature() const { return signature_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* parameter = nullptr;
  };
  std::vector<Node> nodes_;
  std::vector<std::uint8_t> signature_;
};

// ---- elementary operations -------------------------------------------------
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                  // element-wise
Var add_bias(Var x, Var bias);          // bias (rows x 1) broadcast over columns
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
Var mse(Var a, Var b);                  // mean((a-b)^2)
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, Eigen::Index first, Eigen::Index count);
Var reshape(Var x, Eigen::Index rows, Eigen::Index cols);  // column-major
Var mask(Var x, const Matrix& m);      // element-wise product with a constant

}  // namespace nnkit
