#include "nnkit/graph.hpp"

#include <string>

#include "orbits/errors.hpp"

namespace nnkit {

using orbits::NonScalarLoss;
using orbits::ShapeMismatch;

const Matrix& Var::value() const { return graph->value(id); }
const Matrix& Var::grad() const { return graph->grad(id); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw NonScalarLoss("value is not a scalar");
  return v(0, 0);
}

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.parameter = &p;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Matrix value, std::vector<int> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

void Graph::backward(Var loss) {
  if (loss.graph != this) throw orbits::ValidationError("loss belongs to a different graph");
  if (nodes_[loss.id].value.size() != 1) throw NonScalarLoss("backward requires a 1x1 loss");
  for (auto& n : nodes_) n.has_grad = false;
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Matrix::Ones(1, 1);
  nodes_[loss.id].has_grad = true;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.parameter != nullptr) {
      n.parameter->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                        " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix &A = a.value(), &B = b.value();
  if (A.cols() != B.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  Graph& g = *a.graph;
  const int ia = a.id, ib = b.id;
  return g.record(A * B, {ia, ib}, [ia, ib](Graph& gr, int self) {
    const Matrix& G = gr.grad(self);
    if (gr.requires_grad(ia)) gr.accumulate_expr(ia, G * gr.value(ib).transpose());
    if (gr.requires_grad(ib)) gr.accumulate_expr(ib, gr.value(ia).transpose() * G);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  const int ia = a.id, ib = b.id;
  return a.graph->record(a.value() + b.value(), {ia, ib}, [ia, ib](Graph& gr, int self) {
    gr.accumulate(ia, gr.grad(self));
    gr.accumulate(ib, gr.grad(self));
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id, ib = b.id;
  return a.graph->record(a.value() - b.value(), {ia, ib}, [ia, ib](Graph& gr, int self) {
    gr.accumulate(ia, gr.grad(self));
    gr.accumulate_expr(ib, -gr.grad(self));
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  const int ia = a.id, ib = b.id;
  return a.graph->record(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Graph& gr, int self) {
    const Matrix& G = gr.grad(self);
    if (gr.requires_grad(ia)) gr.accumulate_expr(ia, G.cwiseProduct(gr.value(ib)));
    if (gr.requires_grad(ib)) gr.accumulate_expr(ib, G.cwiseProduct(gr.value(ia)));
  });
}

Var add_bias(Var x, Var bias) {
  const Matrix &X = x.value(), &b = bias.value();
  if (b.cols() != 1 || b.rows() != X.rows()) throw ShapeMismatch("add_bias: bias must be rows x 1");
  const int ix = x.id, ib = bias.id;
  Matrix out = X.colwise() + b.col(0);
  return x.graph->record(std::move(out), {ix, ib}, [ix, ib](Graph& gr, int self) {
    gr.accumulate(ix, gr.grad(self));
    if (gr.requires_grad(ib)) gr.accumulate_expr(ib, gr.grad(self).rowwise().sum());
  });
}

Var scale(Var x, double c) {
  const int ix = x.id;
  return x.graph->record(x.value() * c, {ix}, [ix, c](Graph& gr, int self) { gr.accumulate_expr(ix, gr.grad(self) * c); });
}

Var add_scalar(Var x, double c) {
  const int ix = x.id;
  return x.graph->record((x.value().array() + c).matrix(), {ix},
                         [ix](Graph& gr, int self) { gr.accumulate(ix, gr.grad(self)); });
}

Var relu(Var x) {
  const Matrix& X = x.value();
  auto& sig = x.graph->signature();
  for (Eigen::Index i = 0; i < X.size(); ++i) sig.push_back(X.data()[i] > 0.0 ? 1 : 0);
  const int ix = x.id;
  return x.graph->record(X.cwiseMax(0.0), {ix}, [ix](Graph& gr, int self) {
    const Matrix& X = gr.value(ix);
    gr.accumulate_expr(ix, (X.array() > 0.0).select(gr.grad(self), 0.0));
  });
}

Var sigmoid(Var x) {
  const int ix = x.id;
  Matrix y = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  return x.graph->record(std::move(y), {ix}, [ix](Graph& gr, int self) {
    const auto y = gr.value(self).array();
    gr.accumulate_expr(ix, (gr.grad(self).array() * y * (1.0 - y)).matrix());
  });
}

Var tanh(Var x) {
  const int ix = x.id;
  return x.graph->record(x.value().array().tanh().matrix(), {ix}, [ix](Graph& gr, int self) {
    const auto y = gr.value(self).array();
    gr.accumulate_expr(ix, (gr.grad(self).array() * (1.0 - y * y)).matrix());
  });
}

Var square(Var x) {
  const int ix = x.id;
  return x.graph->record(x.value().array().square().matrix(), {ix}, [ix](Graph& gr, int self) {
    gr.accumulate_expr(ix, (2.0 * gr.grad(self).array() * gr.value(ix).array()).matrix());
  });
}

Var sum(Var x) {
  const int ix = x.id;
  Matrix s(1, 1);
  s(0, 0) = x.value().sum();
  return x.graph->record(std::move(s), {ix}, [ix](Graph& gr, int self) {
    const Matrix& X = gr.value(ix);
    gr.accumulate_expr(ix, Matrix::Constant(X.rows(), X.cols(), gr.grad(self)(0, 0)));
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeMismatch("mean of an empty matrix");
  return scale(sum(x), 1.0 / n);
}

Var mse(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mse");
  const int ia = a.id, ib = b.id;
  const Matrix diff = a.value() - b.value();
  const double n = static_cast<double>(diff.size());
  if (n == 0) throw ShapeMismatch("mse of empty matrices");
  Matrix s(1, 1);
  s(0, 0) = diff.squaredNorm() / n;
  return a.graph->record(std::move(s), {ia, ib}, [ia, ib, n](Graph& gr, int self) {
    const double c = 2.0 * gr.grad(self)(0, 0) / n;
    const Matrix d = gr.value(ia) - gr.value(ib);
    if (gr.requires_grad(ia)) gr.accumulate_expr(ia, c * d);
    if (gr.requires_grad(ib)) gr.accumulate_expr(ib, -c * d);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
  Graph& g = *parts.front().graph;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
    ids.push_back(p.id);
    offsets.push_back(rows);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  return g.record(std::move(out), ids, [ids, offsets](Graph& gr, int self) {
    const Matrix& G = gr.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (gr.requires_grad(ids[i])) gr.accumulate_expr(ids[i], G.middleRows(offsets[i], gr.value(ids[i]).rows()));
  });
}

Var slice_rows(Var x, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > x.rows()) throw ShapeMismatch("slice_rows out of range");
  const int ix = x.id;
  return x.graph->record(x.value().middleRows(first, count), {ix}, [ix, first, count](Graph& gr, int self) {
    const Matrix& X = gr.value(ix);
    Matrix full = Matrix::Zero(X.rows(), X.cols());
    full.middleRows(first, count) = gr.grad(self);
    gr.accumulate(ix, full);
  });
}

Var reshape(Var x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.value().size()) throw ShapeMismatch("reshape changes element count");
  const int ix = x.id;
  const Eigen::Index r0 = x.rows(), c0 = x.cols();
  Matrix out = x.value().reshaped(rows, cols);
  return x.graph->record(std::move(out), {ix}, [ix, r0, c0](Graph& gr, int self) {
    gr.accumulate_expr(ix, gr.grad(self).reshaped(r0, c0));
  });
}

Var mask(Var x, const Matrix& m) {
  require_same_shape(x.value(), m, "mask");
  const int ix = x.id;
  return x.graph->record(x.value().cwiseProduct(m), {ix},
                         [ix, m](Graph& gr, int self) { gr.accumulate_expr(ix, gr.grad(self).cwiseProduct(m)); });
}

}  // namespace nnkit
