#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimmpf/tensor.hpp"

namespace dimmpf {

class Tape;

// Handle to a recorded value. Cheap to copy; owns nothing.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
  double scalar() const;
};

enum class OpKind : uint8_t {
  Constant,
  Param,
  Add,
  Sub,
  Mul,
  Div,
  AddN,
  Exp,
  Log,
  Tanh,
  Sigmoid,
  Abs,
  Sqrt,
  MaxConst,  // elementwise max(x, c)
  Sum,       // axis 0: all -> scalar, 1: over rows -> (cols x 1), 2: over cols -> (rows x 1)
  MatMul,
  GatherRows,   // out[i, :] = in[idx[i], :]
  GatherColsT,  // out[i, j] = in[j, idx[i]]
  Gather2D,     // out[i] = in[rows[i], cols[i]]
  SliceCol,     // out = in[:, c]
  ConcatRows,
  Reparam,  // mean + scale * noise, noise held as a constant
  StopGrad,
  Mlp,  // fused relu(relu(x w1^T + b1) w2^T + b2) w3 + b3 over a column of inputs
};

const char* op_name(OpKind k);

struct Node {
  OpKind kind;
  int a = -1;
  int b = -1;
  std::vector<int> many;  // AddN / ConcatRows inputs
  std::vector<int> idx;   // gather indices / SliceCol column
  std::vector<int> idx2;  // Gather2D second index
  Tensor val;
  Tensor aux;  // Reparam noise
  bool trans_a = false;
  bool trans_b = false;
  int axis = 0;
  double cval = 0.0;
  bool requires_grad = false;
  int param_slot = -1;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Append-only reverse-mode tape. Single-threaded by construction; one tape per
// trajectory. Nodes are recorded in topological order, so backward() is a
// single reverse sweep.
class Tape {
 public:
  Var constant(Tensor v);
  Var constant(double v) { return constant(Tensor::scalar(v)); }
  Var param(Tensor v, int slot);

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
  const Tensor& value(int i) const { return nodes_[static_cast<size_t>(i)].val; }

  // Runs the reverse sweep from a scalar root. Adjoints from any previous
  // sweep are discarded, so one tape supports several roots.
  void backward(Var root);

  const Tensor& adjoint(Var v) const;
  bool has_adjoint(Var v) const;

  // Adds d(root)/d(param) into flat[offset(slot)...] for every Param node, in
  // node order. `offsets` maps a param slot to its position in `flat`.
  void accumulate_param_grads(std::span<const size_t> offsets, std::span<double> flat) const;

  // --- recorded operations ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var add_n(std::span<const Var> xs);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var abs(Var a);
  Var sqrt(Var a);
  Var max_const(Var a, double c);
  Var sum(Var a);         // full reduction
  Var sum_rows(Var a);    // (r x c) -> (c x 1)
  Var sum_cols(Var a);    // (r x c) -> (r x 1)
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var matvec(Var m, Var v) { return matmul(m, v); }
  Var gather_rows(Var a, std::vector<int> idx);
  Var gather_cols_t(Var a, std::vector<int> idx);
  Var gather2d(Var a, std::vector<int> rows, std::vector<int> cols);
  Var slice_col(Var a, int c);
  Var concat_rows(std::span<const Var> xs);
  Var reparam(Var mean, Var scale, Tensor noise);
  Var stop_gradient(Var a);
  // x (S x 1), w1 (h x 1), b1 (1 x h), w2 (h x h), b2 (1 x h), w3 (h x 1),
  // b3 (1 x 1) -> (S x 1)
  Var mlp(Var x, Var w1, Var b1, Var w2, Var b2, Var w3, Var b3);

 private:
  friend struct Var;
  Var push(Node n);
  void check(Var v) const;
  void backward_node(int i);
  Tensor& adj(int i);

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
  std::vector<uint8_t> has_adj_;
};

}  // namespace dimmpf
