#include "dimmpf/tape.hpp"

#include <cmath>
#include <cstring>

namespace dimmpf {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Constant: return "constant";
    case OpKind::Param: return "param";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::AddN: return "add_n";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Abs: return "abs";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::MaxConst: return "max";
    case OpKind::Sum: return "sum";
    case OpKind::MatMul: return "matvec";
    case OpKind::GatherRows: return "gather-by-index";
    case OpKind::GatherColsT: return "gather-cols";
    case OpKind::Gather2D: return "gather-2d";
    case OpKind::SliceCol: return "slice-col";
    case OpKind::ConcatRows: return "concat-rows";
    case OpKind::Reparam: return "gaussian-reparam";
    case OpKind::StopGrad: return "stop-gradient";
    case OpKind::Mlp: return "mlp";
  }
  return "?";
}

const Tensor& Var::val() const {
  if (!valid()) throw std::invalid_argument("Var: unbound handle");
  return tape->value(id);
}

double Var::scalar() const {
  const Tensor& t = val();
  if (!t.is_scalar()) throw std::invalid_argument("Var: not a scalar");
  return t.d[0];
}

namespace {

// Broadcast pattern of b relative to a (a always carries the output shape).
enum class Bc { Same, Scalar, Col, Row };

Bc classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bc::Same;
  if (b.is_scalar()) return Bc::Scalar;
  if (b.cols == 1 && b.rows == a.rows) return Bc::Col;
  if (b.rows == 1 && b.cols == a.cols) return Bc::Row;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                              std::to_string(b.rows) + "x" + std::to_string(b.cols));
}

double bval(const Tensor& b, Bc bc, int i, int j, int cols) {
  switch (bc) {
    case Bc::Same: return b.d[static_cast<size_t>(i) * cols + j];
    case Bc::Scalar: return b.d[0];
    case Bc::Col: return b.d[static_cast<size_t>(i)];
    case Bc::Row: return b.d[static_cast<size_t>(j)];
  }
  return 0.0;
}

void bacc(Tensor& gb, Bc bc, int i, int j, int cols, double g) {
  switch (bc) {
    case Bc::Same: gb.d[static_cast<size_t>(i) * cols + j] += g; break;
    case Bc::Scalar: gb.d[0] += g; break;
    case Bc::Col: gb.d[static_cast<size_t>(i)] += g; break;
    case Bc::Row: gb.d[static_cast<size_t>(j)] += g; break;
  }
}

}  // namespace

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::check(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= size())
    throw std::invalid_argument("Tape: operand is not recorded on this tape");
}

Var Tape::constant(Tensor v) {
  Node n;
  n.kind = OpKind::Constant;
  n.val = std::move(v);
  n.requires_grad = false;
  return push(std::move(n));
}

Var Tape::param(Tensor v, int slot) {
  Node n;
  n.kind = OpKind::Param;
  n.val = std::move(v);
  n.requires_grad = true;
  n.param_slot = slot;
  return push(std::move(n));
}

// --- elementwise binary ---

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  const Tensor &ta = value(a.id), &tb = value(b.id);
  // put the larger operand first so broadcasting is one-sided
  if (!ta.same_shape(tb) && ta.size() < tb.size()) return add(b, a);
  Bc bc = classify(ta, tb, "add");
  Node n;
  n.kind = OpKind::Add;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (int i = 0; i < ta.rows; ++i)
    for (int j = 0; j < ta.cols; ++j)
      n.val.at(i, j) = ta.at(i, j) + bval(tb, bc, i, j, ta.cols);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  const Tensor &ta = value(a.id), &tb = value(b.id);
  if (!ta.same_shape(tb) && ta.size() < tb.size())
    throw std::invalid_argument("sub: broadcast only over the right operand");
  Bc bc = classify(ta, tb, "sub");
  Node n;
  n.kind = OpKind::Sub;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (int i = 0; i < ta.rows; ++i)
    for (int j = 0; j < ta.cols; ++j)
      n.val.at(i, j) = ta.at(i, j) - bval(tb, bc, i, j, ta.cols);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor &ta = value(a.id), &tb = value(b.id);
  if (!ta.same_shape(tb) && ta.size() < tb.size()) return mul(b, a);
  Bc bc = classify(ta, tb, "mul");
  Node n;
  n.kind = OpKind::Mul;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (int i = 0; i < ta.rows; ++i)
    for (int j = 0; j < ta.cols; ++j)
      n.val.at(i, j) = ta.at(i, j) * bval(tb, bc, i, j, ta.cols);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::div(Var a, Var b) {
  check(a);
  check(b);
  const Tensor &ta = value(a.id), &tb = value(b.id);
  if (!ta.same_shape(tb) && ta.size() < tb.size())
    throw std::invalid_argument("div: broadcast only over the denominator");
  Bc bc = classify(ta, tb, "div");
  for (double v : tb.d)
    if (v == 0.0)
      throw DomainError("div: zero denominator at node " + std::to_string(size()));
  Node n;
  n.kind = OpKind::Div;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor(ta.rows, ta.cols);
  for (int i = 0; i < ta.rows; ++i)
    for (int j = 0; j < ta.cols; ++j)
      n.val.at(i, j) = ta.at(i, j) / bval(tb, bc, i, j, ta.cols);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::add_n(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: no inputs");
  Node n;
  n.kind = OpKind::AddN;
  const Tensor& t0 = xs[0].val();
  n.val = Tensor(t0.rows, t0.cols);
  n.many.reserve(xs.size());
  for (Var v : xs) {
    check(v);
    const Tensor& t = value(v.id);
    if (!t.same_shape(t0)) throw std::invalid_argument("add_n: shape mismatch");
    for (int i = 0; i < t.size(); ++i) n.val.d[i] += t.d[i];
    n.many.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  return push(std::move(n));
}

// --- elementwise unary ---

namespace {
template <class F>
Tensor map(const Tensor& t, F f) {
  Tensor o(t.rows, t.cols);
  for (int i = 0; i < t.size(); ++i) o.d[i] = f(t.d[i]);
  return o;
}
}  // namespace

Var Tape::exp(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::Exp;
  n.a = a.id;
  n.val = map(value(a.id), [](double x) { return std::exp(x); });
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::log(Var a) {
  check(a);
  for (double v : value(a.id).d)
    if (v <= 0.0)
      throw DomainError("log: nonpositive argument at node " + std::to_string(size()));
  Node n;
  n.kind = OpKind::Log;
  n.a = a.id;
  n.val = map(value(a.id), [](double x) { return std::log(x); });
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::Tanh;
  n.a = a.id;
  n.val = map(value(a.id), [](double x) { return std::tanh(x); });
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::Sigmoid;
  n.a = a.id;
  n.val = map(value(a.id), [](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::abs(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::Abs;
  n.a = a.id;
  n.val = map(value(a.id), [](double x) { return std::fabs(x); });
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sqrt(Var a) {
  check(a);
  for (double v : value(a.id).d)
    if (v < 0.0)
      throw DomainError("sqrt: negative argument at node " + std::to_string(size()));
  Node n;
  n.kind = OpKind::Sqrt;
  n.a = a.id;
  n.val = map(value(a.id), [](double x) { return std::sqrt(x); });
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::max_const(Var a, double c) {
  check(a);
  Node n;
  n.kind = OpKind::MaxConst;
  n.a = a.id;
  n.cval = c;
  n.val = map(value(a.id), [c](double x) { return x > c ? x : c; });
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

// --- reductions ---

Var Tape::sum(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::Sum;
  n.a = a.id;
  n.axis = 0;
  double acc = 0.0;
  for (double v : value(a.id).d) acc += v;
  n.val = Tensor::scalar(acc);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sum_rows(Var a) {
  check(a);
  const Tensor& t = value(a.id);
  Node n;
  n.kind = OpKind::Sum;
  n.a = a.id;
  n.axis = 1;
  n.val = Tensor(t.cols, 1);
  for (int i = 0; i < t.rows; ++i)
    for (int j = 0; j < t.cols; ++j) n.val.d[j] += t.at(i, j);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sum_cols(Var a) {
  check(a);
  const Tensor& t = value(a.id);
  Node n;
  n.kind = OpKind::Sum;
  n.a = a.id;
  n.axis = 2;
  n.val = Tensor(t.rows, 1);
  for (int i = 0; i < t.rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < t.cols; ++j) acc += t.at(i, j);
    n.val.d[i] = acc;
  }
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

// --- structural ---

namespace {
// C (m x p) += A' (m x k) B' (k x p) with the flags resolving row/column
// access; loops specialized so the hot paths vectorize
void matmul_acc(const Tensor& ta, const Tensor& tb, bool trans_a, bool trans_b, int m, int k,
                int p, Tensor& out) {
  if (!trans_a && !trans_b) {
    for (int i = 0; i < m; ++i) {
      const double* arow = ta.data() + static_cast<size_t>(i) * k;
      double* orow = out.data() + static_cast<size_t>(i) * p;
      for (int kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = tb.data() + static_cast<size_t>(kk) * p;
        for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (int i = 0; i < m; ++i) {
      const double* arow = ta.data() + static_cast<size_t>(i) * k;
      double* orow = out.data() + static_cast<size_t>(i) * p;
      for (int j = 0; j < p; ++j) {
        const double* brow = tb.data() + static_cast<size_t>(j) * k;
        double acc = 0.0;
        for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        orow[j] += acc;
      }
    }
  } else if (trans_a && !trans_b) {
    for (int kk = 0; kk < k; ++kk) {
      const double* arow = ta.data() + static_cast<size_t>(kk) * m;
      const double* brow = tb.data() + static_cast<size_t>(kk) * p;
      for (int i = 0; i < m; ++i) {
        const double av = arow[i];
        double* orow = out.data() + static_cast<size_t>(i) * p;
        for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      double* orow = out.data() + static_cast<size_t>(i) * p;
      for (int j = 0; j < p; ++j) {
        double acc = 0.0;
        for (int kk = 0; kk < k; ++kk) acc += ta.at(kk, i) * tb.at(j, kk);
        orow[j] += acc;
      }
    }
  }
}
}  // namespace

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  check(a);
  check(b);
  const Tensor &ta = value(a.id), &tb = value(b.id);
  const int m = trans_a ? ta.cols : ta.rows;
  const int k = trans_a ? ta.rows : ta.cols;
  const int k2 = trans_b ? tb.cols : tb.rows;
  const int p = trans_b ? tb.rows : tb.cols;
  if (k != k2) throw std::invalid_argument("matvec: inner dimension mismatch");
  Node n;
  n.kind = OpKind::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  n.val = Tensor(m, p);
  matmul_acc(ta, tb, trans_a, trans_b, m, k, p, n.val);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
  check(a);
  const Tensor& t = value(a.id);
  Node n;
  n.kind = OpKind::GatherRows;
  n.a = a.id;
  n.val = Tensor(static_cast<int>(idx.size()), t.cols);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= t.rows) throw std::invalid_argument("gather: row out of range");
    std::memcpy(&n.val.d[i * t.cols], &t.d[static_cast<size_t>(idx[i]) * t.cols],
                sizeof(double) * t.cols);
  }
  n.idx = std::move(idx);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::gather_cols_t(Var a, std::vector<int> idx) {
  check(a);
  const Tensor& t = value(a.id);
  Node n;
  n.kind = OpKind::GatherColsT;
  n.a = a.id;
  n.val = Tensor(static_cast<int>(idx.size()), t.rows);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= t.cols) throw std::invalid_argument("gather: col out of range");
    for (int j = 0; j < t.rows; ++j) n.val.at(static_cast<int>(i), j) = t.at(j, idx[i]);
  }
  n.idx = std::move(idx);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::gather2d(Var a, std::vector<int> rows, std::vector<int> cols) {
  check(a);
  if (rows.size() != cols.size()) throw std::invalid_argument("gather2d: index size mismatch");
  const Tensor& t = value(a.id);
  Node n;
  n.kind = OpKind::Gather2D;
  n.a = a.id;
  n.val = Tensor(static_cast<int>(rows.size()), 1);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.rows || cols[i] < 0 || cols[i] >= t.cols)
      throw std::invalid_argument("gather2d: index out of range");
    n.val.d[i] = t.at(rows[i], cols[i]);
  }
  n.idx = std::move(rows);
  n.idx2 = std::move(cols);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::slice_col(Var a, int c) {
  check(a);
  const Tensor& t = value(a.id);
  if (c < 0 || c >= t.cols) throw std::invalid_argument("slice_col: out of range");
  Node n;
  n.kind = OpKind::SliceCol;
  n.a = a.id;
  n.idx = {c};
  n.val = Tensor(t.rows, 1);
  for (int i = 0; i < t.rows; ++i) n.val.d[i] = t.at(i, c);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: no inputs");
  int rows = 0;
  const int cols = xs[0].val().cols;
  for (Var v : xs) {
    check(v);
    if (value(v.id).cols != cols) throw std::invalid_argument("concat_rows: col mismatch");
    rows += value(v.id).rows;
  }
  Node n;
  n.kind = OpKind::ConcatRows;
  n.val = Tensor(rows, cols);
  int r = 0;
  for (Var v : xs) {
    const Tensor& t = value(v.id);
    std::memcpy(&n.val.d[static_cast<size_t>(r) * cols], t.d.data(), sizeof(double) * t.size());
    r += t.rows;
    n.many.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  return push(std::move(n));
}

Var Tape::reparam(Var mean, Var scale, Tensor noise) {
  check(mean);
  check(scale);
  const Tensor &tm = value(mean.id), &ts = value(scale.id);
  if (!ts.is_scalar() && !ts.same_shape(tm))
    throw std::invalid_argument("gaussian_reparam: scale must be scalar or match mean");
  if (!noise.same_shape(tm)) throw std::invalid_argument("gaussian_reparam: noise shape");
  for (double v : ts.d)
    if (!(v > 0.0))
      throw DomainError("gaussian_reparam: nonpositive scale at node " + std::to_string(size()));
  Node n;
  n.kind = OpKind::Reparam;
  n.a = mean.id;
  n.b = scale.id;
  n.val = Tensor(tm.rows, tm.cols);
  for (int i = 0; i < tm.size(); ++i)
    n.val.d[i] = tm.d[i] + (ts.is_scalar() ? ts.d[0] : ts.d[i]) * noise.d[i];
  n.aux = std::move(noise);
  n.requires_grad = nodes_[mean.id].requires_grad || nodes_[scale.id].requires_grad;
  return push(std::move(n));
}

Var Tape::stop_gradient(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::StopGrad;
  n.a = a.id;
  n.val = value(a.id);
  n.requires_grad = false;
  return push(std::move(n));
}

Var Tape::mlp(Var x, Var w1, Var b1, Var w2, Var b2, Var w3, Var b3) {
  for (Var v : {x, w1, b1, w2, b2, w3, b3}) check(v);
  const Tensor& tx = value(x.id);
  const Tensor& tw1 = value(w1.id);
  const int s = tx.rows, h = tw1.rows;
  if (tx.cols != 1 || tw1.cols != 1 || value(b1.id).size() != h || value(w2.id).rows != h ||
      value(w2.id).cols != h || value(b2.id).size() != h || value(w3.id).rows != h ||
      value(w3.id).cols != 1 || !value(b3.id).is_scalar())
    throw std::invalid_argument("mlp: shape mismatch");
  Node n;
  n.kind = OpKind::Mlp;
  n.many = {x.id, w1.id, b1.id, w2.id, b2.id, w3.id, b3.id};
  n.val = Tensor(s, 1);
  n.aux = Tensor(2 * s, h);  // post-relu hidden activations, saved for backward
  const double* pw1 = tw1.data();
  const double* pb1 = value(b1.id).data();
  const double* pw2 = value(w2.id).data();
  const double* pb2 = value(b2.id).data();
  const double* pw3 = value(w3.id).data();
  const double pb3 = value(b3.id).d[0];
  for (int i = 0; i < s; ++i) {
    double* h1 = n.aux.data() + static_cast<size_t>(i) * h;
    double* h2 = n.aux.data() + static_cast<size_t>(s + i) * h;
    const double xv = tx.d[i];
    for (int j = 0; j < h; ++j) {
      const double a = pw1[j] * xv + pb1[j];
      h1[j] = a > 0.0 ? a : 0.0;
    }
    for (int j = 0; j < h; ++j) {
      double a = pb2[j];
      const double* row = pw2 + static_cast<size_t>(j) * h;
      for (int k = 0; k < h; ++k) a += row[k] * h1[k];
      h2[j] = a > 0.0 ? a : 0.0;
    }
    double out = pb3;
    for (int k = 0; k < h; ++k) out += pw3[k] * h2[k];
    n.val.d[i] = out;
  }
  n.requires_grad = false;
  for (int id : n.many) n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  return push(std::move(n));
}

// --- backward ---

Tensor& Tape::adj(int i) {
  if (!has_adj_[i]) {
    adjoints_[i] = Tensor(nodes_[i].val.rows, nodes_[i].val.cols);
    has_adj_[i] = 1;
  }
  return adjoints_[i];
}

void Tape::backward(Var root) {
  check(root);
  if (!value(root.id).is_scalar())
    throw std::invalid_argument("backward: root must be scalar-valued");
  adjoints_.assign(nodes_.size(), Tensor());
  has_adj_.assign(nodes_.size(), 0);
  adj(root.id).d[0] = 1.0;
  for (int i = root.id; i >= 0; --i) {
    if (!has_adj_[i] || !nodes_[i].requires_grad) continue;
    backward_node(i);
  }
}

bool Tape::has_adjoint(Var v) const {
  check(v);
  return !has_adj_.empty() && has_adj_[v.id];
}

const Tensor& Tape::adjoint(Var v) const {
  check(v);
  if (adjoints_.empty()) throw std::invalid_argument("adjoint: backward() has not run");
  static const Tensor empty;
  if (!has_adj_[v.id]) {
    // untouched by the root: gradient is exactly zero
    const_cast<Tape*>(this)->adj(v.id);
  }
  return adjoints_[v.id];
}

void Tape::accumulate_param_grads(std::span<const size_t> offsets,
                                  std::span<double> flat) const {
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.kind != OpKind::Param || !has_adj_[i]) continue;
    const Tensor& g = adjoints_[i];
    const size_t off = offsets[static_cast<size_t>(n.param_slot)];
    for (int e = 0; e < g.size(); ++e) flat[off + e] += g.d[e];
  }
}

void Tape::backward_node(int i) {
  Node& n = nodes_[i];
  const Tensor& g = adjoints_[i];
  auto rqa = [&](int id) { return id >= 0 && nodes_[id].requires_grad; };

  switch (n.kind) {
    case OpKind::Constant:
    case OpKind::Param:
    case OpKind::StopGrad:
      return;

    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div: {
      const Tensor &ta = nodes_[n.a].val, &tb = nodes_[n.b].val;
      Bc bc = classify(ta, tb, "bw");
      const bool need_a = rqa(n.a), need_b = rqa(n.b);
      Tensor* ga = need_a ? &adj(n.a) : nullptr;
      Tensor* gb = need_b ? &adj(n.b) : nullptr;
      for (int r = 0; r < ta.rows; ++r)
        for (int c = 0; c < ta.cols; ++c) {
          const double gv = g.at(r, c);
          if (gv == 0.0) continue;
          switch (n.kind) {
            case OpKind::Add:
              if (need_a) ga->at(r, c) += gv;
              if (need_b) bacc(*gb, bc, r, c, ta.cols, gv);
              break;
            case OpKind::Sub:
              if (need_a) ga->at(r, c) += gv;
              if (need_b) bacc(*gb, bc, r, c, ta.cols, -gv);
              break;
            case OpKind::Mul:
              if (need_a) ga->at(r, c) += gv * bval(tb, bc, r, c, ta.cols);
              if (need_b) bacc(*gb, bc, r, c, ta.cols, gv * ta.at(r, c));
              break;
            case OpKind::Div: {
              const double bv = bval(tb, bc, r, c, ta.cols);
              if (need_a) ga->at(r, c) += gv / bv;
              if (need_b) bacc(*gb, bc, r, c, ta.cols, -gv * ta.at(r, c) / (bv * bv));
              break;
            }
            default: break;
          }
        }
      return;
    }

    case OpKind::AddN: {
      for (int id : n.many) {
        if (!rqa(id)) continue;
        Tensor& gi = adj(id);
        for (int e = 0; e < g.size(); ++e) gi.d[e] += g.d[e];
      }
      return;
    }

    case OpKind::Exp: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      for (int e = 0; e < g.size(); ++e) ga.d[e] += g.d[e] * n.val.d[e];
      return;
    }
    case OpKind::Log: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      const Tensor& x = nodes_[n.a].val;
      for (int e = 0; e < g.size(); ++e) ga.d[e] += g.d[e] / x.d[e];
      return;
    }
    case OpKind::Tanh: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      for (int e = 0; e < g.size(); ++e) ga.d[e] += g.d[e] * (1.0 - n.val.d[e] * n.val.d[e]);
      return;
    }
    case OpKind::Sigmoid: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      for (int e = 0; e < g.size(); ++e)
        ga.d[e] += g.d[e] * n.val.d[e] * (1.0 - n.val.d[e]);
      return;
    }
    case OpKind::Abs: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      const Tensor& x = nodes_[n.a].val;
      for (int e = 0; e < g.size(); ++e)
        ga.d[e] += g.d[e] * (x.d[e] > 0.0 ? 1.0 : (x.d[e] < 0.0 ? -1.0 : 0.0));
      return;
    }
    case OpKind::Sqrt: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      for (int e = 0; e < g.size(); ++e) ga.d[e] += g.d[e] * 0.5 / n.val.d[e];
      return;
    }
    case OpKind::MaxConst: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      const Tensor& x = nodes_[n.a].val;
      for (int e = 0; e < g.size(); ++e)
        if (x.d[e] > n.cval) ga.d[e] += g.d[e];
      return;
    }

    case OpKind::Sum: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      const Tensor& x = nodes_[n.a].val;
      if (n.axis == 0) {
        const double gv = g.d[0];
        for (int e = 0; e < x.size(); ++e) ga.d[e] += gv;
      } else if (n.axis == 1) {
        for (int r = 0; r < x.rows; ++r)
          for (int c = 0; c < x.cols; ++c) ga.at(r, c) += g.d[c];
      } else {
        for (int r = 0; r < x.rows; ++r)
          for (int c = 0; c < x.cols; ++c) ga.at(r, c) += g.d[r];
      }
      return;
    }

    case OpKind::MatMul: {
      const Tensor &ta = nodes_[n.a].val, &tb = nodes_[n.b].val;
      const int m = n.val.rows, p = n.val.cols;
      const int k = n.trans_a ? ta.rows : ta.cols;
      // dA' = g B'^T, dB' = A'^T g, expressed through the same kernel
      if (rqa(n.a)) {
        Tensor& ga = adj(n.a);
        if (!n.trans_a)
          matmul_acc(g, tb, false, !n.trans_b, m, p, k, ga);
        else
          matmul_acc(tb, g, n.trans_b, true, k, p, m, ga);
      }
      if (rqa(n.b)) {
        Tensor& gb = adj(n.b);
        if (!n.trans_b)
          matmul_acc(ta, g, !n.trans_a, false, k, m, p, gb);
        else
          matmul_acc(g, ta, true, n.trans_a, p, m, k, gb);
      }
      return;
    }

    case OpKind::GatherRows: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      const int cols = n.val.cols;
      for (size_t i = 0; i < n.idx.size(); ++i)
        for (int j = 0; j < cols; ++j)
          ga.at(n.idx[i], j) += g.at(static_cast<int>(i), j);
      return;
    }
    case OpKind::GatherColsT: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      for (size_t i = 0; i < n.idx.size(); ++i)
        for (int j = 0; j < n.val.cols; ++j)
          ga.at(j, n.idx[i]) += g.at(static_cast<int>(i), j);
      return;
    }
    case OpKind::Gather2D: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      for (size_t i = 0; i < n.idx.size(); ++i) ga.at(n.idx[i], n.idx2[i]) += g.d[i];
      return;
    }
    case OpKind::SliceCol: {
      if (!rqa(n.a)) return;
      Tensor& ga = adj(n.a);
      const int c = n.idx[0];
      for (int r = 0; r < n.val.rows; ++r) ga.at(r, c) += g.d[r];
      return;
    }
    case OpKind::ConcatRows: {
      int r = 0;
      for (int id : n.many) {
        const Tensor& part = nodes_[id].val;
        if (rqa(id)) {
          Tensor& gi = adj(id);
          for (int rr = 0; rr < part.rows; ++rr)
            for (int c = 0; c < part.cols; ++c) gi.at(rr, c) += g.at(r + rr, c);
        }
        r += part.rows;
      }
      return;
    }

    case OpKind::Mlp: {
      const int xi = n.many[0], w1i = n.many[1], b1i = n.many[2], w2i = n.many[3],
                b2i = n.many[4], w3i = n.many[5], b3i = n.many[6];
      const Tensor& tx = nodes_[xi].val;
      const int s = tx.rows, h = nodes_[w1i].val.rows;
      const double* pw1 = nodes_[w1i].val.data();
      const double* pw2 = nodes_[w2i].val.data();
      const double* pw3 = nodes_[w3i].val.data();
      Tensor* gx = rqa(xi) ? &adj(xi) : nullptr;
      Tensor* gw1 = rqa(w1i) ? &adj(w1i) : nullptr;
      Tensor* gb1 = rqa(b1i) ? &adj(b1i) : nullptr;
      Tensor* gw2 = rqa(w2i) ? &adj(w2i) : nullptr;
      Tensor* gb2 = rqa(b2i) ? &adj(b2i) : nullptr;
      Tensor* gw3 = rqa(w3i) ? &adj(w3i) : nullptr;
      Tensor* gb3 = rqa(b3i) ? &adj(b3i) : nullptr;
      std::vector<double> dh1(h), dh2(h);
      for (int i = 0; i < s; ++i) {
        const double go = g.d[i];
        if (go == 0.0) continue;
        const double* h1 = n.aux.data() + static_cast<size_t>(i) * h;
        const double* h2 = n.aux.data() + static_cast<size_t>(s + i) * h;
        if (gb3) gb3->d[0] += go;
        for (int j = 0; j < h; ++j) {
          if (gw3) gw3->d[j] += go * h2[j];
          dh2[j] = h2[j] > 0.0 ? go * pw3[j] : 0.0;
        }
        std::fill(dh1.begin(), dh1.end(), 0.0);
        for (int j = 0; j < h; ++j) {
          const double dj = dh2[j];
          if (dj == 0.0) continue;
          if (gb2) gb2->d[j] += dj;
          const double* w2row = pw2 + static_cast<size_t>(j) * h;
          double* gw2row = gw2 ? gw2->data() + static_cast<size_t>(j) * h : nullptr;
          for (int k = 0; k < h; ++k) {
            if (gw2row) gw2row[k] += dj * h1[k];
            dh1[k] += dj * w2row[k];
          }
        }
        const double xv = tx.d[i];
        double dx = 0.0;
        for (int j = 0; j < h; ++j) {
          const double dj = h1[j] > 0.0 ? dh1[j] : 0.0;
          if (dj == 0.0) continue;
          if (gw1) gw1->d[j] += dj * xv;
          if (gb1) gb1->d[j] += dj;
          dx += dj * pw1[j];
        }
        if (gx) gx->d[i] += dx;
      }
      return;
    }

    case OpKind::Reparam: {
      const Tensor& ts = nodes_[n.b].val;
      if (rqa(n.a)) {
        Tensor& gm = adj(n.a);
        for (int e = 0; e < g.size(); ++e) gm.d[e] += g.d[e];
      }
      if (rqa(n.b)) {
        Tensor& gs = adj(n.b);
        if (ts.is_scalar()) {
          double acc = 0.0;
          for (int e = 0; e < g.size(); ++e) acc += g.d[e] * n.aux.d[e];
          gs.d[0] += acc;
        } else {
          for (int e = 0; e < g.size(); ++e) gs.d[e] += g.d[e] * n.aux.d[e];
        }
      }
      return;
    }
  }
}

}  // namespace dimmpf
