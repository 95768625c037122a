#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "mgoe/tensor.hpp"

namespace mgoe {

// Handle into a Tape. Only meaningful for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over small dense tensors. Nodes are recorded in
// topological (program) order; backward is a single reverse sweep with
// enum dispatch, so a batch graph of ~10^5 nodes costs no allocations
// beyond the arena growth of the first batch.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Affine,
    Concat,
    StackRows,
    GatherRows,
    Sigmoid,
    Relu,
    Log,
    Log1pSum,
    SoftmaxTemp,
    Dot,
    SumAll,
    Clamp,
    Broadcast,
    Transpose,
    Linear,
  };

  explicit Tape(bool trap_nonfinite = true) : trap_(trap_nonfinite) {}

  // ---- leaves ----

  Var leaf(const Tensor& t, std::string label = {}) {
    Var v = new_node(Op::Leaf, t.rows(), t.cols(), t.shape.size() < 2, t.requires_grad);
    std::copy(t.v.begin(), t.v.end(), ptr(node(v).val));
    if (!label.empty()) set_label(v, std::move(label));
    check_node(v);
    return v;
  }

  Var constant(const std::vector<double>& data, std::string label = {}) {
    Tensor t({static_cast<int>(data.size())}, data);
    return leaf(t, std::move(label));
  }

  Var constant_scalar(double x) { return leaf(scalar_tensor(x)); }

  // ---- ops ----

  Var matmul(Var a, Var b) {
    // Vectors multiply as a row on the left and a column on the right.
    const Node na = node(a);
    const Node nb = node(b);
    const int m = na.vec ? 1 : na.r;
    const int k = na.vec ? na.r : na.c;
    const int kb = nb.r;  // rows of b, vector or not
    const int n = nb.vec ? 1 : nb.c;
    if (k != kb)
      throw ShapeError("matmul: inner dimensions differ: " + node_shape_str(a) + " vs " +
                       node_shape_str(b));
    const bool out_vec = na.vec || nb.vec;
    Var out = new_node(Op::MatMul, out_vec ? m * n : m, out_vec ? 1 : n, out_vec,
                       na.rg || nb.rg, a, b);
    Node& no = node(out);
    no.i0 = m;
    no.i1 = k;  // n recoverable from out shape
    double* o = ptr(no.val);
    const double* pa = ptr(node(a).val);
    const double* pb = ptr(node(b).val);
    std::fill(o, o + m * n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int kk = 0; kk < k; ++kk) {
        const double av = pa[i * k + kk];
        if (av == 0.0) continue;
        const double* brow = pb + kk * n;
        double* orow = o + i * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    check_node(out);
    return out;
  }

  // y = W x + b with W (m x k), x (k), b (m).
  Var linear(Var w, Var x, Var b) {
    const Node nw = node(w);
    const Node nx = node(x);
    const Node nb = node(b);
    if (!nx.vec || !nb.vec)
      throw ShapeError("linear: x and b must be vectors");
    if (nw.c != nx.r || nw.r != nb.r)
      throw ShapeError("linear: shapes " + node_shape_str(w) + ", " + node_shape_str(x) +
                       ", " + node_shape_str(b) + " do not compose");
    Var out = new_node(Op::Linear, nw.r, 1, true, nw.rg || nx.rg || nb.rg, w, x, b);
    double* o = ptr(node(out).val);
    const double* pw = ptr(node(w).val);
    const double* px = ptr(node(x).val);
    const double* pb = ptr(node(b).val);
    const int m = nw.r, k = nw.c;
    for (int i = 0; i < m; ++i) {
      double acc = pb[i];
      const double* row = pw + i * k;
      for (int j = 0; j < k; ++j) acc += row[j] * px[j];
      o[i] = acc;
    }
    check_node(out);
    return out;
  }

  Var add(Var a, Var b) { return ew_binary(Op::Add, a, b); }
  Var sub(Var a, Var b) { return ew_binary(Op::Sub, a, b); }
  Var mul(Var a, Var b) { return ew_binary(Op::Mul, a, b); }
  Var div(Var a, Var b) { return ew_binary(Op::Div, a, b); }

  Var neg(Var a) { return ew_unary(Op::Neg, a); }
  Var sigmoid(Var a) { return ew_unary(Op::Sigmoid, a); }
  Var relu(Var a) { return ew_unary(Op::Relu, a); }
  Var log(Var a) { return ew_unary(Op::Log, a); }

  Var scale(Var a, double s) {
    Var out = ew_unary(Op::Scale, a, /*defer_check=*/true);
    node(out).d0 = s;
    fill_unary(out, a);
    return out;
  }

  // a*x + b elementwise with scalar constants.
  Var affine(Var x, double a, double b) {
    Var out = ew_unary(Op::Affine, x, /*defer_check=*/true);
    node(out).d0 = a;
    node(out).d1 = b;
    fill_unary(out, x);
    return out;
  }

  Var clamp(Var x, double lo, double hi) {
    if (lo > hi) throw ConfigError("clamp: lo > hi");
    Var out = ew_unary(Op::Clamp, x, /*defer_check=*/true);
    node(out).d0 = lo;
    node(out).d1 = hi;
    fill_unary(out, x);
    return out;
  }

  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    int total = 0;
    bool rg = false;
    for (Var p : parts) {
      total += static_cast<int>(len(p));
      rg = rg || node(p).rg;
    }
    Var out = new_node(Op::Concat, total, 1, true, rg);
    Node& no = node(out);
    no.i0 = static_cast<int>(iarena_.size());
    no.i1 = static_cast<int>(parts.size());
    for (Var p : parts) iarena_.push_back(p.id);
    double* o = ptr(no.val);
    for (Var p : parts) {
      const std::size_t l = len(p);
      std::memcpy(o, ptr(node(p).val), l * sizeof(double));
      o += l;
    }
    check_node(out);
    return out;
  }

  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }

  // Stack equal-length vectors as the rows of a matrix.
  Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no inputs");
    const int d = static_cast<int>(len(rows[0]));
    bool rg = false;
    for (Var p : rows) {
      if (static_cast<int>(len(p)) != d)
        throw ShapeError("stack_rows: ragged inputs: " + node_shape_str(rows[0]) + " vs " +
                         node_shape_str(p));
      rg = rg || node(p).rg;
    }
    Var out = new_node(Op::StackRows, static_cast<int>(rows.size()), d, false, rg);
    Node& no = node(out);
    no.i0 = static_cast<int>(iarena_.size());
    no.i1 = static_cast<int>(rows.size());
    for (Var p : rows) iarena_.push_back(p.id);
    double* o = ptr(no.val);
    for (Var p : rows) {
      std::memcpy(o, ptr(node(p).val), d * sizeof(double));
      o += d;
    }
    check_node(out);
    return out;
  }

  Var stack_rows(std::initializer_list<Var> rows) {
    return stack_rows(std::span<const Var>(rows.begin(), rows.size()));
  }

  // Embedding lookup: gather rows of a (R x d) table.
  Var gather_rows(Var table, std::span<const int> idx) {
    const Node nt = node(table);
    if (nt.vec) throw ShapeError("gather_rows: table must be rank 2, got " + node_shape_str(table));
    if (idx.empty()) throw ShapeError("gather_rows: empty index list");
    for (int i : idx)
      if (i < 0 || i >= nt.r)
        throw ShapeError("gather_rows: row " + std::to_string(i) + " out of range for " +
                         node_shape_str(table));
    Var out = new_node(Op::GatherRows, static_cast<int>(idx.size()), nt.c, false, nt.rg, table);
    Node& no = node(out);
    no.i0 = static_cast<int>(iarena_.size());
    no.i1 = static_cast<int>(idx.size());
    iarena_.insert(iarena_.end(), idx.begin(), idx.end());
    double* o = ptr(no.val);
    const double* pt = ptr(node(table).val);
    const int d = nt.c;
    for (int i : idx) {
      std::memcpy(o, pt + static_cast<std::size_t>(i) * d, d * sizeof(double));
      o += d;
    }
    check_node(out);
    return out;
  }

  Var gather_row(Var table, int row) {
    const int idx[1] = {row};
    Var m = gather_rows(table, idx);
    // Single row reads more naturally as a vector downstream.
    Node& n = node(m);
    n.r = n.c;
    n.c = 1;
    n.vec = true;
    return m;
  }

  // Temperature softmax over a vector: exp(x_i/g) / sum_j exp(x_j/g),
  // computed with max subtraction.
  Var softmax_temp(Var x, double gamma) {
    if (!(gamma > 0.0)) throw ConfigError("softmax_temp: temperature must be > 0");
    const Node nx = node(x);
    if (!nx.vec) throw ShapeError("softmax_temp: expected a vector, got " + node_shape_str(x));
    Var out = new_node(Op::SoftmaxTemp, nx.r, 1, true, nx.rg, x);
    node(out).d0 = gamma;
    double* o = ptr(node(out).val);
    const double* px = ptr(node(x).val);
    const int n = nx.r;
    double mx = px[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, px[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      o[i] = std::exp((px[i] - mx) / gamma);
      z += o[i];
    }
    for (int i = 0; i < n; ++i) o[i] /= z;
    check_node(out);
    return out;
  }

  // log(sum(x) + 1), a scalar.
  Var log1p_sum(Var x) {
    Var out = new_node(Op::Log1pSum, 1, 1, true, node(x).rg, x);
    const double* px = ptr(node(x).val);
    double s = 0.0;
    for (std::size_t i = 0; i < len(x); ++i) s += px[i];
    if (s <= -1.0) throw NumericError("log1p_sum: sum " + std::to_string(s) + " <= -1");
    *ptr(node(out).val) = std::log1p(s);
    check_node(out);
    return out;
  }

  Var dot(Var a, Var b) {
    if (len(a) != len(b))
      throw ShapeError("dot: lengths differ: " + node_shape_str(a) + " vs " + node_shape_str(b));
    Var out = new_node(Op::Dot, 1, 1, true, node(a).rg || node(b).rg, a, b);
    const double* pa = ptr(node(a).val);
    const double* pb = ptr(node(b).val);
    double s = 0.0;
    for (std::size_t i = 0; i < len(a); ++i) s += pa[i] * pb[i];
    *ptr(node(out).val) = s;
    check_node(out);
    return out;
  }

  Var sum(Var a) {
    Var out = new_node(Op::SumAll, 1, 1, true, node(a).rg, a);
    const double* pa = ptr(node(a).val);
    double s = 0.0;
    for (std::size_t i = 0; i < len(a); ++i) s += pa[i];
    *ptr(node(out).val) = s;
    check_node(out);
    return out;
  }

  Var broadcast(Var s, int n) {
    if (len(s) != 1) throw ShapeError("broadcast: expected scalar, got " + node_shape_str(s));
    if (n < 1) throw ShapeError("broadcast: length must be >= 1");
    Var out = new_node(Op::Broadcast, n, 1, true, node(s).rg, s);
    const double x = *ptr(node(s).val);
    double* o = ptr(node(out).val);
    std::fill(o, o + n, x);
    check_node(out);
    return out;
  }

  Var transpose(Var a) {
    const Node na = node(a);
    if (na.vec) throw ShapeError("transpose: expected rank 2, got " + node_shape_str(a));
    Var out = new_node(Op::Transpose, na.c, na.r, false, na.rg, a);
    double* o = ptr(node(out).val);
    const double* pa = ptr(node(a).val);
    for (int i = 0; i < na.r; ++i)
      for (int j = 0; j < na.c; ++j) o[j * na.r + i] = pa[i * na.c + j];
    check_node(out);
    return out;
  }

  // ---- backward ----

  void backward(Var loss) {
    if (finished_) throw Error("backward: tape already consumed; reset() first");
    if (nodes_.empty()) throw Error("backward: tape is empty");
    if (len(loss) != 1)
      throw ShapeError("backward: loss must be scalar, got " + node_shape_str(loss));
    if (!node(loss).rg)
      throw Error("backward: loss does not depend on any differentiable leaf");
    *gptr(loss) = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.rg || n.op == Op::Leaf) continue;
      backward_node(n);
    }
    finished_ = true;
  }

  // ---- accessors ----

  std::vector<int> shape(Var v) const {
    const Node& n = node(v);
    if (n.vec) return {n.r};
    return {n.r, n.c};
  }

  std::size_t len(Var v) const {
    const Node& n = node(v);
    return static_cast<std::size_t>(n.r) * n.c;
  }

  const double* value_ptr(Var v) const { return buf_.data() + node(v).val; }

  double value_scalar(Var v) const {
    if (len(v) != 1) throw ShapeError("value_scalar: not a scalar: " + node_shape_str(v));
    return *value_ptr(v);
  }

  Tensor value(Var v) const {
    Tensor t(shape(v));
    std::copy(value_ptr(v), value_ptr(v) + len(v), t.v.begin());
    return t;
  }

  Tensor grad(Var v) const {
    const Node& n = node(v);
    Tensor t(shape(v));
    if (n.rg) std::copy(buf_.data() + n.grad, buf_.data() + n.grad + len(v), t.v.begin());
    return t;  // zero for non-differentiable nodes (no path to the loss)
  }

  std::size_t node_count() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    iarena_.clear();
    labels_.clear();
    used_ = 0;
    finished_ = false;
  }

 private:
  struct Node {
    Op op;
    bool vec;
    bool rg;
    int p0 = -1, p1 = -1, p2 = -1;
    int i0 = 0, i1 = 0;      // iarena span or matmul dims
    double d0 = 0, d1 = 0;   // op constants (scale, temperature, clamp bounds)
    int r = 0, c = 0;
    std::size_t val = 0;
    std::size_t grad = 0;
    int label = -1;
  };

  Node& node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw Error("invalid tape handle");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw Error("invalid tape handle");
    return nodes_[v.id];
  }

  double* ptr(std::size_t off) { return buf_.data() + off; }
  const double* ptr(std::size_t off) const { return buf_.data() + off; }
  double* gptr(Var v) { return buf_.data() + node(v).grad; }

  std::size_t alloc(std::size_t n) {
    if (used_ + n > buf_.size()) buf_.resize(std::max(buf_.size() * 2 + 64, used_ + n));
    std::size_t off = used_;
    used_ += n;
    return off;
  }

  Var new_node(Op op, int r, int c, bool vec, bool rg, Var p0 = {}, Var p1 = {}, Var p2 = {}) {
    if (finished_) throw Error("tape already consumed by backward(); reset() first");
    Node n;
    n.op = op;
    n.r = r;
    n.c = c;
    n.vec = vec;
    n.rg = rg;
    n.p0 = p0.id;
    n.p1 = p1.id;
    n.p2 = p2.id;
    const std::size_t sz = static_cast<std::size_t>(r) * c;
    n.val = alloc(sz);
    if (rg) {
      n.grad = alloc(sz);
      std::fill(buf_.begin() + n.grad, buf_.begin() + n.grad + sz, 0.0);
    }
    nodes_.push_back(n);
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void set_label(Var v, std::string label) {
    node(v).label = static_cast<int>(labels_.size());
    labels_.push_back(std::move(label));
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::Leaf: return "leaf";
      case Op::MatMul: return "matmul";
      case Op::Add: return "add";
      case Op::Sub: return "sub";
      case Op::Mul: return "mul";
      case Op::Div: return "div";
      case Op::Neg: return "neg";
      case Op::Scale: return "scale";
      case Op::Affine: return "affine";
      case Op::Concat: return "concat";
      case Op::StackRows: return "stack_rows";
      case Op::GatherRows: return "gather_rows";
      case Op::Sigmoid: return "sigmoid";
      case Op::Relu: return "relu";
      case Op::Log: return "log";
      case Op::Log1pSum: return "log1p_sum";
      case Op::SoftmaxTemp: return "softmax_temp";
      case Op::Dot: return "dot";
      case Op::SumAll: return "sum";
      case Op::Clamp: return "clamp";
      case Op::Broadcast: return "broadcast";
      case Op::Transpose: return "transpose";
      case Op::Linear: return "linear";
    }
    return "?";
  }

  std::string node_shape_str(Var v) const {
    return shape_str(shape(v));
  }

  std::string describe(Var v) const {
    const Node& n = node(v);
    std::string s = std::string(op_name(n.op)) + " node #" + std::to_string(v.id) + " " +
                    node_shape_str(v);
    if (n.label >= 0) s += " [" + labels_[n.label] + "]";
    return s;
  }

  void check_node(Var v) {
    if (!trap_) return;
    const Node& n = node(v);
    const double* p = ptr(n.val);
    const std::size_t sz = len(v);
    for (std::size_t i = 0; i < sz; ++i)
      if (!std::isfinite(p[i]))
        throw NumericError("non-finite value in " + describe(v));
  }

  Var ew_binary(Op op, Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.r != nb.r || na.c != nb.c)
      throw ShapeError(std::string(op_name(op)) + ": shapes differ: " + node_shape_str(a) +
                       " vs " + node_shape_str(b));
    Var out = new_node(op, na.r, na.c, na.vec, na.rg || nb.rg, a, b);
    double* o = ptr(node(out).val);
    const double* pa = ptr(node(a).val);
    const double* pb = ptr(node(b).val);
    const std::size_t sz = len(out);
    switch (op) {
      case Op::Add:
        for (std::size_t i = 0; i < sz; ++i) o[i] = pa[i] + pb[i];
        break;
      case Op::Sub:
        for (std::size_t i = 0; i < sz; ++i) o[i] = pa[i] - pb[i];
        break;
      case Op::Mul:
        for (std::size_t i = 0; i < sz; ++i) o[i] = pa[i] * pb[i];
        break;
      case Op::Div:
        for (std::size_t i = 0; i < sz; ++i) o[i] = pa[i] / pb[i];
        break;
      default:
        throw Error("ew_binary: bad op");
    }
    check_node(out);
    return out;
  }

  Var ew_unary(Op op, Var a, bool defer_fill = false) {
    const Node& na = node(a);
    Var out = new_node(op, na.r, na.c, na.vec, na.rg, a);
    if (!defer_fill) fill_unary(out, a);
    return out;
  }

  void fill_unary(Var out, Var a) {
    Node& no = node(out);
    double* o = ptr(no.val);
    const double* pa = ptr(node(a).val);
    const std::size_t sz = len(out);
    switch (no.op) {
      case Op::Neg:
        for (std::size_t i = 0; i < sz; ++i) o[i] = -pa[i];
        break;
      case Op::Sigmoid:
        for (std::size_t i = 0; i < sz; ++i) o[i] = stable_sigmoid(pa[i]);
        break;
      case Op::Relu:
        for (std::size_t i = 0; i < sz; ++i) o[i] = pa[i] > 0.0 ? pa[i] : 0.0;
        break;
      case Op::Log:
        for (std::size_t i = 0; i < sz; ++i) o[i] = std::log(pa[i]);
        break;
      case Op::Scale:
        for (std::size_t i = 0; i < sz; ++i) o[i] = no.d0 * pa[i];
        break;
      case Op::Affine:
        for (std::size_t i = 0; i < sz; ++i) o[i] = no.d0 * pa[i] + no.d1;
        break;
      case Op::Clamp:
        for (std::size_t i = 0; i < sz; ++i) o[i] = std::min(std::max(pa[i], no.d0), no.d1);
        break;
      default:
        throw Error("fill_unary: bad op");
    }
    check_node(out);
  }

  static double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

  void add_grad(int pid, const double* g, std::size_t sz) {
    Node& p = nodes_[pid];
    if (!p.rg) return;
    double* gp = buf_.data() + p.grad;
    for (std::size_t i = 0; i < sz; ++i) gp[i] += g[i];
  }

  void backward_node(Node& n) {
    const double* g = buf_.data() + n.grad;
    const std::size_t sz = static_cast<std::size_t>(n.r) * n.c;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        Node& a = nodes_[n.p0];
        Node& b = nodes_[n.p1];
        const int m = n.i0, k = n.i1;
        const int nn = static_cast<int>(sz) / m;
        const double* pa = buf_.data() + a.val;
        const double* pb = buf_.data() + b.val;
        if (a.rg) {
          double* ga = buf_.data() + a.grad;
          for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              const double* grow = g + i * nn;
              const double* brow = pb + kk * nn;
              for (int j = 0; j < nn; ++j) acc += grow[j] * brow[j];
              ga[i * k + kk] += acc;
            }
        }
        if (b.rg) {
          double* gb = buf_.data() + b.grad;
          for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
              const double av = pa[i * k + kk];
              if (av == 0.0) continue;
              const double* grow = g + i * nn;
              double* brow = gb + kk * nn;
              for (int j = 0; j < nn; ++j) brow[j] += av * grow[j];
            }
        }
        break;
      }
      case Op::Linear: {
        Node& w = nodes_[n.p0];
        Node& x = nodes_[n.p1];
        Node& b = nodes_[n.p2];
        const int m = w.r, k = w.c;
        const double* pw = buf_.data() + w.val;
        const double* px = buf_.data() + x.val;
        if (w.rg) {
          double* gw = buf_.data() + w.grad;
          for (int i = 0; i < m; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            double* row = gw + i * k;
            for (int j = 0; j < k; ++j) row[j] += gi * px[j];
          }
        }
        if (x.rg) {
          double* gx = buf_.data() + x.grad;
          for (int i = 0; i < m; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            const double* row = pw + i * k;
            for (int j = 0; j < k; ++j) gx[j] += gi * row[j];
          }
        }
        if (b.rg) add_grad(n.p2, g, m);
        break;
      }
      case Op::Add:
        add_grad(n.p0, g, sz);
        add_grad(n.p1, g, sz);
        break;
      case Op::Sub: {
        add_grad(n.p0, g, sz);
        Node& b = nodes_[n.p1];
        if (b.rg) {
          double* gb = buf_.data() + b.grad;
          for (std::size_t i = 0; i < sz; ++i) gb[i] -= g[i];
        }
        break;
      }
      case Op::Mul: {
        Node& a = nodes_[n.p0];
        Node& b = nodes_[n.p1];
        const double* pa = buf_.data() + a.val;
        const double* pb = buf_.data() + b.val;
        if (a.rg) {
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * pb[i];
        }
        if (b.rg) {
          double* gb = buf_.data() + b.grad;
          for (std::size_t i = 0; i < sz; ++i) gb[i] += g[i] * pa[i];
        }
        break;
      }
      case Op::Div: {
        Node& a = nodes_[n.p0];
        Node& b = nodes_[n.p1];
        const double* pa = buf_.data() + a.val;
        const double* pb = buf_.data() + b.val;
        if (a.rg) {
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] / pb[i];
        }
        if (b.rg) {
          double* gb = buf_.data() + b.grad;
          for (std::size_t i = 0; i < sz; ++i) gb[i] -= g[i] * pa[i] / (pb[i] * pb[i]);
        }
        break;
      }
      case Op::Neg: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < sz; ++i) ga[i] -= g[i];
        }
        break;
      }
      case Op::Scale: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < sz; ++i) ga[i] += n.d0 * g[i];
        }
        break;
      }
      case Op::Affine: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < sz; ++i) ga[i] += n.d0 * g[i];
        }
        break;
      }
      case Op::Clamp: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          const double* pa = buf_.data() + a.val;
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < sz; ++i)
            if (pa[i] >= n.d0 && pa[i] <= n.d1) ga[i] += g[i];
        }
        break;
      }
      case Op::Concat: {
        const double* gp = g;
        for (int t = 0; t < n.i1; ++t) {
          const int pid = iarena_[n.i0 + t];
          const std::size_t l = static_cast<std::size_t>(nodes_[pid].r) * nodes_[pid].c;
          add_grad(pid, gp, l);
          gp += l;
        }
        break;
      }
      case Op::StackRows: {
        const double* gp = g;
        for (int t = 0; t < n.i1; ++t) {
          const int pid = iarena_[n.i0 + t];
          add_grad(pid, gp, n.c);
          gp += n.c;
        }
        break;
      }
      case Op::GatherRows: {
        Node& tbl = nodes_[n.p0];
        if (tbl.rg) {
          double* gt = buf_.data() + tbl.grad;
          for (int t = 0; t < n.i1; ++t) {
            const int row = iarena_[n.i0 + t];
            const double* gr = g + static_cast<std::size_t>(t) * n.c;
            double* dst = gt + static_cast<std::size_t>(row) * n.c;
            for (int j = 0; j < n.c; ++j) dst[j] += gr[j];
          }
        }
        break;
      }
      case Op::Sigmoid: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          const double* y = buf_.data() + n.val;
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        }
        break;
      }
      case Op::Relu: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          const double* pa = buf_.data() + a.val;
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < sz; ++i)
            if (pa[i] > 0.0) ga[i] += g[i];
        }
        break;
      }
      case Op::Log: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          const double* pa = buf_.data() + a.val;
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] / pa[i];
        }
        break;
      }
      case Op::Log1pSum: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          const double* pa = buf_.data() + a.val;
          const std::size_t la = static_cast<std::size_t>(a.r) * a.c;
          double s = 0.0;
          for (std::size_t i = 0; i < la; ++i) s += pa[i];
          const double gi = g[0] / (s + 1.0);
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < la; ++i) ga[i] += gi;
        }
        break;
      }
      case Op::SoftmaxTemp: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          const double* y = buf_.data() + n.val;
          double* ga = buf_.data() + a.grad;
          double gy = 0.0;
          for (std::size_t i = 0; i < sz; ++i) gy += g[i] * y[i];
          for (std::size_t i = 0; i < sz; ++i) ga[i] += y[i] * (g[i] - gy) / n.d0;
        }
        break;
      }
      case Op::Dot: {
        Node& a = nodes_[n.p0];
        Node& b = nodes_[n.p1];
        const double g0 = g[0];
        const std::size_t la = static_cast<std::size_t>(a.r) * a.c;
        if (a.rg) {
          const double* pb = buf_.data() + b.val;
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < la; ++i) ga[i] += g0 * pb[i];
        }
        if (b.rg) {
          const double* pa = buf_.data() + a.val;
          double* gb = buf_.data() + b.grad;
          for (std::size_t i = 0; i < la; ++i) gb[i] += g0 * pa[i];
        }
        break;
      }
      case Op::SumAll: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          const std::size_t la = static_cast<std::size_t>(a.r) * a.c;
          double* ga = buf_.data() + a.grad;
          for (std::size_t i = 0; i < la; ++i) ga[i] += g[0];
        }
        break;
      }
      case Op::Broadcast: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          double s = 0.0;
          for (std::size_t i = 0; i < sz; ++i) s += g[i];
          buf_[a.grad] += s;
        }
        break;
      }
      case Op::Transpose: {
        Node& a = nodes_[n.p0];
        if (a.rg) {
          double* ga = buf_.data() + a.grad;
          for (int i = 0; i < n.r; ++i)
            for (int j = 0; j < n.c; ++j) ga[j * n.r + i] += g[i * n.c + j];
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<double> buf_;
  std::vector<int> iarena_;
  std::vector<std::string> labels_;
  std::size_t used_ = 0;
  bool trap_;
  bool finished_ = false;
};

}  // namespace mgoe
