#include "gridflow/autodiff.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "gridflow/error.hpp"

namespace gridflow::nn {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

void require(bool ok, const char* op, const char* what) {
  if (!ok) throw NumericError(std::string(op) + ": " + what);
}

}  // namespace

Var Tape::input(Matrix value) {
  require(value.allFinite(), "input", "non-finite value");
  Node node;
  node.own = std::move(value);
  node.op = "input";
  nodes_.push_back(std::move(node));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const Matrix& value) {
  Node node;
  node.ref = &value;
  node.op = "param";
  nodes_.push_back(std::move(node));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Matrix value, const char* op, Backward backward) {
  if (!value.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
  Node node;
  node.own = std::move(value);
  node.backward = std::move(backward);
  node.op = op;
  nodes_.push_back(std::move(node));
  return {static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.ref ? *n.ref : n.own;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.has_grad) return n.grad;
  const Matrix& val = value(v);
  return Matrix::Zero(val.rows(), val.cols());
}

Matrix& Tape::grad_slot(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.has_grad) {
    const Matrix& val = n.ref ? *n.ref : n.own;
    n.grad = Matrix::Zero(val.rows(), val.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) { grad_slot(v) += g; }

void Tape::backward(Var root) {
  const Matrix& r = value(root);
  require(r.rows() == 1 && r.cols() == 1, "backward", "root must be a scalar");
  for (Node& n : nodes_) n.has_grad = false;
  grad_slot(root).setOnes();
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad || !n.backward) continue;
    if (!n.grad.allFinite()) throw NumericError(std::string("non-finite gradient at output of ") + n.op);
    // Closures only touch grad slots of earlier nodes; nodes_ is not resized
    // during backward so the references stay valid.
    n.backward(*this, n.ref ? *n.ref : n.own, n.grad);
  }
  for (int i = root.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.has_grad && !n.grad.allFinite()) {
      throw NumericError(std::string("non-finite gradient flowing into ") + n.op);
    }
  }
}

Var matmul(Tape& t, Var a, Var b) {
  require(t.value(a).cols() == t.value(b).rows(), "matmul", "shape mismatch");
  return t.push(t.value(a) * t.value(b), "matmul", [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    tp.grad_slot(a).noalias() += g * tp.value(b).transpose();
    tp.grad_slot(b).noalias() += tp.value(a).transpose() * g;
  });
}

Var transpose(Tape& t, Var a) {
  return t.push(t.value(a).transpose(), "transpose",
                [a](Tape& tp, const Matrix&, const Matrix& g) { tp.grad_slot(a) += g.transpose(); });
}

Var add(Tape& t, Var a, Var b) { return add_scaled(t, a, b, 1.0); }

Var add_scaled(Tape& t, Var a, Var b, double s) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  require(va.rows() == vb.rows() && va.cols() == vb.cols(), "add", "shape mismatch");
  return t.push(va + s * vb, "add", [a, b, s](Tape& tp, const Matrix&, const Matrix& g) {
    tp.grad_slot(a) += g;
    tp.grad_slot(b) += s * g;
  });
}

Var add_col_broadcast(Tape& t, Var m, Var b) {
  const Matrix& vm = t.value(m);
  const Matrix& vb = t.value(b);
  require(vb.cols() == 1 && vb.rows() == vm.rows(), "add_col_broadcast", "shape mismatch");
  Matrix out = vm;
  out.colwise() += vb.col(0);
  return t.push(std::move(out), "add_col_broadcast", [m, b](Tape& tp, const Matrix&, const Matrix& g) {
    tp.grad_slot(m) += g;
    tp.grad_slot(b) += g.rowwise().sum();
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.push(s * t.value(a), "scale", [a, s](Tape& tp, const Matrix&, const Matrix& g) { tp.grad_slot(a) += s * g; });
}

Var leaky_relu(Tape& t, Var a, double slope) {
  const Matrix& x = t.value(a);
  Matrix out = x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  return t.push(std::move(out), "leaky_relu", [a, slope](Tape& tp, const Matrix&, const Matrix& g) {
    const Matrix& x = tp.value(a);
    tp.grad_slot(a) += (x.array() > 0.0).select(g, slope * g);
  });
}

Var tanh(Tape& t, Var a) {
  // tanh never reaches +-1, but rounds to it for |x| > ~19; keep the open range.
  constexpr double kBelowOne = 1.0 - 0x1.0p-53;
  Matrix y = t.value(a).array().tanh().cwiseMax(-kBelowOne).cwiseMin(kBelowOne).matrix();
  return t.push(std::move(y), "tanh", [a](Tape& tp, const Matrix& y, const Matrix& g) {
    tp.grad_slot(a) += (g.array() * (1.0 - y.array().square())).matrix();
  });
}

Var per_column_linear(Tape& t, Var w, Var x, int out) {
  const Matrix& vw = t.value(w);
  const Matrix& vx = t.value(x);
  const Index in = vx.rows();
  const Index n = vx.cols();
  require(vw.rows() == in && vw.cols() == n * out, "per_column_linear", "shape mismatch");
  Matrix y(out, n);
  for (Index j = 0; j < n; ++j) {
    y.col(j).noalias() = vw.middleCols(j * out, out).transpose() * vx.col(j);
  }
  return t.push(std::move(y), "per_column_linear", [w, x, out, n](Tape& tp, const Matrix&, const Matrix& g) {
    const Matrix& vw = tp.value(w);
    const Matrix& vx = tp.value(x);
    Matrix& gw = tp.grad_slot(w);
    Matrix& gx = tp.grad_slot(x);
    for (Index j = 0; j < n; ++j) {
      gw.middleCols(j * out, out).noalias() += vx.col(j) * g.col(j).transpose();
      gx.col(j).noalias() += vw.middleCols(j * out, out) * g.col(j);
    }
  });
}

Var slice_rows(Tape& t, Var a, int begin, int count) {
  const Matrix& va = t.value(a);
  require(begin >= 0 && count >= 0 && begin + count <= va.rows(), "slice_rows", "range out of bounds");
  return t.push(va.middleRows(begin, count), "slice_rows", [a, begin, count](Tape& tp, const Matrix&, const Matrix& g) {
    tp.grad_slot(a).middleRows(begin, count) += g;
  });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  Index rows = 0;
  const Index cols = t.value(parts[0]).cols();
  for (Var p : parts) {
    require(t.value(p).cols() == cols, "concat_rows", "column mismatch");
    rows += t.value(p).rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, t.value(p).rows()) = t.value(p);
    r += t.value(p).rows();
  }
  return t.push(std::move(out), "concat_rows", [parts](Tape& tp, const Matrix&, const Matrix& g) {
    Index r = 0;
    for (Var p : parts) {
      const Index k = tp.value(p).rows();
      tp.grad_slot(p) += g.middleRows(r, k);
      r += k;
    }
  });
}

Var outer_add(Tape& t, Var u, Var v) {
  const Matrix& vu = t.value(u);
  const Matrix& vv = t.value(v);
  require(vu.cols() == 1 && vv.rows() == 1, "outer_add", "expects a column and a row");
  Matrix out = vu.col(0).replicate(1, vv.cols());
  out.rowwise() += vv.row(0);
  return t.push(std::move(out), "outer_add", [u, v](Tape& tp, const Matrix&, const Matrix& g) {
    tp.grad_slot(u) += g.rowwise().sum();
    tp.grad_slot(v) += g.colwise().sum();
  });
}

namespace {

Matrix softmax_forward(const Matrix& e, const Mask* mask, const char* op) {
  Matrix out = Matrix::Zero(e.rows(), e.cols());
  for (Index i = 0; i < e.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < e.cols(); ++j) {
      if (!mask || (*mask)(i, j)) mx = std::max(mx, e(i, j));
    }
    require(std::isfinite(mx), op, "row with empty support");
    double sum = 0.0;
    for (Index j = 0; j < e.cols(); ++j) {
      if (!mask || (*mask)(i, j)) {
        out(i, j) = std::exp(e(i, j) - mx);
        sum += out(i, j);
      }
    }
    out.row(i) /= sum;
  }
  return out;
}

Var softmax_impl(Tape& t, Var e, const Mask* mask, const char* op) {
  const Matrix& ve = t.value(e);
  if (mask) require(mask->rows() == ve.rows() && mask->cols() == ve.cols(), op, "mask shape mismatch");
  // dE_ij = y_ij (g_ij - sum_k g_ik y_ik); masked entries have y = 0.
  return t.push(softmax_forward(ve, mask, op), op, [e](Tape& tp, const Matrix& s, const Matrix& g) {
    const Eigen::VectorXd dot = (g.array() * s.array()).rowwise().sum();
    tp.grad_slot(e) += (s.array() * (g.colwise() - dot).array()).matrix();
  });
}

}  // namespace

Var masked_softmax_rows(Tape& t, Var e, const Mask& mask) { return softmax_impl(t, e, &mask, "masked_softmax"); }

Var softmax_rows(Tape& t, Var e) { return softmax_impl(t, e, nullptr, "softmax"); }

Var affine_of_row(Tape& t, Var x, const Matrix& a, const VectorXd& c) {
  const Matrix& vx = t.value(x);
  require(vx.rows() == 1 && vx.cols() == a.cols() && c.size() == a.rows(), "affine_of_row", "shape mismatch");
  Matrix out = a * vx.transpose();
  out.col(0) += c;
  return t.push(std::move(out), "affine_of_row", [x, a](Tape& tp, const Matrix&, const Matrix& g) {
    tp.grad_slot(x).noalias() += g.transpose() * a;
  });
}

double log_cosh(double x) {
  const double ax = std::abs(x);
  return ax + std::log1p(std::exp(-2.0 * ax)) - std::numbers::ln2;
}

Var logcosh_mean(Tape& t, Var pred, const Matrix& target) {
  const Matrix& p = t.value(pred);
  require(p.rows() == target.rows() && p.cols() == target.cols(), "logcosh_mean", "shape mismatch");
  const Matrix diff = p - target;
  const double count = static_cast<double>(diff.size());
  const double value = diff.unaryExpr([](double d) { return log_cosh(d); }).sum() / count;
  return t.push(Matrix::Constant(1, 1, value), "logcosh_mean", [pred, diff, count](Tape& tp, const Matrix&, const Matrix& g) {
    tp.grad_slot(pred) += (g(0, 0) / count) * diff.array().tanh().matrix();
  });
}

Var box_violation_sq_mean(Tape& t, Var x, const VectorXd& lo, const VectorXd& hi) {
  const Matrix& vx = t.value(x);
  require(vx.cols() == 1 && lo.size() == vx.rows() && hi.size() == vx.rows(), "box_violation", "shape mismatch");
  const VectorXd v = vx.col(0).cwiseMax(lo).cwiseMin(hi) - vx.col(0);
  const double count = static_cast<double>(v.size());
  return t.push(Matrix::Constant(1, 1, v.squaredNorm() / count), "box_violation",
                [x, v, count](Tape& tp, const Matrix&, const Matrix& g) {
                  // d/dx (clamp(x) - x)^2 = -2 (clamp(x) - x) outside the box, 0 inside.
                  tp.grad_slot(x).col(0) += (-2.0 * g(0, 0) / count) * v;
                });
}

}  // namespace gridflow::nn
