#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "gridflow/grid.hpp"

namespace gridflow::nn {

using Matrix = Eigen::MatrixXd;

struct Var {
  int id = -1;
};

/// Reverse-mode tape over dense matrices. Every op checks its output for
/// NaN/Inf and every backward step checks the gradients it produces; either
/// raises NumericError naming the op.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

  /// Constant input (copied). Gradients are still tracked.
  Var input(Matrix value);
  /// Leaf referring to caller-owned storage, which must outlive the tape.
  Var param(const Matrix& value);

  Var push(Matrix value, const char* op, Backward backward);

  const Matrix& value(Var v) const;
  /// Gradient after backward(); zero matrix if nothing flowed into v.
  Matrix grad(Var v) const;
  /// Accumulate into the gradient of v (used by backward closures).
  void accumulate(Var v, const Matrix& g);
  Matrix& grad_slot(Var v);
  bool has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].has_grad; }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and runs the tape backwards.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool has_grad = false;
    Backward backward;
    const char* op = "";
  };
  std::vector<Node> nodes_;
};

// Ops. Shapes are noted as rows x cols.
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var add(Tape& t, Var a, Var b);
/// a + s * b for equally shaped a, b.
Var add_scaled(Tape& t, Var a, Var b, double s);
/// M (r x c) + b (r x 1) added to every column.
Var add_col_broadcast(Tape& t, Var m, Var b);
Var scale(Tape& t, Var a, double s);
Var leaky_relu(Tape& t, Var a, double slope);
Var tanh(Tape& t, Var a);
/// W stacks N blocks of shape in x out side by side (in x N*out); X is in x N.
/// Column j of the result is W_j^T x_j.
Var per_column_linear(Tape& t, Var w, Var x, int out);
Var slice_rows(Tape& t, Var a, int begin, int count);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
/// u (N x 1), v (1 x M) -> N x M with entries u_i + v_j.
Var outer_add(Tape& t, Var u, Var v);
/// Row-wise softmax over entries where mask is true; other entries are
/// exactly zero. Every row must have at least one true entry.
Var masked_softmax_rows(Tape& t, Var e, const Mask& mask);
Var softmax_rows(Tape& t, Var e);
/// Constant affine map x (1 x L) -> A x^T + c (N x 1).
Var affine_of_row(Tape& t, Var x, const Matrix& a, const Eigen::VectorXd& c);
/// Mean over entries of log cosh(pred - target); target is constant.
Var logcosh_mean(Tape& t, Var pred, const Matrix& target);
/// Mean over entries of (clamp(x, lo, hi) - x)^2 with constant bounds.
Var box_violation_sq_mean(Tape& t, Var x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);

/// Numerically stable log cosh.
double log_cosh(double x);

}  // namespace gridflow::nn
