#include "gridflow/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gridflow/error.hpp"

namespace gridflow {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Constraints are handled uniformly as n'x >= b. Equalities come first and
// are never dropped; inequality row i of C x <= d becomes (-C_i) x >= -d_i.
struct Constraint {
  VectorXd normal;
  double rhs = 0.0;
  bool equality = false;
  Index source = 0;  // row in C or E
};

class DualActiveSet {
 public:
  DualActiveSet(const ProjectionProblem& p) : n_(p.target.size()), x_(p.target) {
    scale_ = 1.0 + p.target.lpNorm<Eigen::Infinity>();
    for (Index i = 0; i < p.E.rows(); ++i) {
      constraints_.push_back({p.E.row(i).transpose(), p.e(i), true, i});
    }
    for (Index i = 0; i < p.C.rows(); ++i) {
      constraints_.push_back({-p.C.row(i).transpose(), -p.d(i), false, i});
      scale_ = std::max(scale_, 1.0 + std::abs(p.d(i)));
    }
    refactor();
  }

  bool run(int& iterations) {
    // Equalities first; each is oriented so that it is violated from below.
    for (std::size_t k = 0; k < constraints_.size(); ++k) {
      Constraint& c = constraints_[k];
      if (!c.equality) continue;
      if (c.normal.squaredNorm() == 0.0) {
        if (std::abs(c.rhs) > tolerance(c)) return false;
        continue;
      }
      const double s = c.normal.dot(x_) - c.rhs;
      if (s > 0.0) {
        c.normal = -c.normal;
        c.rhs = -c.rhs;
        sign_flipped_.push_back(static_cast<int>(k));
      }
      if (!add_constraint(static_cast<int>(k), iterations, /*skip_if_dependent=*/true)) return false;
    }

    const int limit = 20 * static_cast<int>(constraints_.size() + n_) + 100;
    for (;;) {
      if (++iterations > limit) throw SolverError("projection did not converge");
      int worst = -1;
      double worst_violation = 0.0;
      for (std::size_t k = 0; k < constraints_.size(); ++k) {
        const Constraint& c = constraints_[k];
        if (c.equality || is_active(static_cast<int>(k))) continue;
        const double norm = c.normal.norm();
        if (norm == 0.0) {
          if (c.rhs > tolerance(c)) return false;
          continue;
        }
        const double s = c.normal.dot(x_) - c.rhs;
        if (s < -tolerance(c) && -s / norm > worst_violation) {
          worst_violation = -s / norm;
          worst = static_cast<int>(k);
        }
      }
      if (worst < 0) return true;
      if (!add_constraint(worst, iterations, /*skip_if_dependent=*/false)) return false;
    }
  }

  const VectorXd& x() const { return x_; }

  void multipliers(const ProjectionProblem& p, VectorXd& ineq, VectorXd& eq) const {
    ineq = VectorXd::Zero(p.C.rows());
    eq = VectorXd::Zero(p.E.rows());
    for (std::size_t a = 0; a < active_.size(); ++a) {
      const Constraint& c = constraints_[static_cast<std::size_t>(active_[a])];
      if (c.equality) {
        const bool flipped = std::find(sign_flipped_.begin(), sign_flipped_.end(), active_[a]) !=
                             sign_flipped_.end();
        eq(c.source) = flipped ? u_(static_cast<Index>(a)) : -u_(static_cast<Index>(a));
      } else {
        ineq(c.source) = u_(static_cast<Index>(a));
      }
    }
  }

  std::vector<int> active_inequalities() const {
    std::vector<int> rows;
    for (int k : active_) {
      const Constraint& c = constraints_[static_cast<std::size_t>(k)];
      if (!c.equality) rows.push_back(static_cast<int>(c.source));
    }
    std::sort(rows.begin(), rows.end());
    return rows;
  }

 private:
  double tolerance(const Constraint& c) const {
    return 1e-12 * (scale_ + std::abs(c.rhs) + c.normal.norm() * x_.lpNorm<Eigen::Infinity>());
  }

  bool is_active(int k) const { return std::find(active_.begin(), active_.end(), k) != active_.end(); }

  // QR of the active normals: N_A = Q [R; 0].
  void refactor() {
    const auto q = static_cast<Index>(active_.size());
    if (q == 0) {
      Q_ = MatrixXd::Identity(n_, n_);
      R_.resize(0, 0);
      return;
    }
    MatrixXd normals(n_, q);
    for (Index a = 0; a < q; ++a) normals.col(a) = constraints_[static_cast<std::size_t>(active_[static_cast<std::size_t>(a)])].normal;
    Eigen::HouseholderQR<MatrixXd> qr(normals);
    Q_ = qr.householderQ() * MatrixXd::Identity(n_, n_);
    R_ = qr.matrixQR().topRows(q).triangularView<Eigen::Upper>();
  }

  void drop(Index position) {
    active_.erase(active_.begin() + position);
    VectorXd shrunk(u_.size() - 1);
    shrunk << u_.head(position), u_.tail(u_.size() - position - 1);
    u_ = shrunk;
    refactor();
  }

  // One outer iteration of the dual method: make constraint k active.
  bool add_constraint(int k, int& iterations, bool skip_if_dependent) {
    const Constraint& c = constraints_[static_cast<std::size_t>(k)];
    double u_new = 0.0;
    for (;;) {
      ++iterations;
      const auto q = static_cast<Index>(active_.size());
      const VectorXd d = Q_.transpose() * c.normal;
      VectorXd z = Q_.rightCols(n_ - q) * d.tail(n_ - q);
      VectorXd r(q);
      if (q > 0) r = R_.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));

      const double s = c.normal.dot(x_) - c.rhs;
      const bool dependent = z.norm() <= 1e-10 * c.normal.norm();
      if (dependent) z.setZero();

      // Partial (dual) step limit from active inequalities.
      double t1 = kInf;
      Index drop_at = -1;
      for (Index a = 0; a < q; ++a) {
        const Constraint& ca = constraints_[static_cast<std::size_t>(active_[static_cast<std::size_t>(a)])];
        if (ca.equality || r(a) <= 1e-14) continue;
        const double ratio = u_(a) / r(a);
        if (ratio < t1) {
          t1 = ratio;
          drop_at = a;
        }
      }
      // Full (primal) step.
      double t2 = kInf;
      if (!dependent) t2 = -s / z.dot(c.normal);
      t2 = std::max(t2, 0.0);

      if (dependent && skip_if_dependent && std::abs(s) <= tolerance(c)) return true;
      if (!std::isfinite(t1) && !std::isfinite(t2)) return false;  // empty polytope

      const double t = std::min(t1, t2);
      if (!std::isfinite(t2)) {
        // Only the multipliers move.
        if (q > 0) u_ -= t * r;
        u_new += t;
        drop(drop_at);
        continue;
      }
      x_ += t * z;
      if (q > 0) u_ -= t * r;
      u_new += t;
      if (t2 <= t1) {
        active_.push_back(k);
        VectorXd grown(u_.size() + 1);
        grown << u_, u_new;
        u_ = grown;
        refactor();
        return true;
      }
      drop(drop_at);
    }
  }

  Index n_;
  VectorXd x_;
  double scale_ = 1.0;
  std::vector<Constraint> constraints_;
  std::vector<int> active_;
  std::vector<int> sign_flipped_;
  VectorXd u_ = VectorXd(0);
  MatrixXd Q_, R_;
};

}  // namespace

double projection_kkt_residual(const ProjectionProblem& p, const VectorXd& x,
                               const VectorXd& ineq, const VectorXd& eq) {
  const double scale = 1.0 + p.target.lpNorm<Eigen::Infinity>();
  // Stationarity of 1/2|x - t|^2 + ineq'(Cx - d) + eq'(Ex - e).
  VectorXd grad = x - p.target;
  if (p.C.rows() > 0) grad += p.C.transpose() * ineq;
  if (p.E.rows() > 0) grad += p.E.transpose() * eq;
  double worst = grad.lpNorm<Eigen::Infinity>();
  for (Index i = 0; i < p.C.rows(); ++i) {
    const double slack = p.d(i) - p.C.row(i).dot(x);
    worst = std::max({worst, -slack, -ineq(i), std::abs(ineq(i) * slack) / scale});
  }
  for (Index i = 0; i < p.E.rows(); ++i) {
    worst = std::max(worst, std::abs(p.E.row(i).dot(x) - p.e(i)));
  }
  return worst / scale;
}

ProjectionResult project_onto_polytope(const ProjectionProblem& problem) {
  const Index n = problem.target.size();
  if (problem.C.rows() > 0 && (problem.C.cols() != n || problem.d.size() != problem.C.rows())) {
    throw SolverError("projection: inequality block has inconsistent dimensions");
  }
  if (problem.E.rows() > 0 && (problem.E.cols() != n || problem.e.size() != problem.E.rows())) {
    throw SolverError("projection: equality block has inconsistent dimensions");
  }
  ProjectionResult result;
  DualActiveSet solver(problem);
  result.feasible = solver.run(result.iterations);
  result.x = solver.x();
  solver.multipliers(problem, result.ineq_multipliers, result.eq_multipliers);
  result.active = solver.active_inequalities();
  result.kkt_residual =
      projection_kkt_residual(problem, result.x, result.ineq_multipliers, result.eq_multipliers);
  return result;
}

}  // namespace gridflow
