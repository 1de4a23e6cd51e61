#include "gridflow/lp.hpp"

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
constexpr double kPivotTol = 1e-9;
constexpr int kBlandAfter = 50;
constexpr int kReinvertEvery = 64;

enum class VarState : unsigned char { basic, at_lower, at_upper };

class BoundedSimplex {
 public:
  explicit BoundedSimplex(const LinearProgram& lp)
      : m_(lp.A.rows()), n_(lp.A.cols()), total_(n_ + m_) {
    full_ = MatrixXd::Zero(m_, total_);
    full_.leftCols(n_) = lp.A;
    b_ = lp.b;
    lower_.resize(total_);
    upper_.resize(total_);
    lower_.head(n_) = lp.lower;
    upper_.head(n_) = lp.upper;
    value_ = VectorXd::Zero(total_);
    state_.assign(static_cast<std::size_t>(total_), VarState::at_lower);

    // Structural variables start at their lower bound; one artificial per row
    // absorbs the residual with a sign making it nonnegative.
    value_.head(n_) = lp.lower;
    const VectorXd residual = b_ - lp.A * lp.lower;
    basis_.resize(static_cast<std::size_t>(m_));
    for (Index i = 0; i < m_; ++i) {
      const Index a = n_ + i;
      full_(i, a) = residual(i) >= 0.0 ? 1.0 : -1.0;
      lower_(a) = 0.0;
      upper_(a) = kInf;
      value_(a) = std::abs(residual(i));
      state_[static_cast<std::size_t>(a)] = VarState::basic;
      basis_[static_cast<std::size_t>(i)] = a;
    }
    scale_ = 1.0 + b_.lpNorm<Eigen::Infinity>();
    reinvert();
  }

  bool phase_one(int& iterations) {
    VectorXd cost = VectorXd::Zero(total_);
    cost.tail(m_).setOnes();
    iterate(cost, iterations);
    const double infeasibility = value_.tail(m_).sum();
    if (infeasibility > 1e-9 * scale_) return false;

    // Artificials are pinned to zero from here on.
    for (Index i = 0; i < m_; ++i) {
      const Index a = n_ + i;
      upper_(a) = 0.0;
      if (state_[static_cast<std::size_t>(a)] != VarState::basic) {
        state_[static_cast<std::size_t>(a)] = VarState::at_lower;
        value_(a) = 0.0;
      }
    }
    drive_out_artificials();
    return true;
  }

  void phase_two(const VectorXd& c, int& iterations) {
    VectorXd cost = VectorXd::Zero(total_);
    cost.head(n_) = c;
    iterate(cost, iterations);
  }

  VectorXd structural() const { return value_.head(n_); }

  /// Equality duals from the final basis: B' y = c_B.
  VectorXd duals(const VectorXd& c) const {
    MatrixXd basis_matrix(m_, m_);
    VectorXd cb(m_);
    for (Index i = 0; i < m_; ++i) {
      const Index j = basis_[static_cast<std::size_t>(i)];
      basis_matrix.col(i) = full_.col(j);
      cb(i) = j < n_ ? c(j) : 0.0;
    }
    return basis_matrix.transpose().fullPivLu().solve(cb);
  }

 private:
  void reinvert() {
    MatrixXd basis_matrix(m_, m_);
    VectorXd rhs = b_;
    for (Index i = 0; i < m_; ++i) basis_matrix.col(i) = full_.col(basis_[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < total_; ++j) {
      if (state_[static_cast<std::size_t>(j)] != VarState::basic) rhs -= full_.col(j) * value_(j);
    }
    Eigen::FullPivLU<MatrixXd> lu(basis_matrix);
    tableau_ = lu.solve(full_);
    const VectorXd xb = lu.solve(rhs);
    for (Index i = 0; i < m_; ++i) value_(basis_[static_cast<std::size_t>(i)]) = xb(i);
    pivots_since_reinvert_ = 0;
  }

  void pivot(Index row, Index col) {
    const double p = tableau_(row, col);
    tableau_.row(row) /= p;
    for (Index i = 0; i < m_; ++i) {
      if (i == row) continue;
      const double f = tableau_(i, col);
      if (f != 0.0) tableau_.row(i) -= f * tableau_.row(row);
    }
    // Caller sets the bound state and value of the leaving variable.
    basis_[static_cast<std::size_t>(row)] = col;
    state_[static_cast<std::size_t>(col)] = VarState::basic;
    ++pivots_since_reinvert_;
  }

  void drive_out_artificials() {
    for (Index r = 0; r < m_; ++r) {
      const Index a = basis_[static_cast<std::size_t>(r)];
      if (a < n_) continue;
      Index best = -1;
      double best_mag = kPivotTol;
      for (Index j = 0; j < n_; ++j) {
        if (state_[static_cast<std::size_t>(j)] == VarState::basic) continue;
        const double mag = std::abs(tableau_(r, j));
        if (mag > best_mag) {
          best_mag = mag;
          best = j;
        }
      }
      if (best < 0) continue;  // redundant row; artificial stays basic at zero
      const double entering_value = value_(best);
      pivot(r, best);
      state_[static_cast<std::size_t>(a)] = VarState::at_lower;
      value_(a) = 0.0;
      value_(best) = entering_value;
      reinvert();
    }
  }

  void iterate(const VectorXd& cost, int& iterations) {
    const int limit = 50 * static_cast<int>(total_ + m_) + 1000;
    int degenerate_run = 0;
    const double cost_scale = 1.0 + cost.lpNorm<Eigen::Infinity>();
    const double dual_tol = 1e-11 * cost_scale;
    for (;;) {
      if (++iterations > limit) throw SolverError("simplex iteration limit reached");
      VectorXd cb(m_);
      for (Index i = 0; i < m_; ++i) cb(i) = cost(basis_[static_cast<std::size_t>(i)]);
      const VectorXd reduced = cost - tableau_.transpose() * cb;

      const bool bland = degenerate_run >= kBlandAfter;
      Index entering = -1;
      double best = 0.0;
      for (Index j = 0; j < total_; ++j) {
        const auto s = state_[static_cast<std::size_t>(j)];
        if (s == VarState::basic || upper_(j) - lower_(j) <= 0.0) continue;
        double gain = 0.0;
        if (s == VarState::at_lower && reduced(j) < -dual_tol) gain = -reduced(j);
        if (s == VarState::at_upper && reduced(j) > dual_tol) gain = reduced(j);
        if (gain <= 0.0) continue;
        if (bland) {
          entering = j;
          break;
        }
        if (gain > best) {
          best = gain;
          entering = j;
        }
      }
      if (entering < 0) return;

      const double dir = state_[static_cast<std::size_t>(entering)] == VarState::at_lower ? 1.0 : -1.0;
      const VectorXd column = tableau_.col(entering);

      double theta = kInf;
      Index leave_row = -1;
      bool leave_to_upper = false;
      double leave_mag = 0.0;
      for (Index i = 0; i < m_; ++i) {
        const double delta = -dir * column(i);  // change of basic i per unit step
        if (std::abs(delta) <= kPivotTol) continue;
        const Index bi = basis_[static_cast<std::size_t>(i)];
        double limit_i;
        bool to_upper;
        if (delta < 0.0) {
          limit_i = (value_(bi) - lower_(bi)) / -delta;
          to_upper = false;
        } else {
          if (!std::isfinite(upper_(bi))) continue;
          limit_i = (upper_(bi) - value_(bi)) / delta;
          to_upper = true;
        }
        limit_i = std::max(limit_i, 0.0);
        bool take = leave_row < 0 || limit_i < theta - 1e-12;
        if (!take && limit_i <= theta + 1e-12) {
          take = bland ? bi < basis_[static_cast<std::size_t>(leave_row)] : std::abs(delta) > leave_mag;
        }
        if (take) {
          theta = limit_i;
          leave_row = i;
          leave_to_upper = to_upper;
          leave_mag = std::abs(delta);
        }
      }
      const double flip = upper_(entering) - lower_(entering);
      if (flip <= theta) {
        theta = flip;
        leave_row = -1;
      }
      if (!std::isfinite(theta)) throw SolverError("linear program is unbounded");

      degenerate_run = theta <= 1e-12 ? degenerate_run + 1 : 0;

      // Move basics along the edge.
      for (Index i = 0; i < m_; ++i) {
        value_(basis_[static_cast<std::size_t>(i)]) -= dir * theta * column(i);
      }
      value_(entering) += dir * theta;

      if (leave_row < 0) {
        // Bound flip, no basis change.
        state_[static_cast<std::size_t>(entering)] = dir > 0 ? VarState::at_upper : VarState::at_lower;
        value_(entering) = dir > 0 ? upper_(entering) : lower_(entering);
        continue;
      }
      const Index leaving = basis_[static_cast<std::size_t>(leave_row)];
      pivot(leave_row, entering);
      state_[static_cast<std::size_t>(leaving)] = leave_to_upper ? VarState::at_upper : VarState::at_lower;
      value_(leaving) = leave_to_upper ? upper_(leaving) : lower_(leaving);
      if (pivots_since_reinvert_ >= kReinvertEvery) reinvert();
    }
  }

  Index m_, n_, total_;
  MatrixXd full_;
  MatrixXd tableau_;
  VectorXd b_, lower_, upper_, value_;
  std::vector<VarState> state_;
  std::vector<Index> basis_;
  double scale_ = 1.0;
  int pivots_since_reinvert_ = 0;
};

}  // namespace

double KktResiduals::max() const { return std::max({primal, dual, complementarity}); }

KktResiduals kkt_residuals(const LinearProgram& lp, const VectorXd& x, const VectorXd& y) {
  KktResiduals r;
  const double b_scale = 1.0 + std::max(lp.b.lpNorm<Eigen::Infinity>(),
                                        std::max(lp.lower.lpNorm<Eigen::Infinity>(),
                                                 lp.upper.lpNorm<Eigen::Infinity>()));
  const double c_scale = 1.0 + lp.c.lpNorm<Eigen::Infinity>();
  double primal = (lp.A * x - lp.b).lpNorm<Eigen::Infinity>();
  for (Index j = 0; j < x.size(); ++j) {
    primal = std::max({primal, lp.lower(j) - x(j), x(j) - lp.upper(j)});
  }
  r.primal = primal / b_scale;

  const VectorXd reduced = lp.c - lp.A.transpose() * y;
  double dual = 0.0;
  double comp = 0.0;
  for (Index j = 0; j < x.size(); ++j) {
    const double span = lp.upper(j) - lp.lower(j);
    const double tol = 1e-9 * (1.0 + span);
    const bool at_lower = x(j) - lp.lower(j) <= tol;
    const bool at_upper = lp.upper(j) - x(j) <= tol;
    if (at_lower && at_upper) continue;  // fixed variable: any sign allowed
    if (at_lower) {
      dual = std::max(dual, -reduced(j));
    } else if (at_upper) {
      dual = std::max(dual, reduced(j));
    } else {
      comp = std::max(comp, std::abs(reduced(j)));
    }
  }
  r.dual = dual / c_scale;
  r.complementarity = comp / c_scale;
  return r;
}

LpResult solve_lp(const LinearProgram& lp) {
  const Index n = lp.A.cols();
  if (lp.b.size() != lp.A.rows() || lp.c.size() != n || lp.lower.size() != n || lp.upper.size() != n) {
    throw SolverError("linear program dimensions are inconsistent");
  }
  for (Index j = 0; j < n; ++j) {
    if (!std::isfinite(lp.lower(j)) || !std::isfinite(lp.upper(j))) {
      throw SolverError("linear program requires finite variable bounds");
    }
    if (lp.lower(j) > lp.upper(j)) {
      LpResult empty;
      empty.status = LpStatus::infeasible;
      return empty;
    }
  }

  LpResult result;
  BoundedSimplex simplex(lp);
  if (!simplex.phase_one(result.iterations)) {
    result.status = LpStatus::infeasible;
    result.x = simplex.structural();
    return result;
  }
  simplex.phase_two(lp.c, result.iterations);
  result.status = LpStatus::optimal;
  result.x = simplex.structural();
  // Clip round-off outside the boxes.
  result.x = result.x.cwiseMax(lp.lower).cwiseMin(lp.upper);
  result.y = simplex.duals(lp.c);
  result.objective = lp.c.dot(result.x);
  result.kkt = kkt_residuals(lp, result.x, result.y);
  return result;
}

}  // namespace gridflow
