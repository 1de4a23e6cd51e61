#pragma once

#include <Eigen/Dense>
#include <vector>

namespace gridflow {

/// min c'x  s.t.  A x = b,  lower <= x <= upper  (all bounds finite).
struct LinearProgram {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

enum class LpStatus { optimal, infeasible };

/// Relative KKT residuals of a primal/dual pair.
struct KktResiduals {
  double primal = 0.0;           // |Ax - b| and bound violations
  double dual = 0.0;             // sign violations of reduced costs
  double complementarity = 0.0;  // reduced cost on strictly interior variables
  double max() const;
};

struct LpResult {
  LpStatus status = LpStatus::infeasible;
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // equality multipliers
  double objective = 0.0;
  KktResiduals kkt;
  int iterations = 0;
};

/// Bounded-variable primal simplex (dense tableau, two phases). Entering
/// variables follow Dantzig's rule with lowest-index tie breaks and fall back
/// to Bland's rule on long degenerate runs, so results are deterministic.
LpResult solve_lp(const LinearProgram& lp);

/// Residuals of (x, y) for `lp`, evaluated from scratch.
KktResiduals kkt_residuals(const LinearProgram& lp, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& y);

}  // namespace gridflow
