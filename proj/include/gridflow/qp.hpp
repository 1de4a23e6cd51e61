#pragma once

#include <Eigen/Dense>
#include <vector>

namespace gridflow {

/// Euclidean projection of `target` onto {x : C x <= d, E x = e}.
struct ProjectionProblem {
  Eigen::VectorXd target;
  Eigen::MatrixXd C;
  Eigen::VectorXd d;
  Eigen::MatrixXd E;
  Eigen::VectorXd e;
};

struct ProjectionResult {
  bool feasible = false;
  Eigen::VectorXd x;
  Eigen::VectorXd ineq_multipliers;  // one per row of C, >= 0
  Eigen::VectorXd eq_multipliers;    // one per row of E
  std::vector<int> active;           // active inequality rows
  double kkt_residual = 0.0;         // relative to 1 + |target|_inf
  int iterations = 0;
};

/// Goldfarb-Idnani dual active-set method specialised to an identity
/// Hessian. Starts from the unconstrained minimiser (the target itself) and
/// adds the most violated constraint until the iterate is primal feasible.
ProjectionResult project_onto_polytope(const ProjectionProblem& problem);

/// Stationarity, dual sign, feasibility and complementarity residual of a
/// candidate projection, relative to 1 + |target|_inf.
double projection_kkt_residual(const ProjectionProblem& problem, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& ineq_multipliers,
                               const Eigen::VectorXd& eq_multipliers);

}  // namespace gridflow
