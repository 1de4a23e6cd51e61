#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "gridflow/grid.hpp"
#include "gridflow/oracle.hpp"
#include "gridflow/snapshot.hpp"

namespace gridflow {

inline constexpr double kDispatchDelta = 1e-3;  // MW

/// Demand plus net signed outflow per node, flows in MW.
Eigen::VectorXd node_totals(const Network& network, const Snapshot& snapshot, const Eigen::VectorXd& flows);

struct MeritOptions {
  double delta = kDispatchDelta;
  /// Rank generators by their own marginal cost instead of the carrier table.
  bool strict_rank = false;
};

/// Fills each node's generators cheapest first up to c * p_nom.
/// Throws SolverError("capacity exceeded ...") when a node total cannot be met.
Eigen::VectorXd merit_order_dispatch(const Network& network, const Snapshot& snapshot,
                                     const Eigen::VectorXd& totals, const MeritOptions& options = {});

/// Generation cost plus link cost on |F|.
double dispatch_cost(const Network& network, const Eigen::VectorXd& flows, const Eigen::VectorXd& gen_output);

/// Projection of normalized predictions followed by merit order. The result
/// uses the oracle's solution type; status is infeasible when the projection
/// has no solution.
DispatchSolution project_and_dispatch(const Network& network, const Snapshot& snapshot,
                                      const Eigen::VectorXd& f_hat, const MeritOptions& options = {});

std::vector<DispatchSolution> project_and_dispatch_batch(const Network& network,
                                                         std::span<const Snapshot> snapshots,
                                                         std::span<const Eigen::VectorXd> f_hat,
                                                         const MeritOptions& options = {});

}  // namespace gridflow
