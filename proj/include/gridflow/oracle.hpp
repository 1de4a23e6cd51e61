#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <vector>

#include "gridflow/grid.hpp"
#include "gridflow/lp.hpp"
#include "gridflow/snapshot.hpp"

namespace gridflow {

struct OracleOptions {
  /// Charge link marginal cost on |F| (flow split into two directed parts).
  bool link_cost = true;
  /// Apply link efficiency to the receiving end in the balance equations.
  bool strict_efficiency = false;
};

enum class SolveStatus { optimal, infeasible };

struct DispatchSolution {
  SolveStatus status = SolveStatus::infeasible;
  Eigen::VectorXd flows;       // MW per link, signed
  Eigen::VectorXd gen_output;  // MW per generator
  Eigen::VectorXd node_total;  // MW per node
  double objective = 0.0;      // currency/h
  double kkt_residual = 0.0;
};

inline constexpr double kFeasibilityTolerance = 1e-6;  // MW
inline constexpr double kKktTolerance = 1e-7;          // relative

struct FeasibilityReport {
  double max_flow_violation = 0.0;
  double max_gen_violation = 0.0;
  double max_balance_residual = 0.0;
  bool feasible = true;
};

/// Generation each node must supply for the given flows:
/// demand plus net signed outflow (receiving ends scaled by efficiency in
/// strict mode).
Eigen::VectorXd required_generation(const Network& network, const Topology& topo,
                                    const Snapshot& snapshot, const Eigen::VectorXd& flows,
                                    const OracleOptions& options = {});

/// The DCOPF transport LP for one snapshot. Variable order: generators, then
/// one variable per link (or a forward/backward pair when split).
LinearProgram dcopf_program(const Network& network, const Snapshot& snapshot,
                            const OracleOptions& options = {});

/// Exact cost-minimal dispatch. Throws SolverError if the optimum cannot be
/// certified to kKktTolerance.
DispatchSolution solve_dcopf(const Network& network, const Snapshot& snapshot,
                             const OracleOptions& options = {});

/// Reference loop over snapshots.
std::vector<DispatchSolution> solve_batch_serial(const Network& network,
                                                 std::span<const Snapshot> snapshots,
                                                 const OracleOptions& options = {});

/// Same results as solve_batch_serial, snapshots distributed over OpenMP threads.
std::vector<DispatchSolution> solve_batch(const Network& network, std::span<const Snapshot> snapshots,
                                          const OracleOptions& options = {});

FeasibilityReport check_feasible(const Network& network, const Snapshot& snapshot,
                                 const Eigen::VectorXd& flows, const Eigen::VectorXd& gen_output,
                                 const OracleOptions& options = {});

struct FlowProjection {
  bool feasible = false;
  Eigen::VectorXd flows;  // MW
  double kkt_residual = 0.0;
  std::vector<int> active;
};

/// Euclidean projection of f_hat * f_nom onto the flow box intersected with
/// 0 <= demand + net outflow <= available capacity at every node.
FlowProjection project_feasible(const Network& network, const Snapshot& snapshot,
                                const Eigen::VectorXd& f_hat);

// Solutions file: CSV rows (step, kind, id, value_MW) with kind "flow" or
// "gen", plus a gridflow-solutions/1 JSON manifest carrying status and
// objective per snapshot.
inline constexpr std::string_view kSolutionsFormat = "gridflow-solutions/1";

struct SolutionSet {
  std::vector<int> steps;
  std::vector<DispatchSolution> solutions;
};

void save_solutions(const Network& network, const SolutionSet& set,
                    const std::filesystem::path& manifest_path);
SolutionSet load_solutions(const Network& network, const std::filesystem::path& manifest_path);

}  // namespace gridflow
