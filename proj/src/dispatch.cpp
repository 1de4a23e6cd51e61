#include "gridflow/dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gridflow/error.hpp"

namespace gridflow {

using Eigen::Index;
using Eigen::VectorXd;

VectorXd node_totals(const Network& network, const Snapshot& snapshot, const VectorXd& flows) {
  if (flows.size() != static_cast<Index>(network.num_links())) throw DataError("node_totals: one flow per link expected");
  return required_generation(network, build_topology(network), snapshot, flows);
}

VectorXd merit_order_dispatch(const Network& network, const Snapshot& snapshot, const VectorXd& totals,
                              const MeritOptions& options) {
  const Topology topo = build_topology(network);
  if (totals.size() != static_cast<Index>(network.num_nodes())) throw DataError("merit order: one total per node expected");
  const VectorXd avail = available_capacity(network, topo, snapshot);
  VectorXd out = VectorXd::Zero(static_cast<Index>(network.num_generators()));
  for (std::size_t j = 0; j < network.num_nodes(); ++j) {
    std::vector<int> order = topo.gens_at_node[j];
    if (options.strict_rank) {
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const Generator& ga = network.generators[static_cast<std::size_t>(a)];
        const Generator& gb = network.generators[static_cast<std::size_t>(b)];
        if (ga.marginal_cost != gb.marginal_cost) return ga.marginal_cost < gb.marginal_cost;
        return ga.id < gb.id;
      });
    }
    double remaining = totals(static_cast<Index>(j));
    if (remaining < -options.delta) {
      throw SolverError("negative generation required at node " + std::to_string(network.nodes[j].id));
    }
    for (int g : order) {
      if (remaining <= options.delta) break;
      const double take = std::min(remaining, avail(g));
      out(g) = take;
      remaining -= take;
    }
    if (remaining > options.delta) {
      throw SolverError("capacity exceeded at node " + std::to_string(network.nodes[j].id) + " by " +
                        std::to_string(remaining) + " MW");
    }
  }
  return out;
}

double dispatch_cost(const Network& network, const VectorXd& flows, const VectorXd& gen_output) {
  double cost = 0.0;
  for (std::size_t g = 0; g < network.num_generators(); ++g) {
    cost += network.generators[g].marginal_cost * gen_output(static_cast<Index>(g));
  }
  for (std::size_t l = 0; l < network.num_links(); ++l) {
    cost += network.links[l].marginal_cost * std::abs(flows(static_cast<Index>(l)));
  }
  return cost;
}

DispatchSolution project_and_dispatch(const Network& network, const Snapshot& snapshot, const VectorXd& f_hat,
                                      const MeritOptions& options) {
  DispatchSolution sol;
  const FlowProjection proj = project_feasible(network, snapshot, f_hat);
  sol.kkt_residual = proj.kkt_residual;
  if (!proj.feasible) return sol;
  sol.flows = proj.flows;
  sol.node_total = node_totals(network, snapshot, sol.flows);
  // The projection meets the capacity bounds up to solver round-off.
  const VectorXd cap = node_capacity(network, build_topology(network), snapshot);
  const VectorXd clipped = sol.node_total.cwiseMax(0.0).cwiseMin(cap);
  sol.gen_output = merit_order_dispatch(network, snapshot, clipped, options);
  sol.objective = dispatch_cost(network, sol.flows, sol.gen_output);
  sol.status = SolveStatus::optimal;
  return sol;
}

std::vector<DispatchSolution> project_and_dispatch_batch(const Network& network, std::span<const Snapshot> snapshots,
                                                         std::span<const VectorXd> f_hat, const MeritOptions& options) {
  if (snapshots.size() != f_hat.size()) throw DataError("project_and_dispatch: one prediction per snapshot expected");
  std::vector<DispatchSolution> out(snapshots.size());
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(snapshots.size()); ++i) {
    try {
      const auto k = static_cast<std::size_t>(i);
      out[k] = project_and_dispatch(network, snapshots[k], f_hat[k], options);
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw SolverError(error);
  return out;
}

}  // namespace gridflow
