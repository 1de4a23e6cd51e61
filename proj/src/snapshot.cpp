#include "gridflow/snapshot.hpp"

#include <cmath>
#include <string>

#include "gridflow/error.hpp"

namespace gridflow {

namespace {

bool same(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

}  // namespace

bool Snapshot::operator==(const Snapshot& other) const {
  return step == other.step && same(demand, other.demand) && same(eta_wind, other.eta_wind) &&
         same(eta_solar, other.eta_solar);
}

double capacity_coefficient(const Snapshot& snapshot, Carrier carrier, int node_index) {
  switch (carrier) {
    case Carrier::solar: return snapshot.eta_solar(node_index);
    case Carrier::wind: return snapshot.eta_wind(node_index);
    default: return 1.0;
  }
}

Eigen::VectorXd available_capacity(const Network& network, const Topology& topo,
                                   const Snapshot& snapshot) {
  Eigen::VectorXd cap(static_cast<Eigen::Index>(network.num_generators()));
  for (std::size_t g = 0; g < network.num_generators(); ++g) {
    const Generator& gen = network.generators[g];
    cap(static_cast<Eigen::Index>(g)) =
        capacity_coefficient(snapshot, gen.carrier, topo.gen_node[g]) * gen.p_nom;
  }
  return cap;
}

Eigen::VectorXd node_capacity(const Network& network, const Topology& topo,
                              const Snapshot& snapshot) {
  const Eigen::VectorXd per_gen = available_capacity(network, topo, snapshot);
  Eigen::VectorXd cap = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(network.num_nodes()));
  for (std::size_t g = 0; g < network.num_generators(); ++g) {
    cap(topo.gen_node[g]) += per_gen(static_cast<Eigen::Index>(g));
  }
  return cap;
}

void check_snapshot(const Network& network, const Snapshot& snapshot) {
  const auto n = static_cast<Eigen::Index>(network.num_nodes());
  const std::string tag = "snapshot " + std::to_string(snapshot.step);
  if (snapshot.demand.size() != n || snapshot.eta_wind.size() != n || snapshot.eta_solar.size() != n) {
    throw DataError(tag + ": vector sizes do not match the network");
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(snapshot.demand(j) >= 0.0) || !std::isfinite(snapshot.demand(j))) {
      throw DataError(tag + ": demand must be finite and non-negative");
    }
    for (double eta : {snapshot.eta_wind(j), snapshot.eta_solar(j)}) {
      if (!(eta >= 0.0 && eta <= 1.0)) throw DataError(tag + ": eta outside [0, 1]");
    }
  }
}

}  // namespace gridflow
