#pragma once

#include <Eigen/Dense>

#include "gridflow/grid.hpp"

namespace gridflow {

/// One timestep of exogenous inputs. Vectors are indexed by node position.
struct Snapshot {
  int step = 0;
  Eigen::VectorXd demand;     // MW, >= 0
  Eigen::VectorXd eta_wind;   // capacity coefficient in [0, 1]
  Eigen::VectorXd eta_solar;  // capacity coefficient in [0, 1]

  bool operator==(const Snapshot& other) const;
};

/// c = eta for renewables, 1 for conventional carriers.
double capacity_coefficient(const Snapshot& snapshot, Carrier carrier, int node_index);

/// c * p_nom per generator.
Eigen::VectorXd available_capacity(const Network& network, const Topology& topo,
                                   const Snapshot& snapshot);

/// Sum of available capacity per node.
Eigen::VectorXd node_capacity(const Network& network, const Topology& topo,
                              const Snapshot& snapshot);

/// Throws DataError if sizes disagree with the network or a value is out of range.
void check_snapshot(const Network& network, const Snapshot& snapshot);

}  // namespace gridflow
