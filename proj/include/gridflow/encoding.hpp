#pragma once

#include <Eigen/Dense>

#include "gridflow/grid.hpp"
#include "gridflow/snapshot.hpp"

namespace gridflow {

/// L = I - D^{-1/2} A D^{-1/2}. Throws DataError on an isolated node.
Eigen::MatrixXd normalized_laplacian(const Network& network);

struct NodeEncoding {
  Eigen::MatrixXd p_node;       // N x m, orthonormal columns
  Eigen::VectorXd eigenvalues;  // m, ascending
};

/// Flips v so that its first entry with magnitude above 1e-10 is positive.
void sign_fix(Eigen::Ref<Eigen::VectorXd> v);

/// Default encoding length: 8 up to 50 nodes, 16 above, never more than N - 1.
int default_encoding_size(int num_nodes);

/// Eigenvectors of the m smallest non-trivial eigenvalues. Each column has
/// its first entry with magnitude above 1e-10 positive. Repeated eigenvalues
/// get the basis obtained by projecting e_1, e_2, ... onto the eigenspace,
/// orthonormalising, sign-fixing and sorting the columns in descending
/// lexicographic order.
NodeEncoding node_lpe(const Network& network, int m);

/// 2m x L: from-node encoding stacked on top of the to-node encoding.
Eigen::MatrixXd link_pe(const NodeEncoding& encoding, const Network& network);

inline constexpr int kNodeFeatures = 3;  // demand, eta_wind, eta_solar

/// F x N input matrix: demand / demand_max, eta_wind and eta_solar (0 where
/// the node has no generator of that carrier), then P_node transposed.
Eigen::MatrixXd build_features(const Network& network, const Snapshot& snapshot,
                               const Eigen::VectorXd& demand_max, const NodeEncoding& encoding);

/// Flattened (demand / demand_max, eta_wind, eta_solar) per node without the
/// positional part, as used by the baselines.
Eigen::VectorXd flat_features(const Network& network, const Snapshot& snapshot,
                              const Eigen::VectorXd& demand_max);

}  // namespace gridflow
