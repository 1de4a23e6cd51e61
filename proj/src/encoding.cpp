#include "gridflow/encoding.hpp"

#include <algorithm>
#include <cmath>

#include "gridflow/error.hpp"

namespace gridflow {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kTrivialEigenvalue = 1e-8;
constexpr double kDegenerateGap = 1e-8;
constexpr double kSignificant = 1e-10;


bool lex_greater(const VectorXd& a, const VectorXd& b) {
  for (Index i = 0; i < a.size(); ++i) {
    if (a(i) != b(i)) return a(i) > b(i);
  }
  return false;
}

// Deterministic orthonormal basis of span(Q).
MatrixXd canonical_basis(const MatrixXd& q) {
  const Index n = q.rows();
  const Index k = q.cols();
  const MatrixXd proj = q * q.transpose();
  std::vector<VectorXd> basis;
  for (Index i = 0; i < n && static_cast<Index>(basis.size()) < k; ++i) {
    VectorXd v = proj.col(i);
    for (int pass = 0; pass < 2; ++pass) {
      for (const VectorXd& b : basis) v -= b.dot(v) * b;
    }
    const double norm = v.norm();
    if (norm > 1e-6) basis.push_back(v / norm);
  }
  if (static_cast<Index>(basis.size()) != k) throw NumericError("eigenspace basis construction failed");
  for (VectorXd& b : basis) sign_fix(b);
  std::sort(basis.begin(), basis.end(), lex_greater);
  MatrixXd out(n, k);
  for (Index c = 0; c < k; ++c) out.col(c) = basis[static_cast<std::size_t>(c)];
  return out;
}

}  // namespace

void sign_fix(Eigen::Ref<VectorXd> v) {
  for (Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > kSignificant) {
      if (v(i) < 0.0) v = -v;
      return;
    }
  }
}

MatrixXd normalized_laplacian(const Network& network) {
  const MatrixXd a = adjacency(network);
  const VectorXd deg = a.rowwise().sum();
  if ((deg.array() <= 0.0).any()) throw DataError("normalized Laplacian: isolated node");
  const VectorXd inv_sqrt = deg.array().rsqrt();
  MatrixXd l = -(inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal());
  l.diagonal().array() += 1.0;
  return l;
}

int default_encoding_size(int num_nodes) {
  const int m = num_nodes <= 50 ? 8 : 16;
  return std::max(0, std::min(m, num_nodes - 1));
}

NodeEncoding node_lpe(const Network& network, int m) {
  const auto n = static_cast<Index>(network.num_nodes());
  if (m < 0 || m >= n) throw DataError("encoding size m must be in [0, N - 1]");
  const MatrixXd l = normalized_laplacian(network);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(l);
  if (eig.info() != Eigen::Success) throw NumericError("Laplacian eigendecomposition failed");
  const VectorXd& lambda = eig.eigenvalues();
  const MatrixXd& vecs = eig.eigenvectors();

  Index start = 0;
  while (start < n && lambda(start) < kTrivialEigenvalue) ++start;
  if (n - start < m) throw DataError("not enough non-trivial eigenvectors for the requested m");

  NodeEncoding enc;
  enc.p_node.resize(n, m);
  enc.eigenvalues.resize(m);
  Index filled = 0;
  Index i = start;
  while (filled < m) {
    Index j = i + 1;
    while (j < n && lambda(j) - lambda(j - 1) < kDegenerateGap) ++j;
    MatrixXd block = vecs.middleCols(i, j - i);
    if (j - i > 1) {
      block = canonical_basis(block);
    } else {
      sign_fix(block.col(0));
    }
    const Index take = std::min<Index>(j - i, m - filled);
    enc.p_node.middleCols(filled, take) = block.leftCols(take);
    enc.eigenvalues.segment(filled, take) = lambda.segment(i, take);
    filled += take;
    i = j;
  }
  return enc;
}

MatrixXd link_pe(const NodeEncoding& encoding, const Network& network) {
  const Topology topo = build_topology(network);
  const Index m = encoding.p_node.cols();
  if (encoding.p_node.rows() != static_cast<Index>(network.num_nodes())) {
    throw DataError("link_pe: encoding does not match the network");
  }
  MatrixXd out(2 * m, static_cast<Index>(network.num_links()));
  for (std::size_t l = 0; l < network.num_links(); ++l) {
    const auto c = static_cast<Index>(l);
    out.col(c).head(m) = encoding.p_node.row(topo.link_from[l]).transpose();
    out.col(c).tail(m) = encoding.p_node.row(topo.link_to[l]).transpose();
  }
  return out;
}

namespace {

void fill_node_features(const Network& network, const Snapshot& snapshot, const VectorXd& demand_max,
                        Eigen::Ref<MatrixXd> rows) {
  const auto n = static_cast<Index>(network.num_nodes());
  if (demand_max.size() != n) throw DataError("features: demand_max missing or wrong length");
  check_snapshot(network, snapshot);
  const Topology topo = build_topology(network);
  std::vector<bool> has_wind(static_cast<std::size_t>(n), false);
  std::vector<bool> has_solar(static_cast<std::size_t>(n), false);
  for (std::size_t g = 0; g < network.num_generators(); ++g) {
    const auto j = static_cast<std::size_t>(topo.gen_node[g]);
    if (network.generators[g].carrier == Carrier::wind) has_wind[j] = true;
    if (network.generators[g].carrier == Carrier::solar) has_solar[j] = true;
  }
  for (Index j = 0; j < n; ++j) {
    if (!(demand_max(j) > 0.0)) throw DataError("features: demand_max must be positive");
    rows(0, j) = snapshot.demand(j) / demand_max(j);
    rows(1, j) = has_wind[static_cast<std::size_t>(j)] ? snapshot.eta_wind(j) : 0.0;
    rows(2, j) = has_solar[static_cast<std::size_t>(j)] ? snapshot.eta_solar(j) : 0.0;
  }
}

}  // namespace

MatrixXd build_features(const Network& network, const Snapshot& snapshot, const VectorXd& demand_max,
                        const NodeEncoding& encoding) {
  const auto n = static_cast<Index>(network.num_nodes());
  if (encoding.p_node.rows() != n) throw DataError("features: encoding does not match the network");
  const Index m = encoding.p_node.cols();
  MatrixXd h(kNodeFeatures + m, n);
  fill_node_features(network, snapshot, demand_max, h.topRows(kNodeFeatures));
  h.bottomRows(m) = encoding.p_node.transpose();
  return h;
}

VectorXd flat_features(const Network& network, const Snapshot& snapshot, const VectorXd& demand_max) {
  MatrixXd rows(kNodeFeatures, static_cast<Index>(network.num_nodes()));
  fill_node_features(network, snapshot, demand_max, rows);
  return rows.reshaped();
}

}  // namespace gridflow
