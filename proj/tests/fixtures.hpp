#pragma once

#include <set>
#include <utility>
#include <vector>

#include "gridflow/grid.hpp"
#include "gridflow/rng.hpp"
#include "gridflow/snapshot.hpp"

namespace gridflow::testing {

inline Network chain(int n, double f_nom = 10.0) {
  Network net;
  for (int i = 0; i < n; ++i) net.nodes.push_back({i, "n" + std::to_string(i)});
  for (int i = 0; i + 1 < n; ++i) net.links.push_back({i, i, i + 1, f_nom, 1.0, 0.0});
  return net;
}

inline Network from_edges(int n, const std::vector<std::pair<int, int>>& edges, double f_nom = 10.0) {
  Network net;
  for (int i = 0; i < n; ++i) net.nodes.push_back({i, "n" + std::to_string(i)});
  int id = 0;
  for (auto [a, b] : edges) net.links.push_back({id++, a, b, f_nom, 1.0, 0.0});
  return net;
}

/// Random connected graph: random tree plus `extra` distinct edges.
inline Network random_connected(Rng& rng, int n, int extra, double f_lo = 1.0, double f_hi = 10.0) {
  std::vector<std::pair<int, int>> edges;
  std::set<std::pair<int, int>> seen;
  for (int i = 1; i < n; ++i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
    edges.emplace_back(j, i);
    seen.insert({j, i});
  }
  int attempts = 0;
  while (extra > 0 && attempts++ < 1000 && n > 2) {
    int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (!seen.insert({a, b}).second) continue;
    edges.emplace_back(rng.bernoulli(0.5) ? std::pair{a, b} : std::pair{b, a});
    --extra;
  }
  Network net = from_edges(n, edges);
  for (Link& l : net.links) l.f_nom = rng.uniform(f_lo, f_hi);
  return net;
}

inline Snapshot flat_snapshot(const Network& net, double demand = 0.0, double eta_wind = 1.0,
                              double eta_solar = 1.0) {
  const auto n = static_cast<Eigen::Index>(net.num_nodes());
  Snapshot s;
  s.demand = Eigen::VectorXd::Constant(n, demand);
  s.eta_wind = Eigen::VectorXd::Constant(n, eta_wind);
  s.eta_solar = Eigen::VectorXd::Constant(n, eta_solar);
  return s;
}

inline void add_generator(Network& net, int node, Carrier c, double p_nom) {
  const int id = static_cast<int>(net.generators.size());
  net.generators.push_back({id, node, c, p_nom, default_marginal_cost(c)});
}

/// Small random dispatch instance: connected graph with up to `max_links`
/// links, a handful of generators and random demand and weather.
struct DispatchCase {
  Network network;
  Snapshot snapshot;
};

inline DispatchCase random_dispatch_case(Rng& rng, int min_nodes, int max_nodes, int max_links,
                                         bool link_costs) {
  const int n = min_nodes + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_nodes - min_nodes + 1)));
  const int extra = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_links - (n - 1) + 1)));
  DispatchCase out;
  out.network = random_connected(rng, n, extra, 2.0, 30.0);
  if (link_costs) {
    for (Link& l : out.network.links) l.marginal_cost = rng.bernoulli(0.5) ? 3.642 : 0.0;
  }
  const int gens = 1 + static_cast<int>(rng.below(4));
  for (int k = 0; k < gens; ++k) {
    const Carrier c = kAllCarriers[rng.below(kAllCarriers.size())];
    add_generator(out.network, static_cast<int>(rng.below(static_cast<std::uint64_t>(n))), c,
                  rng.uniform(5.0, 50.0));
  }
  out.snapshot = flat_snapshot(out.network);
  for (int j = 0; j < n; ++j) {
    out.snapshot.demand(j) = rng.bernoulli(0.3) ? 0.0 : rng.uniform(0.0, 20.0);
    out.snapshot.eta_wind(j) = rng.uniform();
    out.snapshot.eta_solar(j) = rng.bernoulli(0.2) ? 0.0 : rng.uniform();
  }
  return out;
}

/// One node, several generators (repeated carriers allowed), demand within
/// the available capacity.
inline DispatchCase single_node_case(Rng& rng) {
  DispatchCase out;
  out.network = chain(1);
  const int gens = 1 + static_cast<int>(rng.below(6));
  for (int k = 0; k < gens; ++k) {
    add_generator(out.network, 0, kAllCarriers[rng.below(kAllCarriers.size())], rng.uniform(5.0, 50.0));
  }
  out.snapshot = flat_snapshot(out.network);
  out.snapshot.eta_wind(0) = rng.uniform();
  out.snapshot.eta_solar(0) = rng.bernoulli(0.2) ? 0.0 : rng.uniform();
  double cap = 0.0;
  for (const Generator& g : out.network.generators) {
    cap += g.p_nom * (g.carrier == Carrier::wind    ? out.snapshot.eta_wind(0)
                      : g.carrier == Carrier::solar ? out.snapshot.eta_solar(0)
                                                    : 1.0);
  }
  out.snapshot.demand(0) = cap * rng.uniform();
  return out;
}

}  // namespace gridflow::testing
