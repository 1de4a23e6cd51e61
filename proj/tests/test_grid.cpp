#include <algorithm>
#include <queue>

#include "doctest.h"
#include "fixtures.hpp"
#include "gridflow/error.hpp"
#include "gridflow/grid.hpp"

using namespace gridflow;
using namespace gridflow::testing;

namespace {

// Plain breadth-first search distances, independent of the matrix-power route.
std::vector<int> bfs_within(const Network& net, int src, int hops) {
  const int n = static_cast<int>(net.num_nodes());
  std::vector<std::vector<int>> nbr(n);
  for (const Link& l : net.links) {
    nbr[l.from_node].push_back(l.to_node);
    nbr[l.to_node].push_back(l.from_node);
  }
  std::vector<int> dist(n, -1);
  std::queue<int> q;
  dist[src] = 0;
  q.push(src);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : nbr[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
    }
  }
  std::vector<int> out;
  for (int v = 0; v < n; ++v) {
    if (dist[v] >= 0 && dist[v] <= hops) out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("adjacency of small graphs") {
  const Eigen::MatrixXd a2 = adjacency(chain(2));
  CHECK(a2(0, 1) == 1.0);
  CHECK(a2(1, 0) == 1.0);
  CHECK(a2(0, 0) == 0.0);

  const Eigen::MatrixXd a3 = adjacency(chain(3));
  CHECK(a3(0, 2) == 0.0);
  CHECK(a3(0, 1) == 1.0);

  Network parallel = chain(2);
  parallel.links.push_back({7, 1, 0, 5.0, 1.0, 0.0});
  const Eigen::MatrixXd ap = adjacency(parallel);
  CHECK(ap(0, 1) == 1.0);
  CHECK(ap(1, 0) == 1.0);
}

TEST_CASE("adjacency is symmetric with zero diagonal on random graphs") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Network net = random_connected(rng, 2 + static_cast<int>(rng.below(12)), static_cast<int>(rng.below(6)));
    const Eigen::MatrixXd a = adjacency(net);
    CHECK(a.isApprox(a.transpose()));
    CHECK(a.diagonal().isZero());
  }
}

TEST_CASE("t-hop neighborhoods") {
  const Network path = chain(3);
  CHECK(t_hop_neighborhood(path, 0, 1) == std::vector<int>{0, 1});
  CHECK(t_hop_neighborhood(path, 1, 0) == std::vector<int>{1});
  CHECK(t_hop_neighborhood(path, 0, 2) == std::vector<int>{0, 1, 2});

  Rng rng(3);
  const Network g = random_connected(rng, 10, 3);
  for (int i = 0; i < 10; ++i) {
    CHECK(t_hop_neighborhood(g, i, 10).size() == 10);
    CHECK(t_hop_neighborhood(g, i, 0) == std::vector<int>{i});
  }
}

TEST_CASE("t-hop via boolean matrix powers equals BFS distance on 100 random graphs") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(14));
    const Network net = random_connected(rng, n, static_cast<int>(rng.below(5)));
    for (int hops = 0; hops <= 4; ++hops) {
      const Mask mask = hop_mask(net, hops);
      for (int i = 0; i < n; ++i) {
        std::vector<int> via_mask;
        for (int j = 0; j < n; ++j) {
          if (mask(i, j)) via_mask.push_back(j);
        }
        REQUIRE(via_mask == bfs_within(net, i, hops));
        if (hops > 0) {
          // Monotone in the radius.
          const Mask smaller = hop_mask(net, hops - 1);
          for (int j = 0; j < n; ++j) CHECK((!smaller(i, j) || mask(i, j)));
        }
      }
    }
  }
}

TEST_CASE("validate reports structural problems") {
  Network tri = from_edges(3, {{0, 1}, {1, 2}, {2, 0}});
  CHECK(validate(tri).ok());

  Network bad_gen = tri;
  bad_gen.generators.push_back({0, 42, Carrier::coal, 10.0, 125.0});
  const auto r1 = validate(bad_gen);
  CHECK(r1.has("unknown node"));
  CHECK(r1.summary().find("unknown node") != std::string::npos);

  Network split = from_edges(4, {{0, 1}, {2, 3}});
  const auto r2 = validate(split);
  CHECK(r2.has("not connected"));
  CHECK(r2.summary().find("graph not connected") != std::string::npos);

  Network zero_cap = tri;
  zero_cap.links[0].f_nom = 0.0;
  CHECK(validate(zero_cap).has("nonpositive capacity"));

  Network loop = tri;
  loop.links[1].to_node = loop.links[1].from_node;
  CHECK(validate(loop).has("self loop"));

  CHECK_THROWS_AS(require_valid(split), DataError);
}

TEST_CASE("incidence follows the withdrawal sign convention") {
  const Eigen::MatrixXd inc = incidence(chain(2));
  CHECK(inc(0, 0) == 1.0);
  CHECK(inc(1, 0) == -1.0);

  Rng rng(5);
  const Network net = random_connected(rng, 8, 4);
  const Eigen::MatrixXd m = incidence(net);
  CHECK(m.colwise().sum().isZero());
  CHECK((m.transpose() * Eigen::VectorXd::Ones(8)).isZero());
}

TEST_CASE("network JSON round trip and tiny generator drop") {
  Network net = from_edges(3, {{0, 1}, {1, 2}});
  net.links[0].marginal_cost = 3.642;
  net.links[1].efficiency = 0.9;
  add_generator(net, 0, Carrier::solar, 123.456789012345);
  add_generator(net, 2, Carrier::coal, 0.1 + 0.2);
  const Network back = network_from_json(network_to_json(net));
  CHECK(back == net);

  add_generator(net, 1, Carrier::wind, 0.0005);  // below 1 kW
  const Network dropped = network_from_json(network_to_json(net));
  CHECK(dropped.generators.size() == 2);

  CHECK_THROWS_AS(network_from_json("{\"format\":\"other/1\"}"), DataError);
  CHECK_THROWS_AS(network_from_json("not json"), DataError);
}

TEST_CASE("carrier merit order follows marginal cost") {
  for (std::size_t i = 0; i + 1 < kAllCarriers.size(); ++i) {
    CHECK(merit_rank(kAllCarriers[i]) < merit_rank(kAllCarriers[i + 1]));
    CHECK(default_marginal_cost(kAllCarriers[i]) < default_marginal_cost(kAllCarriers[i + 1]));
  }
  CHECK(parse_carrier("ocgt") == Carrier::ocgt);
  CHECK_FALSE(parse_carrier("nuclear").has_value());
}
