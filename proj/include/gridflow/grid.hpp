#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gridflow {

/// Power precision: 1 kW expressed in MW. Generators below it are dropped and
/// merit-order dispatch treats residuals below it as satisfied.
inline constexpr double kPowerPrecision = 1e-3;

enum class Carrier : int { solar = 0, wind = 1, ocgt = 2, coal = 3 };

inline constexpr std::array<Carrier, 4> kAllCarriers = {Carrier::solar, Carrier::wind,
                                                       Carrier::ocgt, Carrier::coal};

/// Position in the merit order (0 = cheapest). Follows the ascending
/// actual-marginal-cost ranking solar < wind < OCGT < coal.
constexpr int merit_rank(Carrier c) { return static_cast<int>(c); }

constexpr bool is_renewable(Carrier c) { return c == Carrier::solar || c == Carrier::wind; }

/// Actual marginal cost (currency/MWh) including the CO2 component.
constexpr double default_marginal_cost(Carrier c) {
  switch (c) {
    case Carrier::solar: return 0.010;
    case Carrier::wind: return 0.015;
    case Carrier::ocgt: return 121.89;
    case Carrier::coal: return 125.00;
  }
  return 0.0;
}

std::string_view carrier_name(Carrier c);
std::optional<Carrier> parse_carrier(std::string_view name);

struct Node {
  int id = 0;
  std::string name;

  bool operator==(const Node&) const = default;
};

struct Generator {
  int id = 0;
  int node_id = 0;
  Carrier carrier = Carrier::coal;
  double p_nom = 0.0;          // MW
  double marginal_cost = 0.0;  // currency/MWh

  bool operator==(const Generator&) const = default;
};

/// Controllable transport link. Positive flow withdraws power at from_node.
struct Link {
  int id = 0;
  int from_node = 0;
  int to_node = 0;
  double f_nom = 0.0;  // MW
  double efficiency = 1.0;
  double marginal_cost = 0.0;  // currency/MWh

  bool operator==(const Link&) const = default;
};

/// Immutable once validated; safe to share read-only across threads.
struct Network {
  std::vector<Node> nodes;
  std::vector<Link> links;
  std::vector<Generator> generators;

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_links() const { return links.size(); }
  std::size_t num_generators() const { return generators.size(); }

  bool operator==(const Network&) const = default;
};

/// Index-based view of a network: ids resolved to positions.
struct Topology {
  std::vector<int> link_from;  // node index per link
  std::vector<int> link_to;
  std::vector<int> gen_node;  // node index per generator
  /// Generator indices per node, sorted by (merit rank, id).
  std::vector<std::vector<int>> gens_at_node;
};

/// Throws DataError when a link or generator references an unknown node id.
Topology build_topology(const Network& network);

struct ValidationIssue {
  std::string code;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
  bool has(std::string_view code) const;
  std::string summary() const;
};

ValidationReport validate(const Network& network);

/// Throws DataError carrying the report summary if validation fails.
void require_valid(const Network& network);

/// Symmetric 0/1 adjacency with zero diagonal; parallel links collapse to 1.
Eigen::MatrixXd adjacency(const Network& network);

/// N x L signed incidence: +1 at from_node, -1 at to_node.
Eigen::MatrixXd incidence(const Network& network);

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Row i marks the nodes j with ((A + I)^hops)_{ij} > 0.
Mask hop_mask(const Network& network, int hops);

/// Node indices within `hops` links of node index `node`, ascending.
std::vector<int> t_hop_neighborhood(const Network& network, int node, int hops);

/// Removes generators whose nominal power is below kPowerPrecision.
void drop_tiny_generators(Network& network);

// gridflow-net/1 JSON document.
inline constexpr std::string_view kNetworkFormat = "gridflow-net/1";
std::string network_to_json(const Network& network);
Network network_from_json(std::string_view text);
void save_network(const Network& network, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace gridflow
