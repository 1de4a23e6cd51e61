#include "gridflow/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_map>

#include "gridflow/error.hpp"
#include "json.hpp"

namespace gridflow {

using nlohmann::json;

std::string_view carrier_name(Carrier c) {
  switch (c) {
    case Carrier::solar: return "solar";
    case Carrier::wind: return "wind";
    case Carrier::ocgt: return "ocgt";
    case Carrier::coal: return "coal";
  }
  return "unknown";
}

std::optional<Carrier> parse_carrier(std::string_view name) {
  for (Carrier c : kAllCarriers) {
    if (carrier_name(c) == name) return c;
  }
  return std::nullopt;
}

namespace {

std::unordered_map<int, int> node_positions(const Network& network) {
  std::unordered_map<int, int> pos;
  for (std::size_t i = 0; i < network.nodes.size(); ++i) {
    pos.emplace(network.nodes[i].id, static_cast<int>(i));
  }
  return pos;
}

}  // namespace

Topology build_topology(const Network& network) {
  const auto pos = node_positions(network);
  auto lookup = [&](int id, std::string_view what, int owner) {
    auto it = pos.find(id);
    if (it == pos.end()) {
      std::ostringstream msg;
      msg << what << " " << owner << " references unknown node " << id;
      throw DataError(msg.str());
    }
    return it->second;
  };

  Topology topo;
  topo.link_from.reserve(network.num_links());
  topo.link_to.reserve(network.num_links());
  for (const Link& l : network.links) {
    topo.link_from.push_back(lookup(l.from_node, "link", l.id));
    topo.link_to.push_back(lookup(l.to_node, "link", l.id));
  }
  topo.gens_at_node.resize(network.num_nodes());
  for (std::size_t g = 0; g < network.generators.size(); ++g) {
    const Generator& gen = network.generators[g];
    const int n = lookup(gen.node_id, "generator", gen.id);
    topo.gen_node.push_back(n);
    topo.gens_at_node[n].push_back(static_cast<int>(g));
  }
  for (auto& gens : topo.gens_at_node) {
    std::sort(gens.begin(), gens.end(), [&](int a, int b) {
      const Generator& ga = network.generators[a];
      const Generator& gb = network.generators[b];
      if (merit_rank(ga.carrier) != merit_rank(gb.carrier)) {
        return merit_rank(ga.carrier) < merit_rank(gb.carrier);
      }
      return ga.id < gb.id;
    });
  }
  return topo;
}

bool ValidationReport::has(std::string_view code) const {
  return std::any_of(issues.begin(), issues.end(),
                     [&](const ValidationIssue& i) { return i.code == code; });
}

std::string ValidationReport::summary() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < issues.size(); ++i) {
    if (i) out << "; ";
    out << issues[i].message;
  }
  return out.str();
}

ValidationReport validate(const Network& network) {
  ValidationReport report;
  auto add = [&](std::string code, std::string message) {
    report.issues.push_back({std::move(code), std::move(message)});
  };

  if (network.nodes.empty()) add("empty", "network has no nodes");

  std::set<int> node_ids;
  for (const Node& n : network.nodes) {
    if (!node_ids.insert(n.id).second) add("duplicate id", "duplicate node id " + std::to_string(n.id));
  }
  std::set<int> link_ids;
  for (const Link& l : network.links) {
    const std::string tag = "link " + std::to_string(l.id);
    if (!link_ids.insert(l.id).second) add("duplicate id", "duplicate " + tag);
    if (!node_ids.count(l.from_node) || !node_ids.count(l.to_node)) {
      add("unknown node", tag + " references unknown node");
    }
    if (l.from_node == l.to_node) add("self loop", tag + " joins a node to itself");
    if (!(l.f_nom > 0.0) || !std::isfinite(l.f_nom)) {
      add("nonpositive capacity", tag + " has nonpositive f_nom");
    }
    if (!(l.efficiency > 0.0 && l.efficiency <= 1.0)) {
      add("bad efficiency", tag + " efficiency outside (0, 1]");
    }
    if (!(l.marginal_cost >= 0.0) || !std::isfinite(l.marginal_cost)) {
      add("bad cost", tag + " has invalid marginal cost");
    }
  }
  std::set<int> gen_ids;
  for (const Generator& g : network.generators) {
    const std::string tag = "generator " + std::to_string(g.id);
    if (!gen_ids.insert(g.id).second) add("duplicate id", "duplicate " + tag);
    if (!node_ids.count(g.node_id)) add("unknown node", tag + " references unknown node");
    if (!(g.p_nom >= 0.0) || !std::isfinite(g.p_nom)) {
      add("nonpositive capacity", tag + " has negative p_nom");
    }
    if (!(g.marginal_cost >= 0.0) || !std::isfinite(g.marginal_cost)) {
      add("bad cost", tag + " has invalid marginal cost");
    }
  }

  // Connectivity over links whose endpoints resolve.
  if (!network.nodes.empty() && !report.has("duplicate id")) {
    const auto pos = node_positions(network);
    std::vector<std::vector<int>> nbr(network.num_nodes());
    for (const Link& l : network.links) {
      auto a = pos.find(l.from_node);
      auto b = pos.find(l.to_node);
      if (a == pos.end() || b == pos.end()) continue;
      nbr[a->second].push_back(b->second);
      nbr[b->second].push_back(a->second);
    }
    std::vector<bool> seen(network.num_nodes(), false);
    std::queue<int> frontier;
    frontier.push(0);
    seen[0] = true;
    std::size_t count = 1;
    while (!frontier.empty()) {
      const int u = frontier.front();
      frontier.pop();
      for (int v : nbr[u]) {
        if (!seen[v]) {
          seen[v] = true;
          ++count;
          frontier.push(v);
        }
      }
    }
    if (count != network.num_nodes()) add("not connected", "graph not connected");
  }
  return report;
}

void require_valid(const Network& network) {
  const ValidationReport report = validate(network);
  if (!report.ok()) throw DataError("invalid network: " + report.summary());
}

Eigen::MatrixXd adjacency(const Network& network) {
  const Topology topo = build_topology(network);
  const auto n = static_cast<Eigen::Index>(network.num_nodes());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t l = 0; l < network.num_links(); ++l) {
    const int i = topo.link_from[l];
    const int j = topo.link_to[l];
    if (i == j) continue;
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

Eigen::MatrixXd incidence(const Network& network) {
  const Topology topo = build_topology(network);
  Eigen::MatrixXd inc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(network.num_nodes()),
                                              static_cast<Eigen::Index>(network.num_links()));
  for (std::size_t l = 0; l < network.num_links(); ++l) {
    const auto c = static_cast<Eigen::Index>(l);
    inc(topo.link_from[l], c) += 1.0;
    inc(topo.link_to[l], c) -= 1.0;
  }
  return inc;
}

Mask hop_mask(const Network& network, int hops) {
  if (hops < 0) throw DataError("hop radius must be non-negative");
  const auto n = static_cast<Eigen::Index>(network.num_nodes());
  // Boolean powers of (A + I); saturating keeps entries 0/1 for any radius.
  Mask step = (adjacency(network).array() > 0.5);
  for (Eigen::Index i = 0; i < n; ++i) step(i, i) = true;
  Mask reach = Mask::Constant(n, n, false);
  for (Eigen::Index i = 0; i < n; ++i) reach(i, i) = true;
  for (int t = 0; t < hops; ++t) {
    Mask next = Mask::Constant(n, n, false);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < n; ++k) {
        if (!reach(i, k)) continue;
        next.row(i) = next.row(i) || step.row(k);
      }
    }
    if ((next == reach).all()) break;
    reach = std::move(next);
  }
  return reach;
}

std::vector<int> t_hop_neighborhood(const Network& network, int node, int hops) {
  const Mask mask = hop_mask(network, hops);
  if (node < 0 || node >= mask.rows()) throw DataError("node index out of range");
  std::vector<int> out;
  for (Eigen::Index j = 0; j < mask.cols(); ++j) {
    if (mask(node, j)) out.push_back(static_cast<int>(j));
  }
  return out;
}

void drop_tiny_generators(Network& network) {
  std::erase_if(network.generators,
                [](const Generator& g) { return g.p_nom < kPowerPrecision; });
}

std::string network_to_json(const Network& network) {
  json doc;
  doc["format"] = std::string(kNetworkFormat);
  doc["units"] = {{"power", "MW"}, {"cost", "currency/MWh"}};
  json nodes = json::array();
  for (const Node& n : network.nodes) nodes.push_back({{"id", n.id}, {"name", n.name}});
  json links = json::array();
  for (const Link& l : network.links) {
    links.push_back({{"id", l.id},
                     {"from_node", l.from_node},
                     {"to_node", l.to_node},
                     {"f_nom", l.f_nom},
                     {"efficiency", l.efficiency},
                     {"marginal_cost", l.marginal_cost}});
  }
  json gens = json::array();
  for (const Generator& g : network.generators) {
    gens.push_back({{"id", g.id},
                    {"node_id", g.node_id},
                    {"carrier", std::string(carrier_name(g.carrier))},
                    {"p_nom", g.p_nom},
                    {"marginal_cost", g.marginal_cost}});
  }
  doc["nodes"] = std::move(nodes);
  doc["links"] = std::move(links);
  doc["generators"] = std::move(gens);
  return doc.dump(2);
}

Network network_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("network file is not valid JSON: ") + e.what());
  }
  if (!doc.contains("format") || doc["format"] != std::string(kNetworkFormat)) {
    throw DataError("network file: expected format \"" + std::string(kNetworkFormat) + "\"");
  }
  Network net;
  try {
    for (const auto& n : doc.at("nodes")) {
      net.nodes.push_back({n.at("id").get<int>(), n.value("name", std::string{})});
    }
    for (const auto& l : doc.at("links")) {
      Link link;
      link.id = l.at("id").get<int>();
      link.from_node = l.at("from_node").get<int>();
      link.to_node = l.at("to_node").get<int>();
      link.f_nom = l.at("f_nom").get<double>();
      link.efficiency = l.value("efficiency", 1.0);
      link.marginal_cost = l.value("marginal_cost", 0.0);
      net.links.push_back(link);
    }
    for (const auto& g : doc.at("generators")) {
      Generator gen;
      gen.id = g.at("id").get<int>();
      gen.node_id = g.at("node_id").get<int>();
      const auto name = g.at("carrier").get<std::string>();
      const auto carrier = parse_carrier(name);
      if (!carrier) throw DataError("network file: unknown carrier \"" + name + "\"");
      gen.carrier = *carrier;
      gen.p_nom = g.at("p_nom").get<double>();
      gen.marginal_cost = g.value("marginal_cost", default_marginal_cost(gen.carrier));
      net.generators.push_back(gen);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("network file: ") + e.what());
  }
  drop_tiny_generators(net);
  return net;
}

void save_network(const Network& network, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << network_to_json(network) << '\n';
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return network_from_json(buf.str());
}

}  // namespace gridflow
