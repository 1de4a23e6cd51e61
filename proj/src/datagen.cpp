#include "gridflow/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "gridflow/error.hpp"
#include "gridflow/oracle.hpp"
#include "gridflow/rng.hpp"
#include "gridflow/textio.hpp"
#include "json.hpp"

namespace gridflow {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr double kPeakFactor = 1.3;  // daily swing plus noise headroom

// Substream ids for the generator.
enum Stream : std::uint64_t { kTopology = 1, kFleet, kLinks, kBase, kWind, kSolar, kDemand, kSplit };

}  // namespace

double peak_demand_capability(const CapacityProfile& profile, int n_nodes) {
  return n_nodes * profile.base_demand.hi * kPeakFactor;
}

Network synth_network(std::uint64_t seed, int n_nodes, double avg_degree, const CapacityProfile& profile) {
  if (n_nodes < 2) throw DataError("synth_network: n_nodes must be at least 2");
  if (!(avg_degree >= 1.0)) throw DataError("synth_network: avg_degree must be at least 1");

  Network net;
  for (int i = 0; i < n_nodes; ++i) net.nodes.push_back({i, "bus" + std::to_string(i)});

  Rng topo = Rng::substream(seed, kTopology);
  std::set<std::pair<int, int>> edges;
  std::vector<std::pair<int, int>> ordered;
  for (int i = 1; i < n_nodes; ++i) {
    const int j = static_cast<int>(topo.below(static_cast<std::uint64_t>(i)));
    edges.insert({j, i});
    ordered.emplace_back(j, i);
  }
  const auto max_edges = static_cast<std::size_t>(n_nodes) * static_cast<std::size_t>(n_nodes - 1) / 2;
  const auto target = std::min<std::size_t>(
      max_edges, static_cast<std::size_t>(std::lround(n_nodes * avg_degree / 2.0)));
  while (ordered.size() < target) {
    int a = static_cast<int>(topo.below(static_cast<std::uint64_t>(n_nodes)));
    int b = static_cast<int>(topo.below(static_cast<std::uint64_t>(n_nodes)));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (edges.insert({a, b}).second) ordered.emplace_back(a, b);
  }
  Rng links = Rng::substream(seed, kLinks);
  for (std::size_t l = 0; l < ordered.size(); ++l) {
    auto [a, b] = ordered[l];
    if (links.bernoulli(0.5)) std::swap(a, b);
    const double f_nom = links.bernoulli(0.5) ? profile.link_f_nom[0] : profile.link_f_nom[1];
    net.links.push_back({static_cast<int>(l), a, b, f_nom, 1.0, profile.link_marginal_cost});
  }

  std::vector<int> degree(static_cast<std::size_t>(n_nodes), 0);
  for (const Link& l : net.links) {
    ++degree[static_cast<std::size_t>(l.from_node)];
    ++degree[static_cast<std::size_t>(l.to_node)];
  }
  std::vector<int> by_degree(static_cast<std::size_t>(n_nodes));
  for (int i = 0; i < n_nodes; ++i) by_degree[static_cast<std::size_t>(i)] = i;
  std::stable_sort(by_degree.begin(), by_degree.end(),
                   [&](int a, int b) { return degree[static_cast<std::size_t>(a)] > degree[static_cast<std::size_t>(b)]; });
  const auto n_hubs = static_cast<std::size_t>(
      std::clamp<long>(std::lround(profile.hubs_per_ten * n_nodes / 10.0), 1L, n_nodes));
  std::vector<bool> hub(static_cast<std::size_t>(n_nodes), false);
  for (std::size_t h = 0; h < n_hubs; ++h) hub[static_cast<std::size_t>(by_degree[h])] = true;

  Rng fleet = Rng::substream(seed, kFleet);
  int next_id = 0;
  auto draw = [&](int node, Carrier c) {
    const auto k = static_cast<std::size_t>(c);
    const double p = fleet.uniform(profile.p_nom[k].lo, profile.p_nom[k].hi);
    net.generators.push_back({next_id++, node, c, p, default_marginal_cost(c)});
  };
  for (int i = 0; i < n_nodes; ++i) {
    const bool is_hub = hub[static_cast<std::size_t>(i)];
    if (!is_hub && fleet.bernoulli(profile.empty_node_fraction)) continue;
    for (Carrier c : kAllCarriers) {
      if (!is_renewable(c) && !is_hub) continue;
      if (c == Carrier::coal && is_hub) {
        draw(i, c);
        continue;
      }
      if (fleet.bernoulli(profile.presence[static_cast<std::size_t>(c)])) draw(i, c);
    }
  }

  // Capacity adequacy: conventional fleet first, then renewables make up the
  // rest of the total.
  const double peak = peak_demand_capability(profile, n_nodes);
  double conventional = 0.0;
  double total = 0.0;
  for (const Generator& g : net.generators) {
    total += g.p_nom;
    if (!is_renewable(g.carrier)) conventional += g.p_nom;
  }
  const double conv_target = profile.conventional_margin * peak;
  const double total_target = profile.total_margin * peak;
  if (conventional < conv_target) {
    const double s = conv_target / conventional;
    for (Generator& g : net.generators) {
      if (!is_renewable(g.carrier)) g.p_nom *= s;
    }
    total += conventional * (s - 1.0);
  }
  if (total < total_target) {
    const double renewable = total - std::max(conventional, conv_target);
    const bool only_renewables = renewable > 0.0;
    const double s = only_renewables ? (total_target - (total - renewable)) / renewable : total_target / total;
    for (Generator& g : net.generators) {
      if (!only_renewables || is_renewable(g.carrier)) g.p_nom *= s;
    }
  }
  std::sort(net.generators.begin(), net.generators.end(), [](const Generator& a, const Generator& b) {
    return a.node_id != b.node_id ? a.node_id < b.node_id : merit_rank(a.carrier) < merit_rank(b.carrier);
  });
  for (std::size_t g = 0; g < net.generators.size(); ++g) net.generators[g].id = static_cast<int>(g);
  require_valid(net);
  return net;
}

double solar_shape(int hour) {
  const int h = ((hour % 24) + 24) % 24;
  if (h <= 6 || h >= 18) return 0.0;
  return std::sin(std::numbers::pi * (h - 6) / 12.0);
}

std::vector<Snapshot> synth_series(std::uint64_t seed, const Network& network, int n_steps,
                                   const CapacityProfile& profile, const SeriesOptions& options) {
  if (n_steps < 1) throw DataError("synth_series: n_steps must be at least 1");
  require_valid(network);
  const auto n = static_cast<Index>(network.num_nodes());

  Rng base_rng = Rng::substream(seed, kBase);
  VectorXd base(n);
  VectorXd phase(n);
  for (Index j = 0; j < n; ++j) {
    base(j) = base_rng.uniform(profile.base_demand.lo, profile.base_demand.hi);
    phase(j) = base_rng.uniform(-1.5, 1.5);  // hours
  }

  Rng wind_rng = Rng::substream(seed, kWind);
  Rng solar_rng = Rng::substream(seed, kSolar);
  Rng demand_rng = Rng::substream(seed, kDemand);
  VectorXd wind(n);
  for (Index j = 0; j < n; ++j) wind(j) = std::clamp(wind_rng.uniform(0.1, 0.7), 0.0, 1.0);
  double regional = 0.0;
  double cloud = 1.0;

  std::vector<Snapshot> out;
  out.reserve(static_cast<std::size_t>(n_steps));
  for (int t = 0; t < n_steps; ++t) {
    const int hour = t % 24;
    const int day = t / 24;
    if (hour == 0) cloud = solar_rng.uniform(0.35, 1.0);

    Snapshot s;
    s.step = t;
    s.demand.resize(n);
    s.eta_wind.resize(n);
    s.eta_solar.resize(n);

    regional = options.wind_persistence * regional + options.wind_sigma * wind_rng.normal();
    for (Index j = 0; j < n; ++j) {
      const double noise = 0.5 * options.wind_sigma * wind_rng.normal();
      wind(j) = options.wind_mean + options.wind_persistence * (wind(j) - options.wind_mean) + noise;
      wind(j) = std::clamp(wind(j), 0.0, 1.0);
      s.eta_wind(j) = std::clamp(wind(j) + 0.5 * regional, 0.0, 1.0);

      const double local = std::clamp(cloud + 0.1 * solar_rng.normal(), 0.0, 1.0);
      s.eta_solar(j) = std::clamp(solar_shape(hour) * local, 0.0, 1.0);

      const double h = hour + phase(j);
      const double daily = 1.0 + options.daily_swing * std::sin(2.0 * std::numbers::pi * (h - 9.0) / 24.0);
      const double weekly = (day % 7) >= 5 ? options.weekend_factor : 1.0;
      const double noise_d = 1.0 + options.demand_noise * demand_rng.normal();
      s.demand(j) = std::max(0.0, base(j) * daily * weekly * noise_d);
    }

    int repairs = 0;
    while (solve_dcopf(network, s).status != SolveStatus::optimal) {
      if (++repairs > options.max_repairs) {
        throw DataError("infeasible snapshot at step " + std::to_string(t));
      }
      s.demand *= options.repair_factor;
    }
    out.push_back(std::move(s));
  }
  return out;
}

bool Dataset::operator==(const Dataset& other) const {
  return network == other.network && snapshots == other.snapshots && train == other.train &&
         test == other.test && demand_max.size() == other.demand_max.size() &&
         (demand_max.array() == other.demand_max.array()).all() && seed == other.seed &&
         demand_max_from_all == other.demand_max_from_all;
}

VectorXd compute_demand_max(const Dataset& dataset) {
  const auto n = static_cast<Index>(dataset.network.num_nodes());
  VectorXd dmax = VectorXd::Constant(n, kPowerPrecision);
  auto absorb = [&](int i) { dmax = dmax.cwiseMax(dataset.snapshots[static_cast<std::size_t>(i)].demand); };
  if (dataset.demand_max_from_all) {
    for (std::size_t i = 0; i < dataset.snapshots.size(); ++i) absorb(static_cast<int>(i));
  } else {
    for (int i : dataset.train) absorb(i);
  }
  return dmax;
}

Dataset make_dataset(Network network, std::vector<Snapshot> snapshots, std::uint64_t seed,
                     double test_fraction, bool from_all) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw DataError("test fraction must be in [0, 1)");
  for (const Snapshot& s : snapshots) check_snapshot(network, s);
  Dataset d;
  d.network = std::move(network);
  d.snapshots = std::move(snapshots);
  d.seed = seed;
  d.demand_max_from_all = from_all;
  std::vector<int> order(d.snapshots.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng = Rng::substream(seed, kSplit);
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(order.size())));
  d.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  d.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(d.test.begin(), d.test.end());
  std::sort(d.train.begin(), d.train.end());
  d.demand_max = compute_demand_max(d);
  return d;
}

std::string snapshots_to_csv(const Network& network, const std::vector<Snapshot>& snapshots) {
  std::string out = "step,node_id,demand_MW,eta_wind,eta_solar\n";
  for (const Snapshot& s : snapshots) {
    for (std::size_t j = 0; j < network.num_nodes(); ++j) {
      const auto i = static_cast<Index>(j);
      out += std::to_string(s.step) + "," + std::to_string(network.nodes[j].id) + "," +
             textio::format_double(s.demand(i)) + "," + textio::format_double(s.eta_wind(i)) + "," +
             textio::format_double(s.eta_solar(i)) + "\n";
    }
  }
  return out;
}

std::vector<Snapshot> snapshots_from_csv(const Network& network, std::string_view text) {
  std::map<int, Index> node_pos;
  for (std::size_t j = 0; j < network.num_nodes(); ++j) node_pos[network.nodes[j].id] = static_cast<Index>(j);
  const auto n = static_cast<Index>(network.num_nodes());

  std::vector<Snapshot> out;
  std::map<int, std::size_t> by_step;
  std::vector<std::vector<bool>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != "step,node_id,demand_MW,eta_wind,eta_solar") {
        throw DataError("snapshots line 1: unexpected header \"" + std::string(line) + "\"");
      }
      continue;
    }
    auto fail = [&](const std::string& why) {
      throw DataError("snapshots line " + std::to_string(line_no) + ": " + why);
    };
    const auto cols = textio::split(line);
    if (cols.size() != 5) fail("malformed row (expected 5 columns)");
    const auto step = textio::parse_int(cols[0]);
    const auto node = textio::parse_int(cols[1]);
    const auto demand = textio::parse_double(cols[2]);
    const auto ew = textio::parse_double(cols[3]);
    const auto es = textio::parse_double(cols[4]);
    if (!step || !node || !demand || !ew || !es) fail("malformed row");
    auto it = node_pos.find(static_cast<int>(*node));
    if (it == node_pos.end()) fail("unknown node " + std::to_string(*node));
    if (!(*demand >= 0.0) || !std::isfinite(*demand)) fail("negative or non-finite demand");
    if (!(*ew >= 0.0 && *ew <= 1.0) || !(*es >= 0.0 && *es <= 1.0)) fail("eta outside [0, 1]");

    auto [slot, inserted] = by_step.try_emplace(static_cast<int>(*step), out.size());
    if (inserted) {
      Snapshot s;
      s.step = static_cast<int>(*step);
      s.demand = VectorXd::Zero(n);
      s.eta_wind = VectorXd::Zero(n);
      s.eta_solar = VectorXd::Zero(n);
      out.push_back(std::move(s));
      seen.emplace_back(static_cast<std::size_t>(n), false);
    }
    const Index j = it->second;
    if (seen[slot->second][static_cast<std::size_t>(j)]) fail("duplicate row for node");
    seen[slot->second][static_cast<std::size_t>(j)] = true;
    Snapshot& s = out[slot->second];
    s.demand(j) = *demand;
    s.eta_wind(j) = *ew;
    s.eta_solar(j) = *es;
  }
  if (header) throw DataError("snapshots file is empty");
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (std::find(seen[k].begin(), seen[k].end(), false) != seen[k].end()) {
      throw DataError("snapshots: step " + std::to_string(out[k].step) + " is missing nodes");
    }
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& manifest_path) {
  const std::string stem = manifest_path.stem().string();
  const std::string net_name = stem + "_network.json";
  const std::string snap_name = stem + "_snapshots.csv";
  save_network(dataset.network, textio::sibling(manifest_path, net_name));
  textio::write_file(textio::sibling(manifest_path, snap_name),
                     snapshots_to_csv(dataset.network, dataset.snapshots));
  nlohmann::json doc;
  doc["format"] = std::string(kDatasetFormat);
  doc["network_file"] = net_name;
  doc["snapshot_file"] = snap_name;
  doc["seed"] = dataset.seed;
  doc["demand_max_from_all"] = dataset.demand_max_from_all;
  doc["train"] = dataset.train;
  doc["test"] = dataset.test;
  // Stored as text so the round trip is exact.
  std::vector<std::string> dmax;
  for (Index j = 0; j < dataset.demand_max.size(); ++j) dmax.push_back(textio::format_double(dataset.demand_max(j)));
  doc["demand_max_MW"] = dmax;
  textio::write_file(manifest_path, doc.dump(1) + "\n");
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(textio::read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("dataset manifest is not valid JSON: " + std::string(e.what()));
  }
  if (doc.value("format", std::string{}) != kDatasetFormat) {
    throw DataError("dataset manifest: expected format \"" + std::string(kDatasetFormat) + "\"");
  }
  Dataset d;
  try {
    d.network = load_network(textio::sibling(manifest_path, doc.at("network_file").get<std::string>()));
    require_valid(d.network);
    d.snapshots = snapshots_from_csv(
        d.network, textio::read_file(textio::sibling(manifest_path, doc.at("snapshot_file").get<std::string>())));
    d.seed = doc.at("seed").get<std::uint64_t>();
    d.demand_max_from_all = doc.value("demand_max_from_all", false);
    d.train = doc.at("train").get<std::vector<int>>();
    d.test = doc.at("test").get<std::vector<int>>();
    const auto dmax = doc.at("demand_max_MW").get<std::vector<std::string>>();
    d.demand_max.resize(static_cast<Index>(dmax.size()));
    for (std::size_t j = 0; j < dmax.size(); ++j) {
      const auto v = textio::parse_double(dmax[j]);
      if (!v || !(*v > 0.0)) throw DataError("dataset manifest: bad demand_max entry " + dmax[j]);
      d.demand_max(static_cast<Index>(j)) = *v;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset manifest: " + std::string(e.what()));
  }
  if (d.demand_max.size() != static_cast<Index>(d.network.num_nodes())) {
    throw DataError("dataset manifest: demand_max has wrong length");
  }
  const auto count = static_cast<int>(d.snapshots.size());
  std::vector<bool> used(d.snapshots.size(), false);
  for (const auto* split : {&d.train, &d.test}) {
    for (int i : *split) {
      if (i < 0 || i >= count) throw DataError("dataset manifest: split index out of range");
      if (used[static_cast<std::size_t>(i)]) throw DataError("dataset manifest: train and test overlap");
      used[static_cast<std::size_t>(i)] = true;
    }
  }
  return d;
}

}  // namespace gridflow
