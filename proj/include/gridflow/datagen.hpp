#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gridflow/grid.hpp"
#include "gridflow/snapshot.hpp"

namespace gridflow {

struct CapacityRange {
  double lo = 0.0;  // MW
  double hi = 0.0;  // MW
};

/// Knobs for synthetic grids. Capacities are in MW and indexed by Carrier.
struct CapacityProfile {
  std::array<CapacityRange, 4> p_nom = {{{100.0, 800.0}, {100.0, 800.0}, {300.0, 2000.0}, {500.0, 3000.0}}};
  /// Renewable presence per node, and OCGT presence per hub (coal is always
  /// present at a hub).
  std::array<double, 4> presence = {0.6, 0.6, 0.5, 1.0};
  double empty_node_fraction = 0.15;
  /// Conventional plants sit at this many nodes per 10 buses (at least one),
  /// picked by descending degree.
  double hubs_per_ten = 1.0;
  CapacityRange base_demand = {200.0, 800.0};
  double link_marginal_cost = 3.642;
  /// Each link gets one of these ratings with equal probability (MW).
  std::array<double, 2> link_f_nom = {10000.0, 5000.0};
  /// Fleet sizing relative to the peak demand capability.
  double conventional_margin = 1.1;
  double total_margin = 1.5;
};

/// Peak total demand a profile can produce on n nodes (MW).
double peak_demand_capability(const CapacityProfile& profile, int n_nodes);

/// Random connected transport network: spanning tree plus extra edges, with
/// conventional capacity >= 1.1x and total capacity >= 1.5x the peak demand
/// capability.
Network synth_network(std::uint64_t seed, int n_nodes, double avg_degree,
                      const CapacityProfile& profile = {});

struct SeriesOptions {
  double daily_swing = 0.25;
  double weekend_factor = 0.9;
  double demand_noise = 0.04;
  double wind_mean = 0.4;
  double wind_persistence = 0.93;
  double wind_sigma = 0.09;
  int max_repairs = 10;
  double repair_factor = 0.85;
};

/// Hourly snapshots. Every returned snapshot has been solved by the oracle;
/// demand is scaled down when needed and DataError("infeasible snapshot") is
/// raised if that fails.
std::vector<Snapshot> synth_series(std::uint64_t seed, const Network& network, int n_steps,
                                   const CapacityProfile& profile = {}, const SeriesOptions& options = {});

/// Solar coefficient of a clear day at hour `hour` of the day (0 at night).
double solar_shape(int hour);

struct Dataset {
  Network network;
  std::vector<Snapshot> snapshots;
  std::vector<int> train;  // positions into snapshots, ascending
  std::vector<int> test;
  Eigen::VectorXd demand_max;  // MW per node, > 0
  std::uint64_t seed = 0;
  bool demand_max_from_all = false;

  bool operator==(const Dataset& other) const;
};

/// Seeded split plus demand_max (train split only unless `from_all`).
Dataset make_dataset(Network network, std::vector<Snapshot> snapshots, std::uint64_t seed,
                     double test_fraction = 0.05, bool from_all = false);

Eigen::VectorXd compute_demand_max(const Dataset& dataset);

inline constexpr std::string_view kDatasetFormat = "gridflow-dataset/1";

/// Writes <stem>.json (manifest), <stem>_network.json and <stem>_snapshots.csv.
void save_dataset(const Dataset& dataset, const std::filesystem::path& manifest_path);
Dataset load_dataset(const std::filesystem::path& manifest_path);

std::string snapshots_to_csv(const Network& network, const std::vector<Snapshot>& snapshots);
std::vector<Snapshot> snapshots_from_csv(const Network& network, std::string_view text);

}  // namespace gridflow
