#include <filesystem>

#include "doctest.h"
#include "gridflow/datagen.hpp"
#include "gridflow/error.hpp"
#include "gridflow/oracle.hpp"
#include "gridflow/textio.hpp"

using namespace gridflow;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gridflow_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("synthetic networks are deterministic and valid") {
  const Network a = synth_network(7, 5, 2.0);
  const Network b = synth_network(7, 5, 2.0);
  CHECK(a == b);
  CHECK(validate(a).ok());
  CHECK_FALSE(synth_network(8, 5, 2.0) == a);
  CHECK_THROWS_AS(synth_network(1, 1, 2.0), DataError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Network net = synth_network(seed, 3 + static_cast<int>(seed % 20), 2.4);
    REQUIRE(validate(net).ok());
    for (const Generator& g : net.generators) CHECK(g.marginal_cost == default_marginal_cost(g.carrier));
    for (const Link& l : net.links) {
      CHECK((l.f_nom == 10000.0 || l.f_nom == 5000.0));
      CHECK(l.efficiency == 1.0);
      CHECK(l.marginal_cost == 3.642);
    }
    double conventional = 0.0, total = 0.0;
    for (const Generator& g : net.generators) {
      total += g.p_nom;
      if (!is_renewable(g.carrier)) conventional += g.p_nom;
    }
    const double peak = peak_demand_capability({}, static_cast<int>(net.num_nodes()));
    CHECK(conventional >= 1.1 * peak * (1 - 1e-12));
    CHECK(total >= 1.5 * peak * (1 - 1e-12));
  }
}

TEST_CASE("carrier costs follow the actual marginal cost table") {
  CHECK(default_marginal_cost(Carrier::solar) == 0.010);
  CHECK(default_marginal_cost(Carrier::wind) == 0.015);
  CHECK(default_marginal_cost(Carrier::ocgt) == 121.89);
  CHECK(default_marginal_cost(Carrier::coal) == 125.00);
}

TEST_CASE("weather series stay in range and solar sleeps at night") {
  const Network net = synth_network(3, 4, 2.0);
  const auto series = synth_series(3, net, 24 * 7);
  for (const Snapshot& s : series) {
    CHECK((s.eta_wind.array() >= 0.0).all());
    CHECK((s.eta_wind.array() <= 1.0).all());
    CHECK((s.eta_solar.array() >= 0.0).all());
    CHECK((s.eta_solar.array() <= 1.0).all());
    CHECK((s.demand.array() >= 0.0).all());
    const int hour = s.step % 24;
    if (hour < 6 || hour > 18) CHECK(s.eta_solar.isZero());
  }
  CHECK(solar_shape(12) == doctest::Approx(1.0));
  CHECK(solar_shape(2) == 0.0);
  CHECK_THROWS_AS(synth_series(1, net, 0), DataError);
}

TEST_CASE("every generated snapshot is solvable on a 5-node grid") {
  const Network net = synth_network(11, 5, 2.0);
  const auto series = synth_series(11, net, 200);
  const auto sols = solve_batch(net, series);
  for (const DispatchSolution& s : sols) CHECK(s.status == SolveStatus::optimal);
}

TEST_CASE("dataset split and demand_max") {
  const Network net = synth_network(5, 4, 2.0);
  const Dataset d = make_dataset(net, synth_series(5, net, 100), 5);
  CHECK(d.test.size() == 5);
  CHECK(d.train.size() == 95);
  std::vector<int> all = d.train;
  all.insert(all.end(), d.test.begin(), d.test.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 100; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
  for (int i : d.train) CHECK((d.demand_max.array() >= d.snapshots[static_cast<std::size_t>(i)].demand.array()).all());
  CHECK((d.demand_max.array() > 0.0).all());

  const Dataset all_max = make_dataset(net, d.snapshots, 5, 0.05, true);
  CHECK((all_max.demand_max.array() >= d.demand_max.array()).all());
}

TEST_CASE("dataset files round trip exactly and reject bad rows") {
  const auto dir = scratch("dataset");
  const Network net = synth_network(21, 33, 2.5);
  Dataset d = make_dataset(net, synth_series(21, net, 100), 21);
  save_dataset(d, dir / "data.json");
  const Dataset back = load_dataset(dir / "data.json");
  CHECK(back == d);

  // Same seed, same bytes.
  save_dataset(make_dataset(synth_network(21, 33, 2.5), synth_series(21, net, 100), 21), dir / "again.json");
  CHECK(textio::read_file(dir / "again_snapshots.csv") == textio::read_file(dir / "data_snapshots.csv"));

  const std::string header = "step,node_id,demand_MW,eta_wind,eta_solar\n";
  Network two;
  two.nodes = {{0, "a"}, {1, "b"}};
  two.links = {{0, 0, 1, 10.0, 1.0, 0.0}};
  CHECK_THROWS_WITH_AS(snapshots_from_csv(two, header + "0,0,1,1.2,0\n0,1,1,0,0\n"),
                       doctest::Contains("eta outside [0, 1]"), DataError);
  CHECK_THROWS_WITH_AS(snapshots_from_csv(two, header + "0,0,1,0.5,0\n0,1,0.5,0\n"),
                       doctest::Contains("line 3: malformed row"), DataError);
  CHECK(snapshots_from_csv(two, header + "4,1,2,0.5,0\n4,0,1,0.25,0.75\n")[0].demand(1) == 2.0);

  textio::write_file(dir / "bad.json", "{\"format\": \"gridflow-dataset/9\"}");
  CHECK_THROWS_AS(load_dataset(dir / "bad.json"), DataError);
  std::filesystem::remove_all(dir);
}
