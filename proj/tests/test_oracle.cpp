#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "gridflow/error.hpp"
#include "gridflow/oracle.hpp"
#include "oracles.hpp"

using namespace gridflow;
using namespace gridflow::testing;
using Eigen::VectorXd;

namespace {

Network one_node_solar_wind() {
  Network net = chain(1);
  add_generator(net, 0, Carrier::solar, 10.0);
  add_generator(net, 0, Carrier::wind, 10.0);
  return net;
}

Network two_node(double f_nom) {
  Network net = chain(2, f_nom);
  add_generator(net, 0, Carrier::wind, 10.0);
  add_generator(net, 1, Carrier::coal, 10.0);
  return net;
}

}  // namespace

TEST_CASE("cheapest carrier saturates first") {
  const Network net = one_node_solar_wind();
  Snapshot s = flat_snapshot(net, 5.0);
  const DispatchSolution sol = solve_dcopf(net, s);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.gen_output(0) == doctest::Approx(5.0));
  CHECK(sol.gen_output(1) == doctest::Approx(0.0));
  CHECK(sol.objective == doctest::Approx(5 * 0.010));
  CHECK(sol.node_total(0) == doctest::Approx(5.0));
}

TEST_CASE("uncongested link carries cheap wind") {
  const Network net = two_node(10.0);
  Snapshot s = flat_snapshot(net);
  s.demand(1) = 6.0;
  const DispatchSolution sol = solve_dcopf(net, s);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.flows(0) == doctest::Approx(6.0));
  CHECK(sol.gen_output(1) == doctest::Approx(0.0));
}

TEST_CASE("congestion forces expensive backup") {
  const Network net = two_node(4.0);
  Snapshot s = flat_snapshot(net);
  s.demand(1) = 6.0;
  const DispatchSolution sol = solve_dcopf(net, s);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.flows(0) == doctest::Approx(4.0));
  CHECK(sol.gen_output(1) == doctest::Approx(2.0));
  CHECK(sol.objective == doctest::Approx(4 * 0.015 + 2 * 125.0));

  // Grid search over the single free flow variable.
  double best = 1e300;
  for (int i = -4000; i <= 4000; ++i) {
    const double f = i * 1e-3;
    const double wind = f;  // node 0 has no demand
    const double coal = 6.0 - f;
    if (wind < 0 || wind > 10 || coal < 0 || coal > 10) continue;
    best = std::min(best, 0.015 * wind + 125.0 * coal);
  }
  CHECK(sol.objective == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("infeasible demand is reported, not thrown") {
  const Network net = two_node(4.0);
  Snapshot s = flat_snapshot(net);
  s.demand(1) = 50.0;
  const DispatchSolution sol = solve_dcopf(net, s);
  CHECK(sol.status == SolveStatus::infeasible);
}

TEST_CASE("link cost is charged on absolute flow") {
  Network net = two_node(10.0);
  net.links[0].marginal_cost = 3.642;
  Snapshot s = flat_snapshot(net);
  s.demand(1) = 6.0;
  const DispatchSolution sol = solve_dcopf(net, s);
  CHECK(sol.flows(0) == doctest::Approx(6.0));
  CHECK(sol.objective == doctest::Approx(6 * (0.015 + 3.642)));

  OracleOptions off;
  off.link_cost = false;
  CHECK(solve_dcopf(net, s, off).objective == doctest::Approx(6 * 0.015));
}

TEST_CASE("strict efficiency loses energy on the receiving end") {
  Network net = two_node(10.0);
  net.links[0].efficiency = 0.9;
  Snapshot s = flat_snapshot(net);
  s.demand(1) = 6.0;
  OracleOptions strict;
  strict.strict_efficiency = true;
  strict.link_cost = false;
  const DispatchSolution sol = solve_dcopf(net, s, strict);
  REQUIRE(sol.status == SolveStatus::optimal);
  // Wind is capped at 10 so at most 9 MW arrives; 6 MW needs 6/0.9 sent.
  CHECK(sol.flows(0) == doctest::Approx(6.0 / 0.9));
  CHECK(sol.gen_output(1) == doctest::Approx(0.0));
  CHECK(check_feasible(net, s, sol.flows, sol.gen_output, strict).feasible);
}

TEST_CASE("equal-cost generators are filled in id order") {
  Network net = chain(1);
  add_generator(net, 0, Carrier::coal, 10.0);
  add_generator(net, 0, Carrier::coal, 10.0);
  add_generator(net, 0, Carrier::coal, 10.0);
  Snapshot s = flat_snapshot(net, 15.0);
  const DispatchSolution sol = solve_dcopf(net, s);
  CHECK(sol.gen_output(0) == doctest::Approx(10.0));
  CHECK(sol.gen_output(1) == doctest::Approx(5.0));
  CHECK(sol.gen_output(2) == doctest::Approx(0.0));
}

TEST_CASE("objective matches vertex enumeration on random small networks") {
  Rng rng(77);
  int optimal = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const DispatchCase dc = random_dispatch_case(rng, 2, 4, 5, trial % 2 == 0);
    const DispatchSolution sol = solve_dcopf(dc.network, dc.snapshot);
    const double ref = brute_force_dispatch_cost(dc.network, dc.snapshot);
    if (!std::isfinite(ref)) {
      CHECK(sol.status == SolveStatus::infeasible);
      continue;
    }
    ++optimal;
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(std::abs(sol.objective - ref) <= 1e-6 * std::max(1.0, std::abs(ref)));
    CHECK(sol.kkt_residual <= kKktTolerance);
    CHECK(check_feasible(dc.network, dc.snapshot, sol.flows, sol.gen_output).feasible);
  }
  CHECK(optimal > 20);
}

TEST_CASE("batch solving matches the serial loop exactly") {
  Rng rng(4);
  DispatchCase dc = random_dispatch_case(rng, 4, 4, 5, true);
  std::vector<Snapshot> snaps;
  for (int t = 0; t < 12; ++t) {
    Snapshot s = dc.snapshot;
    s.step = t;
    s.demand *= rng.uniform(0.2, 1.0);
    snaps.push_back(s);
  }
  const auto a = solve_batch_serial(dc.network, snaps);
  const auto b = solve_batch(dc.network, snaps);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].status == b[i].status);
    CHECK(a[i].flows == b[i].flows);
    CHECK(a[i].gen_output == b[i].gen_output);
  }
}

TEST_CASE("check_feasible reports violations") {
  const Network net = two_node(10.0);
  Snapshot s = flat_snapshot(net);
  s.demand << 3.0, 7.0;
  const FeasibilityReport zero = check_feasible(net, s, VectorXd::Zero(1), VectorXd::Zero(2));
  CHECK(zero.max_balance_residual == doctest::Approx(7.0));
  CHECK_FALSE(zero.feasible);

  const FeasibilityReport over = check_feasible(net, Snapshot(flat_snapshot(net)), VectorXd::Constant(1, 11.0),
                                                VectorXd::Zero(2));
  CHECK(over.max_flow_violation == doctest::Approx(1.0));

  const DispatchSolution sol = solve_dcopf(net, s);
  CHECK(check_feasible(net, s, sol.flows, sol.gen_output).feasible);
}

TEST_CASE("projection basics") {
  Network net = two_node(10.0);
  Snapshot s = flat_snapshot(net);
  s.demand(1) = 6.0;

  // Already feasible: wind at node 0 can export up to 10, coal covers node 1.
  const FlowProjection same = project_feasible(net, s, VectorXd::Constant(1, 0.3));
  REQUIRE(same.feasible);
  CHECK(same.flows(0) == 3.0);

  // Beyond f_nom with ample capacity elsewhere: clipped to the box.
  Network big = chain(2, 5.0);
  add_generator(big, 0, Carrier::coal, 100.0);
  add_generator(big, 1, Carrier::coal, 100.0);
  const FlowProjection clipped = project_feasible(big, flat_snapshot(big, 10.0), VectorXd::Constant(1, 1.2));
  REQUIRE(clipped.feasible);
  CHECK(clipped.flows(0) == doctest::Approx(5.0));

  CHECK_THROWS_AS(project_feasible(net, s, VectorXd::Zero(3)), DataError);
}

TEST_CASE("projection matches brute-force active-set enumeration") {
  Rng rng(99);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const DispatchCase dc = random_dispatch_case(rng, 3, 4, 4, false);
    if (solve_dcopf(dc.network, dc.snapshot).status != SolveStatus::optimal) continue;
    VectorXd f_hat(static_cast<Eigen::Index>(dc.network.num_links()));
    for (Eigen::Index l = 0; l < f_hat.size(); ++l) f_hat(l) = rng.uniform(-1.5, 1.5);
    const FlowProjection p = project_feasible(dc.network, dc.snapshot, f_hat);
    REQUIRE(p.feasible);
    Eigen::MatrixXd C;
    VectorXd d;
    projection_polytope(dc.network, dc.snapshot, C, d);
    VectorXd target = f_hat;
    for (Eigen::Index l = 0; l < f_hat.size(); ++l) target(l) *= dc.network.links[static_cast<std::size_t>(l)].f_nom;
    const VectorXd ref = brute_force_projection(target, C, d);
    REQUIRE(ref.size() == target.size());
    CHECK((p.flows - ref).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK(p.kkt_residual <= kKktTolerance);

    // Idempotent.
    VectorXd again_hat = p.flows;
    for (Eigen::Index l = 0; l < f_hat.size(); ++l) again_hat(l) /= dc.network.links[static_cast<std::size_t>(l)].f_nom;
    const FlowProjection again = project_feasible(dc.network, dc.snapshot, again_hat);
    CHECK((again.flows - p.flows).lpNorm<Eigen::Infinity>() <= 1e-8);

    // Non-expansive.
    VectorXd other = f_hat;
    for (Eigen::Index l = 0; l < f_hat.size(); ++l) other(l) = rng.uniform(-1.5, 1.5);
    const FlowProjection q = project_feasible(dc.network, dc.snapshot, other);
    VectorXd other_mw = other;
    for (Eigen::Index l = 0; l < f_hat.size(); ++l) other_mw(l) *= dc.network.links[static_cast<std::size_t>(l)].f_nom;
    CHECK((p.flows - q.flows).norm() <= (target - other_mw).norm() + 1e-9);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("solutions round trip through the files") {
  const Network net = two_node(4.0);
  Snapshot s = flat_snapshot(net);
  s.demand(1) = 6.0;
  SolutionSet set;
  set.steps = {3, 8};
  set.solutions = {solve_dcopf(net, s), solve_dcopf(net, s)};
  const auto dir = std::filesystem::temp_directory_path() / "gridflow_test_solutions";
  std::filesystem::create_directories(dir);
  save_solutions(net, set, dir / "sol.json");
  const SolutionSet back = load_solutions(net, dir / "sol.json");
  REQUIRE(back.steps == set.steps);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.solutions[i].flows == set.solutions[i].flows);
    CHECK(back.solutions[i].gen_output == set.solutions[i].gen_output);
    CHECK(back.solutions[i].objective == set.solutions[i].objective);
  }
  std::filesystem::remove_all(dir);
}
