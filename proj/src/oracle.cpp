#include "gridflow/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

#include "gridflow/error.hpp"
#include "gridflow/qp.hpp"
#include "gridflow/textio.hpp"
#include "json.hpp"

namespace gridflow {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct LinkColumns {
  Index forward = -1;   // F or F+
  Index backward = -1;  // F- when split
};

struct DcopfLayout {
  Index num_gens = 0;
  std::vector<LinkColumns> links;
  Index num_vars = 0;
};

bool split_link(const Link& link, const OracleOptions& options) {
  return options.strict_efficiency || (options.link_cost && link.marginal_cost > 0.0);
}

DcopfLayout layout_for(const Network& network, const OracleOptions& options) {
  DcopfLayout layout;
  layout.num_gens = static_cast<Index>(network.num_generators());
  Index next = layout.num_gens;
  for (const Link& link : network.links) {
    LinkColumns cols;
    cols.forward = next++;
    if (split_link(link, options)) cols.backward = next++;
    layout.links.push_back(cols);
  }
  layout.num_vars = next;
  return layout;
}

LinearProgram build_program(const Network& network, const Topology& topo, const Snapshot& snapshot,
                            const OracleOptions& options, const DcopfLayout& layout) {
  const auto n = static_cast<Index>(network.num_nodes());
  LinearProgram lp;
  lp.A = MatrixXd::Zero(n, layout.num_vars);
  lp.b = snapshot.demand;
  lp.c = VectorXd::Zero(layout.num_vars);
  lp.lower = VectorXd::Zero(layout.num_vars);
  lp.upper = VectorXd::Zero(layout.num_vars);

  const VectorXd avail = available_capacity(network, topo, snapshot);
  for (Index g = 0; g < layout.num_gens; ++g) {
    const Generator& gen = network.generators[static_cast<std::size_t>(g)];
    lp.A(topo.gen_node[static_cast<std::size_t>(g)], g) = 1.0;
    lp.c(g) = gen.marginal_cost;
    lp.upper(g) = avail(g);
  }
  // Row j: generation - withdrawals + receipts = demand.
  for (std::size_t l = 0; l < network.num_links(); ++l) {
    const Link& link = network.links[l];
    const int from = topo.link_from[l];
    const int to = topo.link_to[l];
    const LinkColumns& cols = layout.links[l];
    const double eff = options.strict_efficiency ? link.efficiency : 1.0;
    const double cost = options.link_cost ? link.marginal_cost : 0.0;
    if (cols.backward < 0) {
      lp.A(from, cols.forward) -= 1.0;
      lp.A(to, cols.forward) += 1.0;
      lp.lower(cols.forward) = -link.f_nom;
      lp.upper(cols.forward) = link.f_nom;
      lp.c(cols.forward) = 0.0;
    } else {
      lp.A(from, cols.forward) -= 1.0;
      lp.A(to, cols.forward) += eff;
      lp.A(to, cols.backward) -= 1.0;
      lp.A(from, cols.backward) += eff;
      for (Index c : {cols.forward, cols.backward}) {
        lp.lower(c) = 0.0;
        lp.upper(c) = link.f_nom;
        lp.c(c) = cost;
      }
    }
  }
  return lp;
}

// Generators sharing a node and a marginal cost are interchangeable in the
// LP; refill each such group in id order so labels are canonical.
void canonicalize_ties(const Network& network, const Topology& topo, const VectorXd& avail,
                       VectorXd& gen_output) {
  for (const auto& gens : topo.gens_at_node) {
    std::map<double, std::vector<int>> groups;
    for (int g : gens) groups[network.generators[static_cast<std::size_t>(g)].marginal_cost].push_back(g);
    for (auto& [cost, members] : groups) {
      if (members.size() < 2) continue;
      std::sort(members.begin(), members.end(), [&](int a, int b) {
        return network.generators[static_cast<std::size_t>(a)].id <
               network.generators[static_cast<std::size_t>(b)].id;
      });
      double total = 0.0;
      for (int g : members) total += gen_output(g);
      for (int g : members) {
        const double take = std::min(total, avail(g));
        gen_output(g) = take;
        total -= take;
      }
      if (total > 0.0) gen_output(members.back()) += total;  // round-off only
    }
  }
}

}  // namespace

VectorXd required_generation(const Network& network, const Topology& topo, const Snapshot& snapshot,
                             const VectorXd& flows, const OracleOptions& options) {
  VectorXd total = snapshot.demand;
  for (std::size_t l = 0; l < network.num_links(); ++l) {
    const double f = flows(static_cast<Index>(l));
    const int from = topo.link_from[l];
    const int to = topo.link_to[l];
    if (!options.strict_efficiency) {
      total(from) += f;
      total(to) -= f;
      continue;
    }
    const double eff = network.links[l].efficiency;
    if (f >= 0.0) {
      total(from) += f;
      total(to) -= eff * f;
    } else {
      total(to) += -f;
      total(from) -= eff * -f;
    }
  }
  return total;
}

LinearProgram dcopf_program(const Network& network, const Snapshot& snapshot,
                            const OracleOptions& options) {
  const Topology topo = build_topology(network);
  return build_program(network, topo, snapshot, options, layout_for(network, options));
}

DispatchSolution solve_dcopf(const Network& network, const Snapshot& snapshot,
                             const OracleOptions& options) {
  check_snapshot(network, snapshot);
  const Topology topo = build_topology(network);
  const DcopfLayout layout = layout_for(network, options);
  const LinearProgram lp = build_program(network, topo, snapshot, options, layout);
  const LpResult res = solve_lp(lp);

  DispatchSolution sol;
  const auto num_links = static_cast<Index>(network.num_links());
  if (res.status == LpStatus::infeasible) {
    sol.status = SolveStatus::infeasible;
    sol.flows = VectorXd::Zero(num_links);
    sol.gen_output = VectorXd::Zero(layout.num_gens);
    sol.node_total = VectorXd::Zero(static_cast<Index>(network.num_nodes()));
    return sol;
  }

  VectorXd x = res.x;
  sol.gen_output = x.head(layout.num_gens);
  const VectorXd avail = available_capacity(network, topo, snapshot);
  canonicalize_ties(network, topo, avail, sol.gen_output);
  x.head(layout.num_gens) = sol.gen_output;

  const KktResiduals kkt = kkt_residuals(lp, x, res.y);
  sol.kkt_residual = kkt.max();
  if (sol.kkt_residual > kKktTolerance) {
    std::ostringstream msg;
    msg << "snapshot " << snapshot.step << ": optimality certificate failed (primal " << kkt.primal
        << ", dual " << kkt.dual << ", complementarity " << kkt.complementarity << ")";
    throw SolverError(msg.str());
  }

  sol.status = SolveStatus::optimal;
  sol.flows.resize(num_links);
  for (Index l = 0; l < num_links; ++l) {
    const LinkColumns& cols = layout.links[static_cast<std::size_t>(l)];
    sol.flows(l) = x(cols.forward) - (cols.backward >= 0 ? x(cols.backward) : 0.0);
  }
  sol.node_total = VectorXd::Zero(static_cast<Index>(network.num_nodes()));
  for (Index g = 0; g < layout.num_gens; ++g) {
    sol.node_total(topo.gen_node[static_cast<std::size_t>(g)]) += sol.gen_output(g);
  }
  sol.objective = lp.c.dot(x);
  return sol;
}

std::vector<DispatchSolution> solve_batch_serial(const Network& network,
                                                 std::span<const Snapshot> snapshots,
                                                 const OracleOptions& options) {
  std::vector<DispatchSolution> out;
  out.reserve(snapshots.size());
  for (const Snapshot& s : snapshots) out.push_back(solve_dcopf(network, s, options));
  return out;
}

std::vector<DispatchSolution> solve_batch(const Network& network, std::span<const Snapshot> snapshots,
                                          const OracleOptions& options) {
  std::vector<DispatchSolution> out(snapshots.size());
  const auto count = static_cast<long>(snapshots.size());
  std::string failure;
  bool failed = false;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < count; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = solve_dcopf(network, snapshots[static_cast<std::size_t>(i)], options);
    } catch (const std::exception& e) {
#pragma omp critical(gridflow_batch_failure)
      {
        if (!failed) {
          failed = true;
          failure = e.what();
        }
      }
    }
  }
  if (failed) throw SolverError(failure);
  return out;
}

FeasibilityReport check_feasible(const Network& network, const Snapshot& snapshot,
                                 const VectorXd& flows, const VectorXd& gen_output,
                                 const OracleOptions& options) {
  if (flows.size() != static_cast<Index>(network.num_links()) ||
      gen_output.size() != static_cast<Index>(network.num_generators())) {
    throw DataError("check_feasible: dimension mismatch");
  }
  const Topology topo = build_topology(network);
  FeasibilityReport rep;
  for (std::size_t l = 0; l < network.num_links(); ++l) {
    rep.max_flow_violation =
        std::max(rep.max_flow_violation, std::abs(flows(static_cast<Index>(l))) - network.links[l].f_nom);
  }
  const VectorXd avail = available_capacity(network, topo, snapshot);
  for (Index g = 0; g < gen_output.size(); ++g) {
    rep.max_gen_violation = std::max({rep.max_gen_violation, -gen_output(g), gen_output(g) - avail(g)});
  }
  VectorXd generated = VectorXd::Zero(static_cast<Index>(network.num_nodes()));
  for (Index g = 0; g < gen_output.size(); ++g) generated(topo.gen_node[static_cast<std::size_t>(g)]) += gen_output(g);
  const VectorXd required = required_generation(network, topo, snapshot, flows, options);
  rep.max_balance_residual = (generated - required).cwiseAbs().maxCoeff();
  rep.max_flow_violation = std::max(rep.max_flow_violation, 0.0);
  rep.max_gen_violation = std::max(rep.max_gen_violation, 0.0);
  rep.feasible = rep.max_flow_violation <= kFeasibilityTolerance &&
                 rep.max_gen_violation <= kFeasibilityTolerance &&
                 rep.max_balance_residual <= kFeasibilityTolerance;
  return rep;
}

FlowProjection project_feasible(const Network& network, const Snapshot& snapshot, const VectorXd& f_hat) {
  const auto num_links = static_cast<Index>(network.num_links());
  const auto n = static_cast<Index>(network.num_nodes());
  if (f_hat.size() != num_links) throw DataError("project_feasible: expected one value per link");
  check_snapshot(network, snapshot);
  const Topology topo = build_topology(network);
  const MatrixXd inc = incidence(network);
  const VectorXd cap = node_capacity(network, topo, snapshot);

  ProjectionProblem qp;
  qp.target.resize(num_links);
  for (Index l = 0; l < num_links; ++l) qp.target(l) = f_hat(l) * network.links[static_cast<std::size_t>(l)].f_nom;
  qp.C = MatrixXd::Zero(2 * num_links + 2 * n, num_links);
  qp.d = VectorXd::Zero(2 * num_links + 2 * n);
  for (Index l = 0; l < num_links; ++l) {
    const double f_nom = network.links[static_cast<std::size_t>(l)].f_nom;
    qp.C(2 * l, l) = 1.0;
    qp.d(2 * l) = f_nom;
    qp.C(2 * l + 1, l) = -1.0;
    qp.d(2 * l + 1) = f_nom;
  }
  // demand + inc F <= cap  and  -(demand + inc F) <= 0.
  for (Index j = 0; j < n; ++j) {
    const Index up = 2 * num_links + 2 * j;
    qp.C.row(up) = inc.row(j);
    qp.d(up) = cap(j) - snapshot.demand(j);
    qp.C.row(up + 1) = -inc.row(j);
    qp.d(up + 1) = snapshot.demand(j);
  }
  const ProjectionResult res = project_onto_polytope(qp);
  FlowProjection out;
  out.feasible = res.feasible;
  out.flows = res.x;
  out.kkt_residual = res.kkt_residual;
  out.active = res.active;
  if (!res.feasible) return out;
  if (res.kkt_residual > kKktTolerance) {
    std::ostringstream msg;
    msg << "snapshot " << snapshot.step << ": projection KKT residual " << res.kkt_residual;
    throw SolverError(msg.str());
  }
  return out;
}

void save_solutions(const Network& network, const SolutionSet& set, const std::filesystem::path& manifest_path) {
  if (set.steps.size() != set.solutions.size()) throw DataError("save_solutions: steps/solutions size mismatch");
  std::string csv_name = manifest_path.stem().string() + ".csv";
  std::string csv = "step,kind,id,value_MW\n";
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t s = 0; s < set.steps.size(); ++s) {
    const DispatchSolution& sol = set.solutions[s];
    const std::string step = std::to_string(set.steps[s]);
    for (std::size_t l = 0; l < network.num_links(); ++l) {
      csv += step + ",flow," + std::to_string(network.links[l].id) + "," +
             textio::format_double(sol.flows(static_cast<Index>(l))) + "\n";
    }
    for (std::size_t g = 0; g < network.num_generators(); ++g) {
      csv += step + ",gen," + std::to_string(network.generators[g].id) + "," +
             textio::format_double(sol.gen_output(static_cast<Index>(g))) + "\n";
    }
    entries.push_back({{"step", set.steps[s]},
                       {"status", sol.status == SolveStatus::optimal ? "optimal" : "infeasible"},
                       {"objective", sol.objective}});
  }
  textio::write_file(manifest_path.parent_path() / csv_name, csv);
  nlohmann::json manifest;
  manifest["format"] = std::string(kSolutionsFormat);
  manifest["solutions_file"] = csv_name;
  manifest["snapshots"] = std::move(entries);
  textio::write_file(manifest_path, manifest.dump(2) + "\n");
}

SolutionSet load_solutions(const Network& network, const std::filesystem::path& manifest_path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(textio::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", std::string{}) != kSolutionsFormat) {
    throw DataError(manifest_path.string() + ": expected format \"" + std::string(kSolutionsFormat) + "\"");
  }
  const Topology topo = build_topology(network);
  SolutionSet set;
  std::unordered_map<int, std::size_t> by_step;
  for (const auto& e : manifest.at("snapshots")) {
    DispatchSolution sol;
    sol.status = e.at("status").get<std::string>() == "optimal" ? SolveStatus::optimal : SolveStatus::infeasible;
    sol.objective = e.at("objective").get<double>();
    sol.flows = VectorXd::Zero(static_cast<Index>(network.num_links()));
    sol.gen_output = VectorXd::Zero(static_cast<Index>(network.num_generators()));
    by_step[e.at("step").get<int>()] = set.steps.size();
    set.steps.push_back(e.at("step").get<int>());
    set.solutions.push_back(std::move(sol));
  }
  std::unordered_map<int, Index> link_pos, gen_pos;
  for (std::size_t l = 0; l < network.num_links(); ++l) link_pos[network.links[l].id] = static_cast<Index>(l);
  for (std::size_t g = 0; g < network.num_generators(); ++g) gen_pos[network.generators[g].id] = static_cast<Index>(g);

  const auto path = textio::sibling(manifest_path, manifest.at("solutions_file").get<std::string>());
  const std::string text = textio::read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    const auto fields = textio::split(line);
    auto fail = [&](const std::string& why) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed row (" + why + ")");
    };
    if (fields.size() != 4) fail("expected 4 columns");
    const auto step = textio::parse_int(fields[0]);
    const auto id = textio::parse_int(fields[2]);
    const auto value = textio::parse_double(fields[3]);
    if (!step || !id || !value) fail("unparsable number");
    auto it = by_step.find(static_cast<int>(*step));
    if (it == by_step.end()) fail("step not in manifest");
    DispatchSolution& sol = set.solutions[it->second];
    if (fields[1] == "flow") {
      auto p = link_pos.find(static_cast<int>(*id));
      if (p == link_pos.end()) fail("unknown link id");
      sol.flows(p->second) = *value;
    } else if (fields[1] == "gen") {
      auto p = gen_pos.find(static_cast<int>(*id));
      if (p == gen_pos.end()) fail("unknown generator id");
      sol.gen_output(p->second) = *value;
    } else {
      fail("kind must be flow or gen");
    }
  }
  for (DispatchSolution& sol : set.solutions) {
    sol.node_total = VectorXd::Zero(static_cast<Index>(network.num_nodes()));
    for (std::size_t g = 0; g < network.num_generators(); ++g) {
      sol.node_total(topo.gen_node[g]) += sol.gen_output(static_cast<Index>(g));
    }
  }
  return set;
}

}  // namespace gridflow
