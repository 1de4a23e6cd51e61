// gridflow command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error,
// 3 solver or training failure.

#include <omp.h>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gridflow/datagen.hpp"
#include "gridflow/dispatch.hpp"
#include "gridflow/error.hpp"
#include "gridflow/eval.hpp"
#include "gridflow/records.hpp"
#include "gridflow/textio.hpp"
#include "gridflow/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace gridflow;

namespace {

struct UsageError : Error {
  using Error::Error;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::is_regular_file(path)) throw UsageError("missing input: " + what + " '" + path + "'");
}

void require_parent(const std::string& path) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) throw UsageError("output directory does not exist: " + parent.string());
}

std::map<int, std::size_t> step_index(const std::vector<int>& steps) {
  std::map<int, std::size_t> out;
  for (std::size_t i = 0; i < steps.size(); ++i) out[steps[i]] = i;
  return out;
}

std::vector<int> positions_for(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "test") return ds.test;
  std::vector<int> all(ds.snapshots.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return all;
}

// ---------------------------------------------------------------- gen-data

struct GenOpts {
  std::string out_dir;
  std::string name = "dataset";
  int nodes = 10;
  int snapshots = 2000;
  double avg_degree = 1.8;
  double test_fraction = 0.05;
  bool demand_max_from_all = false;
  std::vector<double> link_f_nom = {10000.0, 5000.0};
  double total_margin = 1.5;
  double conventional_margin = 1.1;
  double hubs_per_ten = 1.0;
};

void run_gen_data(const GenOpts& o, std::uint64_t seed) {
  if (!fs::is_directory(o.out_dir)) throw UsageError("output directory does not exist: " + o.out_dir);
  if (o.link_f_nom.size() != 2) throw UsageError("--link-fnom takes two ratings");
  CapacityProfile profile;
  profile.link_f_nom = {o.link_f_nom[0], o.link_f_nom[1]};
  profile.total_margin = o.total_margin;
  profile.conventional_margin = o.conventional_margin;
  profile.hubs_per_ten = o.hubs_per_ten;
  Network net = synth_network(seed, o.nodes, o.avg_degree, profile);
  auto snaps = synth_series(seed, net, o.snapshots, profile);
  const Dataset ds = make_dataset(std::move(net), std::move(snaps), seed, o.test_fraction, o.demand_max_from_all);
  const fs::path manifest = fs::path(o.out_dir) / (o.name + ".json");
  save_dataset(ds, manifest);
  std::cout << "wrote " << manifest.string() << ": " << ds.network.num_nodes() << " nodes, "
            << ds.network.num_links() << " links, " << ds.network.num_generators() << " generators, "
            << ds.snapshots.size() << " snapshots (" << ds.train.size() << " train, " << ds.test.size()
            << " test)\n";
}

// ---------------------------------------------------------------- solve

struct SolveOpts {
  std::string dataset, out;
  bool no_link_cost = false;
  bool strict_efficiency = false;
};

int run_solve(const SolveOpts& o) {
  require_file(o.dataset, "dataset");
  require_parent(o.out);
  const Dataset ds = load_dataset(o.dataset);
  OracleOptions opts;
  opts.link_cost = !o.no_link_cost;
  opts.strict_efficiency = o.strict_efficiency;
  SolutionSet set;
  set.solutions = solve_batch(ds.network, ds.snapshots, opts);
  std::vector<int> bad;
  for (std::size_t i = 0; i < ds.snapshots.size(); ++i) {
    set.steps.push_back(ds.snapshots[i].step);
    if (set.solutions[i].status != SolveStatus::optimal) bad.push_back(ds.snapshots[i].step);
  }
  save_solutions(ds.network, set, o.out);
  if (!bad.empty()) {
    std::cerr << "error: " << bad.size() << " infeasible snapshot(s), steps:";
    for (int s : bad) std::cerr << ' ' << s;
    std::cerr << '\n';
    return 3;
  }
  std::cout << "solved " << set.steps.size() << " snapshots -> " << o.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOpts {
  std::string dataset, solutions, out, log, resume;
  train::TrainConfig cfg;
  nn::ModelConfig model;
  bool no_early_stop = false;
  bool quiet = false;
};

int run_train(TrainOpts o, std::uint64_t seed, int threads) {
  require_file(o.dataset, "dataset");
  require_file(o.solutions, "solutions (run solve first)");
  require_parent(o.out);
  if (!o.resume.empty()) require_file(o.resume, "checkpoint to resume");
  o.cfg.seed = seed;
  o.cfg.threads = threads;
  o.cfg.early_stopping = !o.no_early_stop;
  train::check_config(o.cfg);

  const Dataset ds = load_dataset(o.dataset);
  const SolutionSet sols = load_solutions(ds.network, o.solutions);
  train::TrainState state;
  nn::ModelConfig model = o.model;
  if (!o.resume.empty()) {
    const nn::Checkpoint ck = nn::load_checkpoint(o.resume);
    if (!(ck.network == ds.network)) throw DataError("checkpoint was trained on a different network");
    model = ck.config;
    state = train::state_from_checkpoint(ck);
  }
  const train::Problem pb = train::make_problem(ds, sols, model, o.cfg.alpha, ds.train);
  if (o.resume.empty()) {
    state = train::fresh_state(nn::init_params(seed, model, pb.structure.num_nodes, pb.structure.num_links));
  }
  const train::TrainResult r = train::fit(pb, o.cfg, std::move(state), [&](const train::EpochLog& e) {
    if (!o.quiet) {
      std::cout << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << " lr " << e.lr
                << '\n';
    }
  });
  nn::save_checkpoint(train::make_checkpoint(ds, pb, o.cfg, r.state), o.out);
  const std::string log = o.log.empty() ? o.out + ".log.csv" : o.log;
  textio::write_file(log, train::log_to_csv(r.log));
  if (r.reason == train::StopReason::diverged) {
    std::cerr << "error: training diverged (" << r.message << "); kept the last good checkpoint in " << o.out << '\n';
    return 3;
  }
  const char* why = r.reason == train::StopReason::early_stop    ? "early stop"
                    : r.reason == train::StopReason::time_budget ? "time budget"
                                                                 : "epoch limit";
  std::cout << "trained " << r.state.epoch << " epochs (" << why << "), best validation loss " << r.state.best_val
            << " -> " << o.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferOpts {
  std::string checkpoint, dataset, out, attention;
  std::string split = "test";
};

void run_infer(const InferOpts& o) {
  require_file(o.checkpoint, "checkpoint (run train first)");
  require_file(o.dataset, "dataset");
  require_parent(o.out);
  if (!o.attention.empty()) require_parent(o.attention);
  const nn::Checkpoint ck = nn::load_checkpoint(o.checkpoint);
  const Dataset ds = load_dataset(o.dataset);
  if (!(ck.network == ds.network)) throw DataError("checkpoint was trained on a different network");
  const nn::Structure s = nn::make_structure(ds.network, ck.config, ck.encoding);
  const std::vector<int> pos = positions_for(ds, o.split);
  nn::PredictionSet set;
  set.steps.resize(pos.size());
  set.f_hat.resize(pos.size());
  set.attention.resize(pos.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(pos.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Snapshot& snap = ds.snapshots[static_cast<std::size_t>(pos[k])];
    nn::Prediction p = nn::predict(ck.config, s, ck.params, build_features(ds.network, snap, ck.demand_max, s.encoding));
    set.steps[k] = snap.step;
    set.f_hat[k] = std::move(p.f_hat);
    set.attention[k] = std::move(p.attention);
  }
  textio::write_file(o.out, nn::predictions_to_csv(ds.network, set));
  if (!o.attention.empty()) textio::write_file(o.attention, nn::attention_to_csv(set));
  std::cout << "predicted " << set.steps.size() << " snapshots -> " << o.out << '\n';
}

// ---------------------------------------------------------------- project-dispatch

struct ProjectOpts {
  std::string dataset, predictions, out;
  bool strict_rank = false;
};

int run_project(const ProjectOpts& o) {
  require_file(o.dataset, "dataset");
  require_file(o.predictions, "predictions (run infer first)");
  require_parent(o.out);
  const Dataset ds = load_dataset(o.dataset);
  const nn::PredictionSet pred = nn::predictions_from_csv(ds.network, textio::read_file(o.predictions));
  std::map<int, std::size_t> by_step;
  for (std::size_t i = 0; i < ds.snapshots.size(); ++i) by_step[ds.snapshots[i].step] = i;
  std::vector<Snapshot> snaps;
  for (int step : pred.steps) {
    auto it = by_step.find(step);
    if (it == by_step.end()) throw DataError("predictions refer to unknown step " + std::to_string(step));
    snaps.push_back(ds.snapshots[it->second]);
  }
  MeritOptions mo;
  mo.strict_rank = o.strict_rank;
  SolutionSet out;
  out.steps = pred.steps;
  out.solutions = project_and_dispatch_batch(ds.network, snaps, pred.f_hat, mo);
  save_solutions(ds.network, out, o.out);
  int bad = 0;
  for (const DispatchSolution& d : out.solutions) bad += d.status != SolveStatus::optimal;
  if (bad > 0) {
    std::cerr << "error: projection failed on " << bad << " snapshot(s)\n";
    return 3;
  }
  std::cout << "projected and dispatched " << out.steps.size() << " snapshots -> " << o.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
  std::string dataset, solutions, predictions, dispatch, out_dir, checkpoint;
  bool no_plots = false;
  int reps = 5;
};

struct BaselineData {
  Eigen::MatrixXd x_train, y_train, x_test, y_test;
};

BaselineData baseline_data(const Dataset& ds, const SolutionSet& sols) {
  const auto idx = step_index(sols.steps);
  auto fill = [&](const std::vector<int>& pos, Eigen::MatrixXd& x, Eigen::MatrixXd& y) {
    x.resize(static_cast<Eigen::Index>(pos.size()), static_cast<Eigen::Index>(3 * ds.network.num_nodes()));
    y.resize(x.rows(), static_cast<Eigen::Index>(ds.network.num_links()));
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const Snapshot& s = ds.snapshots[static_cast<std::size_t>(pos[i])];
      auto it = idx.find(s.step);
      if (it == idx.end()) throw DataError("solutions miss step " + std::to_string(s.step));
      x.row(static_cast<Eigen::Index>(i)) = flat_features(ds.network, s, ds.demand_max).transpose();
      y.row(static_cast<Eigen::Index>(i)) =
          train::normalize_labels(ds.network, sols.solutions[it->second].flows).transpose();
    }
  };
  BaselineData b;
  fill(ds.train, b.x_train, b.y_train);
  fill(ds.test, b.x_test, b.y_test);
  return b;
}

std::vector<double> per_row_maape(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& pred) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < actual.rows(); ++i) {
    const Eigen::RowVectorXd a = actual.row(i), p = pred.row(i);
    out.push_back(eval::maape({a.data(), static_cast<std::size_t>(a.size())}, {p.data(), static_cast<std::size_t>(p.size())}));
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void run_eval(const EvalOpts& o) {
  require_file(o.dataset, "dataset");
  require_file(o.solutions, "oracle solutions (run solve first)");
  require_file(o.predictions, "predictions (run infer first)");
  require_file(o.dispatch, "dispatch output (run project-dispatch first)");
  if (!o.checkpoint.empty()) require_file(o.checkpoint, "checkpoint");
  if (!fs::is_directory(o.out_dir)) throw UsageError("output directory does not exist: " + o.out_dir);

  const Dataset ds = load_dataset(o.dataset);
  const Network& net = ds.network;
  const SolutionSet oracle = load_solutions(net, o.solutions);
  const nn::PredictionSet pred = nn::predictions_from_csv(net, textio::read_file(o.predictions));
  const SolutionSet disp = load_solutions(net, o.dispatch);
  const auto oracle_at = step_index(oracle.steps);
  const auto pred_at = step_index(pred.steps);
  const auto disp_at = step_index(disp.steps);

  std::vector<Snapshot> snaps;
  std::vector<Eigen::VectorXd> before, after;
  std::vector<double> flow_a, flow_f, raw_a, raw_f;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> gen;
  Eigen::MatrixXd truth_rows(static_cast<Eigen::Index>(ds.test.size()), static_cast<Eigen::Index>(net.num_links()));
  Eigen::MatrixXd model_rows(truth_rows.rows(), truth_rows.cols());
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    const Snapshot& s = ds.snapshots[static_cast<std::size_t>(ds.test[i])];
    auto io = oracle_at.find(s.step);
    auto ip = pred_at.find(s.step);
    auto id = disp_at.find(s.step);
    if (io == oracle_at.end()) throw DataError("oracle solutions miss test step " + std::to_string(s.step));
    if (ip == pred_at.end()) throw DataError("predictions miss test step " + std::to_string(s.step));
    if (id == disp_at.end()) throw DataError("dispatch output misses test step " + std::to_string(s.step));
    const DispatchSolution& so = oracle.solutions[io->second];
    const DispatchSolution& sd = disp.solutions[id->second];
    if (sd.status != SolveStatus::optimal) throw DataError("dispatch output is infeasible at step " + std::to_string(s.step));
    const Eigen::VectorXd& fh = pred.f_hat[ip->second];
    const Eigen::VectorXd norm = train::normalize_labels(net, so.flows);
    Eigen::VectorXd raw_mw(fh.size());
    for (Eigen::Index l = 0; l < fh.size(); ++l) {
      raw_mw(l) = fh(l) * net.links[static_cast<std::size_t>(l)].f_nom;
      raw_a.push_back(norm(l));
      raw_f.push_back(fh(l));
      flow_a.push_back(so.flows(l));
      flow_f.push_back(sd.flows(l));
    }
    for (std::size_t g = 0; g < net.num_generators(); ++g) {
      auto& [a, f] = gen[std::string(carrier_name(net.generators[g].carrier))];
      a.push_back(so.gen_output(static_cast<Eigen::Index>(g)));
      f.push_back(sd.gen_output(static_cast<Eigen::Index>(g)));
    }
    truth_rows.row(static_cast<Eigen::Index>(i)) = norm.transpose();
    model_rows.row(static_cast<Eigen::Index>(i)) = fh.transpose();
    snaps.push_back(s);
    before.push_back(raw_mw);
    after.push_back(sd.flows);
  }

  eval::EvalReport rep;
  rep.test_snapshots = snaps.size();
  rep.maape_flows_raw = eval::maape(raw_a, raw_f);
  rep.maape_flows = eval::maape(flow_a, flow_f);
  for (const auto& [carrier, af] : gen) rep.maape_generation[carrier] = eval::maape(af.first, af.second);
  rep.imbalance = eval::imbalance_report(net, snaps, before, after);

  const BaselineData b = baseline_data(ds, oracle);
  eval::LinearBaseline lr;
  lr.fit(b.x_train, b.y_train);
  eval::KnnBaseline knn(5);
  knn.fit(b.x_train, b.y_train);
  eval::MeanBaseline mean;
  mean.fit(b.y_train);
  std::map<std::string, std::vector<double>> curves;
  curves["model"] = per_row_maape(truth_rows, model_rows);
  curves["LR"] = per_row_maape(b.y_test, lr.predict(b.x_test));
  curves["KNN"] = per_row_maape(b.y_test, knn.predict(b.x_test));
  curves["mean"] = per_row_maape(b.y_test, mean.predict(b.x_test.rows()));
  for (const char* name : {"LR", "KNN", "mean"}) rep.baselines[name] = mean_of(curves[name]);

  if (!o.checkpoint.empty()) {
    const nn::Checkpoint ck = nn::load_checkpoint(o.checkpoint);
    if (!(ck.network == net)) throw DataError("checkpoint was trained on a different network");
    const nn::Structure s = nn::make_structure(net, ck.config, ck.encoding);
    std::vector<nn::Matrix> h;
    for (const Snapshot& snap : snaps) h.push_back(build_features(net, snap, ck.demand_max, s.encoding));
    rep.runtime_model = eval::runtime_bench(
        [&] {
          for (std::size_t i = 0; i < h.size(); ++i) {
            project_and_dispatch(net, snaps[i], nn::predict(ck.config, s, ck.params, h[i]).f_hat);
          }
        },
        snaps.size(), o.reps);
    rep.runtime_oracle = eval::runtime_bench([&] { solve_batch_serial(net, snaps); }, snaps.size(), o.reps);
  }

  const fs::path dir(o.out_dir);
  textio::write_file(dir / "report.json", rep.to_json());
  if (!o.no_plots) {
    textio::write_file(dir / "maape_cdf.svg", eval::cdf_svg(curves, "MAAPE per test snapshot"));
    textio::write_file(dir / "imbalance.svg",
                       eval::imbalance_svg(rep.imbalance.per_node_before, rep.imbalance.per_node_after));
  }
  std::cout << "flow MAAPE: model " << rep.maape_flows_raw << " (projected " << rep.maape_flows << "), LR "
            << rep.baselines["LR"] << ", KNN " << rep.baselines["KNN"] << ", mean " << rep.baselines["mean"] << '\n'
            << "mean absolute imbalance: raw " << rep.imbalance.mean_before << " MW, projected "
            << rep.imbalance.mean_after << " MW\n"
            << "report -> " << (dir / "report.json").string() << '\n';
}

// ---------------------------------------------------------------- pca

struct PcaOpts {
  std::string attention, out;
  int components = 2;
};

void run_pca(const PcaOpts& o) {
  require_file(o.attention, "attention records (run infer --attention first)");
  require_parent(o.out);
  const auto groups = nn::attention_from_csv(textio::read_file(o.attention));
  nlohmann::ordered_json doc;
  for (const auto& [name, mats] : groups) {
    const eval::PcaResult r = eval::pca_attention(mats);
    const Eigen::Index k = std::min<Eigen::Index>(o.components, r.components.rows());
    nlohmann::ordered_json entry;
    entry["shape"] = {mats.front().rows(), mats.front().cols()};
    entry["samples"] = mats.size();
    entry["explained_variance_ratio"] =
        std::vector<double>(r.explained_variance_ratio.data(), r.explained_variance_ratio.data() + r.explained_variance_ratio.size());
    std::vector<std::vector<double>> comps;
    for (Eigen::Index c = 0; c < k; ++c) {
      const Eigen::RowVectorXd row = r.components.row(c);
      comps.emplace_back(row.data(), row.data() + row.size());
    }
    entry["components"] = comps;
    entry["mean"] = std::vector<double>(r.mean.data(), r.mean.data() + r.mean.size());
    doc[name] = entry;
    std::cout << name << ":";
    for (Eigen::Index c = 0; c < k; ++c) std::cout << " PC" << c + 1 << " " << 100.0 * r.explained_variance_ratio(c) << "%";
    std::cout << '\n';
  }
  textio::write_file(o.out, doc.dump(1) + "\n");
}

// ---------------------------------------------------------------- bench

struct BenchOpts {
  std::string checkpoint, dataset, out;
  int reps = 5;
};

void run_bench(const BenchOpts& o) {
  require_file(o.checkpoint, "checkpoint (run train first)");
  require_file(o.dataset, "dataset");
  if (!o.out.empty()) require_parent(o.out);
  const nn::Checkpoint ck = nn::load_checkpoint(o.checkpoint);
  const Dataset ds = load_dataset(o.dataset);
  if (!(ck.network == ds.network)) throw DataError("checkpoint was trained on a different network");
  const nn::Structure s = nn::make_structure(ds.network, ck.config, ck.encoding);
  std::vector<Snapshot> snaps;
  for (int p : ds.test) snaps.push_back(ds.snapshots[static_cast<std::size_t>(p)]);
  std::vector<nn::Matrix> h;
  for (const Snapshot& snap : snaps) h.push_back(build_features(ds.network, snap, ck.demand_max, s.encoding));
  const eval::Runtime model = eval::runtime_bench(
      [&] {
        for (const auto& m : h) nn::predict(ck.config, s, ck.params, m);
      },
      snaps.size(), o.reps);
  const eval::Runtime full = eval::runtime_bench(
      [&] {
        for (std::size_t i = 0; i < h.size(); ++i) {
          project_and_dispatch(ds.network, snaps[i], nn::predict(ck.config, s, ck.params, h[i]).f_hat);
        }
      },
      snaps.size(), o.reps);
  const eval::Runtime oracle =
      eval::runtime_bench([&] { solve_batch_serial(ds.network, snaps); }, snaps.size(), o.reps);
  std::cout << "sec per 100 snapshots (median of " << o.reps << "): model " << model.sec_per_100
            << ", model + projection + dispatch " << full.sec_per_100 << ", oracle " << oracle.sec_per_100 << '\n';
  if (!o.out.empty()) {
    nlohmann::ordered_json j = {{"snapshots", snaps.size()},
                                {"repetitions", o.reps},
                                {"model", model.sec_per_100},
                                {"model_with_projection", full.sec_per_100},
                                {"oracle", oracle.sec_per_100}};
    textio::write_file(o.out, j.dump(2) + "\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridflow: synthetic transport-model dispatch data, DCOPF oracle, and a graph-attention surrogate"};
  app.set_config("--config", "", "TOML or INI file with option values (command-line flags take precedence)")
      ->envname("GRIDFLOW_CONFIG");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 1;
  int threads = 1;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", threads, "OpenMP threads")->check(CLI::PositiveNumber)->capture_default_str();

  GenOpts gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic network and hourly snapshots");
  g->add_option("--out-dir", gen.out_dir, "Existing output directory")->required();
  g->add_option("--name", gen.name, "File stem")->capture_default_str();
  g->add_option("--nodes", gen.nodes, "Number of nodes")->check(CLI::Range(2, 100000))->capture_default_str();
  g->add_option("--snapshots", gen.snapshots, "Number of hourly snapshots")->check(CLI::PositiveNumber)->capture_default_str();
  g->add_option("--avg-degree", gen.avg_degree, "Average node degree")->capture_default_str();
  g->add_option("--test-fraction", gen.test_fraction, "Share of snapshots held out")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  g->add_flag("--demand-max-from-all", gen.demand_max_from_all, "Normalize demand with the maximum over all snapshots");
  g->add_option("--link-fnom", gen.link_f_nom, "The two link ratings (MW) drawn with equal probability")->expected(2)->capture_default_str();
  g->add_option("--total-margin", gen.total_margin, "Total installed capacity / peak demand")->capture_default_str();
  g->add_option("--conventional-margin", gen.conventional_margin, "Conventional capacity / peak demand")->capture_default_str();
  g->add_option("--hubs-per-ten", gen.hubs_per_ten, "Nodes with conventional plants per ten nodes")->capture_default_str();

  SolveOpts sol;
  auto* s = app.add_subcommand("solve", "Solve the DCOPF for every snapshot (training labels)");
  s->add_option("--dataset", sol.dataset, "Dataset manifest")->required();
  s->add_option("--out", sol.out, "Solutions manifest to write")->required();
  s->add_flag("--no-link-cost", sol.no_link_cost, "Ignore link marginal costs");
  s->add_flag("--strict-efficiency", sol.strict_efficiency, "Apply link efficiency to received power");

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "Train the attention model on oracle labels");
  t->add_option("--dataset", tr.dataset, "Dataset manifest")->required();
  t->add_option("--solutions", tr.solutions, "Oracle solutions manifest")->required();
  t->add_option("--out", tr.out, "Checkpoint to write")->required();
  t->add_option("--log", tr.log, "Training log CSV (default: <out>.log.csv)");
  t->add_option("--resume", tr.resume, "Continue from this checkpoint");
  t->add_option("--epochs", tr.cfg.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--batch-size", tr.cfg.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--patience", tr.cfg.patience, "Early-stopping patience (epochs)")->check(CLI::PositiveNumber)->capture_default_str();
  t->add_flag("--no-early-stop", tr.no_early_stop, "Run all epochs");
  t->add_option("--lr-max", tr.cfg.lr_max)->capture_default_str();
  t->add_option("--lr-min", tr.cfg.lr_min)->capture_default_str();
  t->add_option("--decay-steps", tr.cfg.decay_steps, "Optimizer steps of polynomial decay")->capture_default_str();
  t->add_option("--power", tr.cfg.power, "Polynomial decay power")->capture_default_str();
  t->add_option("--alpha", tr.cfg.alpha, "Weight of the capacity penalty")->capture_default_str();
  t->add_option("--val-fraction", tr.cfg.val_fraction, "Tail of the training split used for validation")->capture_default_str();
  t->add_option("--max-seconds", tr.cfg.max_seconds, "Wall-clock budget, 0 for none")->capture_default_str();
  t->add_option("--encoding-size", tr.model.m, "Positional encoding length m")->capture_default_str();
  t->add_option("--hops", tr.model.hops, "Hop radius of each attention window")->capture_default_str();
  t->add_option("--latent", tr.model.latent, "Latent size per window (F')")->capture_default_str();
  t->add_option("--qk-dim", tr.model.qk_dim, "Query/key size of the node-link attention (V)")->capture_default_str();
  t->add_option("--link-dim", tr.model.link_dim, "Value size of the node-link attention (U)")->capture_default_str();
  t->add_option("--hidden", tr.model.hidden, "Hidden layer sizes of the output MLP")->capture_default_str();
  t->add_flag("--quiet", tr.quiet, "No per-epoch output");

  InferOpts inf;
  auto* i = app.add_subcommand("infer", "Predict normalized flows (and attention) with a checkpoint");
  i->add_option("--checkpoint", inf.checkpoint)->required();
  i->add_option("--dataset", inf.dataset)->required();
  i->add_option("--out", inf.out, "Predictions CSV")->required();
  i->add_option("--attention", inf.attention, "Also write attention matrices to this CSV");
  i->add_option("--split", inf.split, "Snapshots to predict")->check(CLI::IsMember({"test", "train", "all"}))->capture_default_str();

  ProjectOpts pj;
  auto* p = app.add_subcommand("project-dispatch", "Project predictions onto the feasible set and dispatch generators");
  p->add_option("--dataset", pj.dataset)->required();
  p->add_option("--predictions", pj.predictions)->required();
  p->add_option("--out", pj.out, "Solutions manifest to write")->required();
  p->add_flag("--strict-rank", pj.strict_rank, "Rank generators by their own marginal cost");

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Accuracy, imbalance and baselines on the test split");
  e->add_option("--dataset", ev.dataset)->required();
  e->add_option("--solutions", ev.solutions, "Oracle solutions manifest")->required();
  e->add_option("--predictions", ev.predictions, "Output of infer")->required();
  e->add_option("--dispatch", ev.dispatch, "Output of project-dispatch")->required();
  e->add_option("--out-dir", ev.out_dir, "Existing directory for report.json and plots")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Also time the model against the oracle");
  e->add_option("--reps", ev.reps, "Timing repetitions")->check(CLI::PositiveNumber)->capture_default_str();
  e->add_flag("--no-plots", ev.no_plots, "Skip the SVG plots");

  PcaOpts pc;
  auto* c = app.add_subcommand("pca", "Principal components of recorded attention matrices");
  c->add_option("--attention", pc.attention, "Output of infer --attention")->required();
  c->add_option("--out", pc.out, "JSON file to write")->required();
  c->add_option("--components", pc.components)->check(CLI::PositiveNumber)->capture_default_str();

  BenchOpts bn;
  auto* b = app.add_subcommand("bench", "Time model inference against the oracle on the test split");
  b->add_option("--checkpoint", bn.checkpoint)->required();
  b->add_option("--dataset", bn.dataset)->required();
  b->add_option("--reps", bn.reps)->check(CLI::PositiveNumber)->capture_default_str();
  b->add_option("--out", bn.out, "Optional JSON file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 1;
  }
  omp_set_num_threads(threads);

  try {
    if (*g) run_gen_data(gen, seed);
    if (*s) return run_solve(sol);
    if (*t) return run_train(tr, seed, threads);
    if (*i) run_infer(inf);
    if (*p) return run_project(pj);
    if (*e) run_eval(ev);
    if (*c) run_pca(pc);
    if (*b) run_bench(bn);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const SolverError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 3;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 0;
}
