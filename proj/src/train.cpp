#include "gridflow/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include <omp.h>

#include "gridflow/error.hpp"
#include "gridflow/rng.hpp"
#include "gridflow/textio.hpp"
#include "json.hpp"

namespace gridflow::train {

using Eigen::Index;
using Eigen::VectorXd;

std::string TrainConfig::to_json() const {
  nlohmann::json j = {{"epochs", epochs},       {"batch_size", batch_size},     {"patience", patience},
                      {"early_stopping", early_stopping}, {"lr_max", lr_max}, {"lr_min", lr_min},
                      {"decay_steps", decay_steps}, {"power", power},        {"alpha", alpha},
                      {"val_fraction", val_fraction}, {"seed", seed},        {"max_seconds", max_seconds}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  if (text.empty()) return c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.patience = j.value("patience", c.patience);
    c.early_stopping = j.value("early_stopping", c.early_stopping);
    c.lr_max = j.value("lr_max", c.lr_max);
    c.lr_min = j.value("lr_min", c.lr_min);
    c.decay_steps = j.value("decay_steps", c.decay_steps);
    c.power = j.value("power", c.power);
    c.alpha = j.value("alpha", c.alpha);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.seed = j.value("seed", c.seed);
    c.max_seconds = j.value("max_seconds", c.max_seconds);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("train config: ") + e.what());
  }
  return c;
}

void check_config(const TrainConfig& c) {
  if (c.epochs <= 0 || c.batch_size <= 0 || c.patience <= 0 || c.decay_steps <= 0) {
    throw DataError("train config: epochs, batch size, patience and decay steps must be positive");
  }
  if (!(c.lr_min > 0.0) || !(c.lr_max >= c.lr_min)) throw DataError("train config: need 0 < lr_min <= lr_max");
  if (!(c.power > 0.0) || !(c.alpha >= 0.0)) throw DataError("train config: power must be positive, alpha >= 0");
  if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) throw DataError("train config: val_fraction in [0, 1)");
}

double lr_schedule(const TrainConfig& c, long long step) {
  const double t = static_cast<double>(std::clamp<long long>(step, 0, c.decay_steps));
  return (c.lr_max - c.lr_min) * std::pow(1.0 - t / c.decay_steps, c.power) + c.lr_min;
}

VectorXd normalize_labels(const Network& network, const VectorXd& flows) {
  if (flows.size() != static_cast<Index>(network.num_links())) throw DataError("labels: one flow per link expected");
  VectorXd out(flows.size());
  for (Index l = 0; l < flows.size(); ++l) {
    const double f_nom = network.links[static_cast<std::size_t>(l)].f_nom;
    if (std::abs(flows(l)) > f_nom + kFeasibilityTolerance) {
      throw DataError("label on link " + std::to_string(network.links[static_cast<std::size_t>(l)].id) +
                      " exceeds f_nom");
    }
    out(l) = std::clamp(flows(l) / f_nom, -1.0, 1.0);
  }
  return out;
}

LossContext make_loss_context(const Network& network, double alpha) {
  LossContext ctx;
  ctx.inc_fnom = incidence(network);
  for (std::size_t l = 0; l < network.num_links(); ++l) ctx.inc_fnom.col(static_cast<Index>(l)) *= network.links[l].f_nom;
  ctx.alpha = alpha;
  return ctx;
}

LossTerms loss_value(const VectorXd& f_hat, const Sample& s, const LossContext& ctx) {
  LossTerms out;
  const VectorXd diff = f_hat - s.target.row(0).transpose();
  for (Index l = 0; l < diff.size(); ++l) out.residual += nn::log_cosh(diff(l));
  out.residual /= static_cast<double>(diff.size());
  const VectorXd total = s.demand + ctx.inc_fnom * f_hat;
  const VectorXd v = total.cwiseMax(0.0).cwiseMin(s.capacity) - total;
  out.penalty = v.squaredNorm() / static_cast<double>(v.size());
  out.total = out.residual + ctx.alpha * out.penalty;
  return out;
}

nn::Var loss_on_tape(nn::Tape& t, nn::Var f_hat, const Sample& s, const LossContext& ctx) {
  const nn::Var residual = nn::logcosh_mean(t, f_hat, s.target);
  const nn::Var totals = nn::affine_of_row(t, f_hat, ctx.inc_fnom, s.demand);
  const nn::Var penalty = nn::box_violation_sq_mean(t, totals, VectorXd::Zero(s.demand.size()), s.capacity);
  return nn::add_scaled(t, residual, penalty, ctx.alpha);
}

std::vector<Sample> build_samples(const Dataset& dataset, const SolutionSet& solutions, const NodeEncoding& encoding,
                                  const std::vector<int>& positions) {
  std::map<int, std::size_t> by_step;
  for (std::size_t i = 0; i < solutions.steps.size(); ++i) by_step[solutions.steps[i]] = i;
  const Topology topo = build_topology(dataset.network);
  std::vector<Sample> out;
  out.reserve(positions.size());
  for (int pos : positions) {
    const Snapshot& snap = dataset.snapshots.at(static_cast<std::size_t>(pos));
    auto it = by_step.find(snap.step);
    if (it == by_step.end()) throw DataError("no oracle solution for step " + std::to_string(snap.step));
    const DispatchSolution& sol = solutions.solutions[it->second];
    if (sol.status != SolveStatus::optimal) throw DataError("step " + std::to_string(snap.step) + " has no optimal label");
    Sample s;
    s.step = snap.step;
    s.h = build_features(dataset.network, snap, dataset.demand_max, encoding);
    s.target = normalize_labels(dataset.network, sol.flows).transpose();
    s.demand = snap.demand;
    s.capacity = node_capacity(dataset.network, topo, snap);
    out.push_back(std::move(s));
  }
  return out;
}

Problem make_problem(const Dataset& dataset, const SolutionSet& solutions, const nn::ModelConfig& model,
                     double alpha, const std::vector<int>& positions) {
  Problem pb;
  pb.model = model;
  pb.structure = nn::make_structure(dataset.network, model);
  pb.loss = make_loss_context(dataset.network, alpha);
  pb.samples = build_samples(dataset, solutions, pb.structure.encoding, positions);
  return pb;
}

namespace {

// Adds one sample's loss and gradient into (loss, grad).
void accumulate_sample(const Problem& pb, const Params& params, const Sample& s, double& loss, Params& grad) {
  nn::Tape tape;
  const nn::ForwardVars fv = nn::forward(tape, pb.model, pb.structure, params, s.h);
  const nn::Var l = loss_on_tape(tape, fv.f_hat, s, pb.loss);
  tape.backward(l);
  loss += tape.value(l)(0, 0);
  for (std::size_t i = 0; i < fv.params.size(); ++i) {
    if (tape.has_grad(fv.params[i])) grad.tensors[i] += tape.grad_slot(fv.params[i]);
  }
}

void scale_params(Params& p, double s) {
  for (Matrix& t : p.tensors) t *= s;
}

constexpr std::size_t kChunk = 4;

}  // namespace

BatchResult batch_gradient_serial(const Problem& pb, const Params& params, const std::vector<int>& batch) {
  if (batch.empty()) throw DataError("empty batch");
  BatchResult r;
  r.grad = params.zeros_like();
  for (int i : batch) accumulate_sample(pb, params, pb.samples.at(static_cast<std::size_t>(i)), r.loss, r.grad);
  const double inv = 1.0 / static_cast<double>(batch.size());
  r.loss *= inv;
  scale_params(r.grad, inv);
  return r;
}

BatchResult batch_gradient(const Problem& pb, const Params& params, const std::vector<int>& batch) {
  if (batch.empty()) throw DataError("empty batch");
  for (int i : batch) {
    if (i < 0 || static_cast<std::size_t>(i) >= pb.samples.size()) throw DataError("batch index out of range");
  }
  const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<Params> partial(chunks);
  std::vector<double> partial_loss(chunks, 0.0);
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
    try {
      const auto cu = static_cast<std::size_t>(c);
      partial[cu] = params.zeros_like();
      const std::size_t end = std::min(batch.size(), (cu + 1) * kChunk);
      for (std::size_t k = cu * kChunk; k < end; ++k) {
        accumulate_sample(pb, params, pb.samples[static_cast<std::size_t>(batch[k])], partial_loss[cu], partial[cu]);
      }
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw NumericError(error);
  BatchResult r;
  r.grad = std::move(partial[0]);
  r.loss = partial_loss[0];
  for (std::size_t c = 1; c < chunks; ++c) {
    r.loss += partial_loss[c];
    for (std::size_t i = 0; i < r.grad.tensors.size(); ++i) r.grad.tensors[i] += partial[c].tensors[i];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  r.loss *= inv;
  scale_params(r.grad, inv);
  return r;
}

double mean_loss(const Problem& pb, const Params& params, const std::vector<int>& indices) {
  if (indices.empty()) return 0.0;
  std::vector<double> losses(indices.size());
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(indices.size()); ++k) {
    try {
      const Sample& s = pb.samples.at(static_cast<std::size_t>(indices[static_cast<std::size_t>(k)]));
      const nn::Prediction pred = nn::predict(pb.model, pb.structure, params, s.h);
      losses[static_cast<std::size_t>(k)] = loss_value(pred.f_hat, s, pb.loss).total;
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw NumericError(error);
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(losses.size());
}

AdamState make_adam(const Params& params) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

void adam_step(Params& params, AdamState& st, const Params& grad, double lr) {
  for (const Matrix& g : grad.tensors) {
    if (!g.allFinite()) throw NumericError("adam: non-finite gradient");
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    Matrix& m = st.m.tensors[i];
    Matrix& v = st.v.tensors[i];
    const Matrix& g = grad.tensors[i];
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseAbs2();
    params.tensors[i].array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEps);
  }
}

void split_validation(const std::vector<int>& train_positions, double val_fraction, std::vector<int>& fit,
                      std::vector<int>& val) {
  const auto n = train_positions.size();
  auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  if (val_fraction > 0.0 && n_val == 0 && n >= 2) n_val = 1;
  fit.assign(train_positions.begin(), train_positions.end() - static_cast<std::ptrdiff_t>(n_val));
  val.assign(train_positions.end() - static_cast<std::ptrdiff_t>(n_val), train_positions.end());
}

TrainState fresh_state(const Params& init) {
  TrainState s;
  s.params = init;
  s.best_params = init;
  s.adam = make_adam(init);
  return s;
}

TrainResult fit(const Problem& pb, const TrainConfig& config, TrainState state,
                const std::function<void(const EpochLog&)>& on_epoch) {
  check_config(config);
  if (pb.samples.empty()) throw DataError("no training samples");
  if (config.threads > 0) omp_set_num_threads(config.threads);
  std::vector<int> all(pb.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  std::vector<int> fit_idx, val_idx;
  split_validation(all, config.val_fraction, fit_idx, val_idx);
  const std::vector<int>& monitor = val_idx.empty() ? fit_idx : val_idx;

  TrainResult result;
  if (!state.started) {
    state.best_val = mean_loss(pb, state.params, monitor);
    state.best_params = state.params;
    state.started = true;
  }
  const auto t0 = std::chrono::steady_clock::now();
  while (state.epoch < config.epochs) {
    std::vector<int> order = fit_idx;
    Rng rng = Rng::substream(config.seed, 1000 + static_cast<std::uint64_t>(state.epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    double lr = 0.0;
    try {
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
        const std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(order.size(), b + static_cast<std::size_t>(config.batch_size))));
        const BatchResult br = batch_gradient(pb, state.params, batch);
        lr = lr_schedule(config, state.adam.step);
        adam_step(state.params, state.adam, br.grad, lr);
        loss_sum += br.loss * static_cast<double>(batch.size());
      }
    } catch (const NumericError& e) {
      result.reason = StopReason::diverged;
      result.message = e.what();
      break;
    }
    ++state.epoch;
    EpochLog entry;
    entry.epoch = state.epoch;
    entry.train_loss = loss_sum / static_cast<double>(order.size());
    try {
      entry.val_loss = mean_loss(pb, state.params, monitor);
    } catch (const NumericError& e) {
      result.reason = StopReason::diverged;
      result.message = e.what();
      break;
    }
    entry.lr = lr;
    entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(entry.train_loss) || !std::isfinite(entry.val_loss)) {
      result.reason = StopReason::diverged;
      result.message = "loss is not finite";
      break;
    }
    if (entry.val_loss < state.best_val) {
      state.best_val = entry.val_loss;
      state.best_params = state.params;
      state.epochs_since_best = 0;
    } else {
      ++state.epochs_since_best;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (config.early_stopping && state.epochs_since_best >= config.patience) {
      result.reason = StopReason::early_stop;
      break;
    }
    if (config.max_seconds > 0.0 && entry.wall_ms >= 1000.0 * config.max_seconds) {
      result.reason = StopReason::time_budget;
      break;
    }
  }
  result.state = std::move(state);
  return result;
}

std::string log_to_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,val_loss,lr,wall_ms\n";
  for (const EpochLog& e : log) {
    out += std::to_string(e.epoch) + "," + textio::format_double(e.train_loss) + "," +
           textio::format_double(e.val_loss) + "," + textio::format_double(e.lr) + "," +
           textio::format_double(std::round(e.wall_ms)) + "\n";
  }
  return out;
}

nn::Checkpoint make_checkpoint(const Dataset& dataset, const Problem& problem, const TrainConfig& config,
                               const TrainState& state) {
  nn::Checkpoint c;
  c.config = problem.model;
  c.network = dataset.network;
  c.params = state.best_params;
  c.encoding = problem.structure.encoding;
  c.demand_max = dataset.demand_max;
  c.seed = config.seed;
  c.current = state.params;
  c.adam_m = state.adam.m;
  c.adam_v = state.adam.v;
  c.step = state.adam.step;
  c.epoch = state.epoch;
  c.best_val = state.best_val;
  c.epochs_since_best = state.epochs_since_best;
  c.train_config_json = config.to_json();
  return c;
}

TrainState state_from_checkpoint(const nn::Checkpoint& c) {
  if (c.current.tensors.empty() || c.adam_m.tensors.empty()) throw DataError("checkpoint has no optimizer state");
  TrainState s;
  s.params = c.current;
  s.best_params = c.params;
  s.adam.m = c.adam_m;
  s.adam.v = c.adam_v;
  s.adam.step = c.step;
  s.epoch = c.epoch;
  s.best_val = c.best_val;
  s.epochs_since_best = c.epochs_since_best;
  s.started = true;
  return s;
}

}  // namespace gridflow::train
