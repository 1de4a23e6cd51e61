#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gridflow/datagen.hpp"
#include "gridflow/model.hpp"
#include "gridflow/oracle.hpp"

namespace gridflow::train {

using nn::Matrix;
using nn::Params;

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 32;
  int patience = 100;
  bool early_stopping = true;
  double lr_max = 1e-3;
  double lr_min = 1e-4;
  int decay_steps = 100;
  double power = 1.5;
  double alpha = 1e-7;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  int threads = 1;
  double max_seconds = 0.0;  // 0 = no wall-clock budget

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// Throws DataError on non-positive sizes or lr_min > lr_max.
void check_config(const TrainConfig& config);

/// Polynomial decay over optimizer steps:
/// (lr_max - lr_min) (1 - min(t, d) / d)^power + lr_min.
double lr_schedule(const TrainConfig& config, long long step);

/// F / f_nom per link. Throws DataError if |F| exceeds f_nom by more than 1e-6 MW.
Eigen::VectorXd normalize_labels(const Network& network, const Eigen::VectorXd& flows);

/// One training example with everything the loss needs.
struct Sample {
  int step = 0;
  Matrix h;                  // F x N
  Matrix target;             // 1 x L normalized flows
  Eigen::VectorXd demand;    // MW
  Eigen::VectorXd capacity;  // MW, available generation per node
};

/// Constants of the nodal-total map P = demand + Inc diag(f_nom) f_hat.
struct LossContext {
  Matrix inc_fnom;  // N x L
  double alpha = 1e-7;
};

LossContext make_loss_context(const Network& network, double alpha);

struct LossTerms {
  double residual = 0.0;  // mean log cosh over links
  double penalty = 0.0;   // mean squared capacity-interval violation over nodes (MW^2)
  double total = 0.0;     // residual + alpha * penalty
};

/// Plain evaluation of the loss for one sample.
LossTerms loss_value(const Eigen::VectorXd& f_hat, const Sample& sample, const LossContext& ctx);

/// The same loss recorded on a tape; f_hat is 1 x L.
nn::Var loss_on_tape(nn::Tape& tape, nn::Var f_hat, const Sample& sample, const LossContext& ctx);

struct Problem {
  nn::ModelConfig model;
  nn::Structure structure;
  LossContext loss;
  std::vector<Sample> samples;
};

/// Samples for the given dataset positions, labelled from `solutions`
/// (matched by step). Throws DataError if a label is missing or not optimal.
std::vector<Sample> build_samples(const Dataset& dataset, const SolutionSet& solutions,
                                  const NodeEncoding& encoding, const std::vector<int>& positions);

/// Structure, loss constants and samples for the given dataset positions.
Problem make_problem(const Dataset& dataset, const SolutionSet& solutions, const nn::ModelConfig& model,
                     double alpha, const std::vector<int>& positions);

struct BatchResult {
  double loss = 0.0;  // mean over the batch
  Params grad;        // mean gradient
};

/// Reference: samples processed one after another, gradients summed in order.
BatchResult batch_gradient_serial(const Problem& problem, const Params& params, const std::vector<int>& batch);

/// OpenMP version. Samples are grouped in fixed chunks whose partial sums are
/// added in chunk order, so the result does not depend on the thread count.
BatchResult batch_gradient(const Problem& problem, const Params& params, const std::vector<int>& batch);

/// Mean loss over the given samples (no gradients).
double mean_loss(const Problem& problem, const Params& params, const std::vector<int>& indices);

struct AdamState {
  Params m;
  Params v;
  long long step = 0;
};

inline constexpr double kBeta1 = 0.9;
inline constexpr double kBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

AdamState make_adam(const Params& params);
/// One bias-corrected Adam update in place. Throws NumericError on NaN grads.
void adam_step(Params& params, AdamState& state, const Params& grad, double lr);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainState {
  Params params;       // current
  Params best_params;
  AdamState adam;
  int epoch = 0;       // epochs completed
  double best_val = 0.0;
  int epochs_since_best = 0;
  bool started = false;
};

enum class StopReason { epochs, early_stop, time_budget, diverged };

struct TrainResult {
  TrainState state;
  std::vector<EpochLog> log;
  StopReason reason = StopReason::epochs;
  std::string message;
};

/// Splits `train_positions` (indices into problem.samples) into fit and
/// validation parts: the last val_fraction of the list validates.
void split_validation(const std::vector<int>& train_positions, double val_fraction, std::vector<int>& fit,
                      std::vector<int>& val);

/// Mini-batch Adam with early stopping on validation loss. `state` may come
/// from a checkpoint to resume; pass an unstarted state for a fresh run.
TrainResult fit(const Problem& problem, const TrainConfig& config, TrainState state,
                const std::function<void(const EpochLog&)>& on_epoch = {});

TrainState fresh_state(const Params& init);

std::string log_to_csv(const std::vector<EpochLog>& log);

/// Everything needed to predict with and to resume from `state`.
nn::Checkpoint make_checkpoint(const Dataset& dataset, const Problem& problem, const TrainConfig& config,
                               const TrainState& state);

/// Resumable state stored in a checkpoint. Throws DataError if it carries
/// no optimizer state.
TrainState state_from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace gridflow::train
