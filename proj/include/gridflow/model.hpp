#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gridflow/autodiff.hpp"
#include "gridflow/encoding.hpp"
#include "gridflow/grid.hpp"

namespace gridflow::nn {

struct ModelConfig {
  int m = 8;                      // node encoding length
  int latent = 64;                // F'
  std::vector<int> hops = {1, 3, 5};
  int qk_dim = 64;                // V
  int link_dim = 128;             // U
  std::vector<int> hidden = {32, 32};
  double leaky_slope = 0.2;

  int features() const { return kNodeFeatures + m; }
  int windows() const { return static_cast<int>(hops.size()); }
};

/// Throws DataError unless hops are strictly increasing and sizes positive.
void check_config(const ModelConfig& config);

enum class Group { gsat_W, gsat_a, nlat_Q, nlat_K, nlat_V, mlp_W, mlp_b };

const char* group_name(Group g);

/// All trainable tensors. Per-node (per-link) matrices are stored side by
/// side: gsat_W[k] is F x (N F'), nlat_Q is 2m x (L V), nlat_K is KF' x (N V),
/// nlat_V is KF' x (N U). MLP layers are d_{k-1} x d_k with d_k x 1 biases;
/// the last layer is the d_R x 1 output.
struct Params {
  std::vector<Matrix> tensors;
  std::vector<Group> groups;
  std::vector<std::string> names;

  std::size_t count() const;
  Params zeros_like() const;
  bool operator==(const Params& other) const;
};

/// Deterministic uniform init in +-sqrt(6 / (fan_in + fan_out)); biases zero.
Params init_params(std::uint64_t seed, const ModelConfig& config, int num_nodes, int num_links);

/// Network-dependent constants shared by every forward pass.
struct Structure {
  int num_nodes = 0;
  int num_links = 0;
  NodeEncoding encoding;
  Matrix p_link;            // 2m x L
  std::vector<Mask> masks;  // one per window
};

Structure make_structure(const Network& network, const ModelConfig& config);
/// Same, reusing an encoding computed earlier (e.g. stored in a checkpoint).
Structure make_structure(const Network& network, const ModelConfig& config, const NodeEncoding& encoding);

struct AttentionRecord {
  std::vector<Matrix> node_att;  // per window, N x N
  Matrix link_att;               // L x N
};

struct ForwardVars {
  Var f_hat;  // 1 x L
  std::vector<Var> node_att;
  Var link_att;
  std::vector<Var> params;  // leaves in Params order
};

/// Records the full model on the tape. `h` is the F x N feature matrix.
ForwardVars forward(Tape& tape, const ModelConfig& config, const Structure& s, const Params& p,
                    const Matrix& h);

struct Prediction {
  Eigen::VectorXd f_hat;  // L, in (-1, 1)
  AttentionRecord attention;
};

Prediction predict(const ModelConfig& config, const Structure& s, const Params& p, const Matrix& h);

// Checkpoint: "gridflow-ckpt/1" magic line, 8-byte little-endian header
// length, JSON header, then row-major float64 payload in header order.
inline constexpr std::string_view kCheckpointFormat = "gridflow-ckpt/1";

struct Checkpoint {
  ModelConfig config;
  Network network;
  Params params;
  NodeEncoding encoding;
  Eigen::VectorXd demand_max;
  std::uint64_t seed = 0;
  // Optimiser and loop state, so training can resume. `params` holds the
  // best-validation weights; `current` the weights at the last step.
  Params current;
  Params adam_m;
  Params adam_v;
  long long step = 0;
  int epoch = 0;
  double best_val = 0.0;
  int epochs_since_best = 0;
  std::string train_config_json;  // opaque to this module
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gridflow::nn
