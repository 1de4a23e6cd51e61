#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridflow/grid.hpp"
#include "gridflow/snapshot.hpp"

namespace gridflow::eval {

/// arctan(|(a - f) / a|); pi/2 when a = 0 and f != 0, 0 when both are 0.
double maape_term(double actual, double forecast);

/// Mean of maape_term. Throws DataError on empty or mismatched input.
double maape(std::span<const double> actual, std::span<const double> forecast);

/// |clamp(P, 0, cap) - P| per node, where P is the generation the flows
/// (MW) require at each node.
Eigen::VectorXd nodal_imbalance(const Network& network, const Snapshot& snapshot, const Eigen::VectorXd& flows);

struct ImbalanceReport {
  Eigen::VectorXd per_node_before;  // mean absolute imbalance, MW
  Eigen::VectorXd per_node_after;
  double mean_before = 0.0;  // grand means, MW
  double mean_after = 0.0;
  double max_after = 0.0;  // worst node on any snapshot, MW
};

ImbalanceReport imbalance_report(const Network& network, std::span<const Snapshot> snapshots,
                                 std::span<const Eigen::VectorXd> flows_before,
                                 std::span<const Eigen::VectorXd> flows_after);

struct PcaResult {
  Eigen::MatrixXd components;  // one principal axis per row
  Eigen::VectorXd explained_variance_ratio;
  Eigen::VectorXd singular_values;
  Eigen::VectorXd mean;
};

/// PCA of the rows of `samples` via SVD of the centered data. Each axis is
/// sign-fixed like the positional encoding. Throws DataError with < 2 rows.
PcaResult pca(const Eigen::MatrixXd& samples);

/// Flattens each matrix row-major and runs pca.
PcaResult pca_attention(const std::vector<Eigen::MatrixXd>& matrices);

/// Least squares with intercept; the slope coefficients carry a 1e-8 ridge.
class LinearBaseline {
 public:
  void fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);  // samples in rows
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const;        // clipped to [-1, 1]

 private:
  Eigen::MatrixXd coef_;  // (d + 1) x outputs, intercept last
};

/// Mean label of the k nearest training rows (Euclidean, ties by index).
class KnnBaseline {
 public:
  explicit KnnBaseline(int k = 5) : k_(k) {}
  void fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const;

 private:
  int k_;
  Eigen::MatrixXd x_, y_;
};

/// Predicts the training mean label everywhere.
class MeanBaseline {
 public:
  void fit(const Eigen::MatrixXd& y);
  Eigen::MatrixXd predict(Eigen::Index rows) const;

 private:
  Eigen::RowVectorXd mean_;
};

struct Runtime {
  double sec_per_100 = 0.0;  // median
  std::vector<double> runs;  // seconds per 100 snapshots, one per repetition
};

/// Runs `run_all` (which processes `count` snapshots) once to warm up, then
/// `repetitions` times on a single thread.
Runtime runtime_bench(const std::function<void()>& run_all, std::size_t count, int repetitions = 5);

struct EvalReport {
  std::size_t test_snapshots = 0;
  double maape_flows_raw = 0.0;        // normalized predictions before projection
  double maape_flows = 0.0;            // projected flows
  std::map<std::string, double> maape_generation;  // per carrier
  std::map<std::string, double> baselines;         // flow MAAPE per baseline
  ImbalanceReport imbalance;
  std::optional<Runtime> runtime_model;
  std::optional<Runtime> runtime_oracle;

  std::string to_json() const;
};

/// Step-function CDF curves, one per named series of values.
std::string cdf_svg(const std::map<std::string, std::vector<double>>& series, const std::string& x_label);

/// Paired bars per node: imbalance before and after projection.
std::string imbalance_svg(const Eigen::VectorXd& before, const Eigen::VectorXd& after);

}  // namespace gridflow::eval
