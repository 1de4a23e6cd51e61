#include "gridflow/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <omp.h>

#include "gridflow/dispatch.hpp"
#include "gridflow/encoding.hpp"
#include "gridflow/error.hpp"
#include "json.hpp"

namespace gridflow::eval {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double maape_term(double a, double f) {
  if (a == 0.0) return f == 0.0 ? 0.0 : std::numbers::pi / 2;
  return std::atan(std::abs((a - f) / a));
}

double maape(std::span<const double> actual, std::span<const double> forecast) {
  if (actual.empty()) throw DataError("maape: empty input");
  if (actual.size() != forecast.size()) throw DataError("maape: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) sum += maape_term(actual[i], forecast[i]);
  return sum / static_cast<double>(actual.size());
}

VectorXd nodal_imbalance(const Network& network, const Snapshot& snapshot, const VectorXd& flows) {
  const VectorXd total = node_totals(network, snapshot, flows);
  const VectorXd cap = node_capacity(network, build_topology(network), snapshot);
  return (total.cwiseMax(0.0).cwiseMin(cap) - total).cwiseAbs();
}

ImbalanceReport imbalance_report(const Network& network, std::span<const Snapshot> snapshots,
                                 std::span<const VectorXd> before, std::span<const VectorXd> after) {
  if (snapshots.empty()) throw DataError("imbalance report: no snapshots");
  if (before.size() != snapshots.size() || after.size() != snapshots.size()) {
    throw DataError("imbalance report: one flow vector per snapshot expected");
  }
  const auto n = static_cast<Index>(network.num_nodes());
  ImbalanceReport r;
  r.per_node_before = VectorXd::Zero(n);
  r.per_node_after = VectorXd::Zero(n);
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    r.per_node_before += nodal_imbalance(network, snapshots[i], before[i]);
    const VectorXd a = nodal_imbalance(network, snapshots[i], after[i]);
    r.per_node_after += a;
    r.max_after = std::max(r.max_after, a.maxCoeff());
  }
  r.per_node_before /= static_cast<double>(snapshots.size());
  r.per_node_after /= static_cast<double>(snapshots.size());
  r.mean_before = r.per_node_before.mean();
  r.mean_after = r.per_node_after.mean();
  return r;
}

PcaResult pca(const MatrixXd& samples) {
  if (samples.rows() < 2) throw DataError("pca: need at least 2 samples");
  PcaResult r;
  r.mean = samples.colwise().mean().transpose();
  const MatrixXd centered = samples.rowwise() - r.mean.transpose();
  Eigen::BDCSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
  r.singular_values = svd.singularValues();
  const double total = r.singular_values.squaredNorm();
  r.explained_variance_ratio = VectorXd::Zero(r.singular_values.size());
  if (total > 0.0) r.explained_variance_ratio = r.singular_values.cwiseAbs2() / total;
  r.components = svd.matrixV().transpose();
  for (Index k = 0; k < r.components.rows(); ++k) {
    VectorXd row = r.components.row(k).transpose();
    sign_fix(row);
    r.components.row(k) = row.transpose();
  }
  return r;
}

PcaResult pca_attention(const std::vector<MatrixXd>& matrices) {
  if (matrices.size() < 2) throw DataError("pca: need at least 2 samples");
  const Index d = matrices.front().size();
  MatrixXd rows(static_cast<Index>(matrices.size()), d);
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    if (matrices[i].size() != d) throw DataError("pca: matrices differ in shape");
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = matrices[i];
    rows.row(static_cast<Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rm.data(), d);
  }
  return pca(rows);
}

void LinearBaseline::fit(const MatrixXd& x, const MatrixXd& y) {
  if (x.rows() != y.rows() || x.rows() == 0) throw DataError("linear baseline: bad training shapes");
  MatrixXd a(x.rows(), x.cols() + 1);
  a << x, VectorXd::Ones(x.rows());
  MatrixXd gram = a.transpose() * a;
  gram.diagonal().head(x.cols()).array() += 1e-8;
  coef_ = gram.ldlt().solve(a.transpose() * y);
}

MatrixXd LinearBaseline::predict(const MatrixXd& x) const {
  if (coef_.size() == 0 || x.cols() + 1 != coef_.rows()) throw DataError("linear baseline: not fitted for this input");
  MatrixXd out = (x * coef_.topRows(x.cols())).rowwise() + coef_.row(x.cols());
  return out.cwiseMax(-1.0).cwiseMin(1.0);
}

void KnnBaseline::fit(const MatrixXd& x, const MatrixXd& y) {
  if (x.rows() != y.rows() || x.rows() == 0) throw DataError("knn baseline: bad training shapes");
  if (k_ < 1) throw DataError("knn baseline: k must be positive");
  x_ = x;
  y_ = y;
}

MatrixXd KnnBaseline::predict(const MatrixXd& x) const {
  if (x_.size() == 0 || x.cols() != x_.cols()) throw DataError("knn baseline: not fitted for this input");
  const auto k = static_cast<std::size_t>(std::min<Index>(k_, x_.rows()));
  MatrixXd out(x.rows(), y_.cols());
  std::vector<int> idx(static_cast<std::size_t>(x_.rows()));
  for (Index q = 0; q < x.rows(); ++q) {
    const VectorXd d = (x_.rowwise() - x.row(q)).rowwise().squaredNorm();
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](int a, int b) { return d(a) < d(b) || (d(a) == d(b) && a < b); });
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(y_.cols());
    for (std::size_t i = 0; i < k; ++i) mean += y_.row(idx[i]);
    out.row(q) = mean / static_cast<double>(k);
  }
  return out.cwiseMax(-1.0).cwiseMin(1.0);
}

void MeanBaseline::fit(const MatrixXd& y) {
  if (y.rows() == 0) throw DataError("mean baseline: no labels");
  mean_ = y.colwise().mean();
}

MatrixXd MeanBaseline::predict(Index rows) const { return mean_.replicate(rows, 1); }

Runtime runtime_bench(const std::function<void()>& run_all, std::size_t count, int repetitions) {
  if (count == 0 || repetitions < 1) throw DataError("runtime bench: need snapshots and repetitions");
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  run_all();
  Runtime r;
  for (int i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_all();
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.runs.push_back(sec * 100.0 / static_cast<double>(count));
  }
  omp_set_num_threads(threads);
  std::vector<double> sorted = r.runs;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size() / 2;
  r.sec_per_100 = sorted.size() % 2 == 1 ? sorted[m] : 0.5 * (sorted[m - 1] + sorted[m]);
  return r;
}

std::string EvalReport::to_json() const {
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::ordered_json j;
  j["test_snapshots"] = test_snapshots;
  j["maape"] = {{"flows_raw", maape_flows_raw}, {"flows", maape_flows}, {"generation", maape_generation}};
  j["baselines_maape_flows"] = baselines;
  j["imbalance_MW"] = {{"mean_before", imbalance.mean_before},
                       {"mean_after", imbalance.mean_after},
                       {"max_after", imbalance.max_after},
                       {"per_node_before", vec(imbalance.per_node_before)},
                       {"per_node_after", vec(imbalance.per_node_after)}};
  if (runtime_model || runtime_oracle) {
    nlohmann::ordered_json rt;
    if (runtime_model) rt["model_with_projection"] = runtime_model->sec_per_100;
    if (runtime_oracle) rt["oracle"] = runtime_oracle->sec_per_100;
    j["runtime_sec_per_100"] = rt;
  }
  return j.dump(2) + "\n";
}

namespace {

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 150, kTop = 30, kBottom = 50;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

std::string frame(const std::string& x_label, const std::string& y_label, double x_max, double y_max) {
  std::ostringstream os;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = kLeft + pw * t / 4.0, fy = kTop + ph * (1.0 - t / 4.0);
    os << "<text x=\"" << fx << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">" << num(x_max * t / 4.0)
       << "</text>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << fy + 4 << "\" text-anchor=\"end\">" << num(y_max * t / 4.0)
       << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">" << x_label << "</text>\n"
     << "<text x=\"15\" y=\"" << kTop + ph / 2 << "\" transform=\"rotate(-90 15 " << kTop + ph / 2
     << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
  return os.str();
}

std::string legend(std::size_t i, const std::string& name) {
  std::ostringstream os;
  const double y = kTop + 10 + 18.0 * static_cast<double>(i);
  os << "<rect x=\"" << kW - kRight + 10 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
     << kColors[i % 6] << "\"/><text x=\"" << kW - kRight + 28 << "\" y=\"" << y + 1 << "\">" << name << "</text>\n";
  return os.str();
}

}  // namespace

std::string cdf_svg(const std::map<std::string, std::vector<double>>& series, const std::string& x_label) {
  double x_max = 0.0;
  for (const auto& [name, v] : series) {
    for (double x : v) x_max = std::max(x_max, x);
  }
  if (x_max <= 0.0) x_max = 1.0;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  std::string out = frame(x_label, "cumulative fraction", x_max, 1.0);
  std::size_t i = 0;
  for (const auto& [name, values] : series) {
    std::vector<double> v = values;
    std::sort(v.begin(), v.end());
    std::ostringstream pts;
    double prev_y = 0.0;
    pts << kLeft << "," << kTop + ph;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double x = kLeft + pw * v[k] / x_max;
      const double y = static_cast<double>(k + 1) / static_cast<double>(v.size());
      pts << " " << num(x) << "," << num(kTop + ph * (1 - prev_y)) << " " << num(x) << "," << num(kTop + ph * (1 - y));
      prev_y = y;
    }
    out += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" + std::string(kColors[i % 6]) + "\" points=\"" +
           pts.str() + "\"/>\n";
    out += legend(i, name);
    ++i;
  }
  return out + "</svg>\n";
}

std::string imbalance_svg(const VectorXd& before, const VectorXd& after) {
  if (before.size() != after.size() || before.size() == 0) throw DataError("imbalance plot: bad input sizes");
  const double y_max = std::max({before.maxCoeff(), after.maxCoeff(), 1e-12});
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  std::string out = frame("node", "mean absolute imbalance (MW)", static_cast<double>(before.size()), y_max);
  const double slot = pw / static_cast<double>(before.size());
  std::ostringstream os;
  for (Index j = 0; j < before.size(); ++j) {
    const double vals[2] = {before(j), after(j)};
    for (int b = 0; b < 2; ++b) {
      const double h = ph * vals[b] / y_max;
      os << "<rect x=\"" << num(kLeft + slot * static_cast<double>(j) + slot * (0.1 + 0.4 * b)) << "\" y=\""
         << num(kTop + ph - h) << "\" width=\"" << num(slot * 0.4) << "\" height=\"" << num(h) << "\" fill=\""
         << kColors[b] << "\"/>\n";
    }
  }
  out += os.str() + legend(0, "raw prediction") + legend(1, "after projection");
  return out + "</svg>\n";
}

}  // namespace gridflow::eval
