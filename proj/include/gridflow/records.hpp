#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gridflow/model.hpp"

namespace gridflow::nn {

/// Model outputs for a list of snapshots, in the order of `steps`.
struct PredictionSet {
  std::vector<int> steps;
  std::vector<Eigen::VectorXd> f_hat;        // normalized, one entry per link
  std::vector<AttentionRecord> attention;  // empty when not recorded
};

/// CSV with header step,link_id,f_hat.
std::string predictions_to_csv(const Network& network, const PredictionSet& set);
PredictionSet predictions_from_csv(const Network& network, std::string_view text);

/// CSV with header step,matrix,row,col,value; matrix is window<k> or link.
std::string attention_to_csv(const PredictionSet& set);

/// Attention matrices grouped by matrix name, in file order.
std::map<std::string, std::vector<Matrix>> attention_from_csv(std::string_view text);

}  // namespace gridflow::nn
