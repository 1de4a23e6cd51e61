#include "gridflow/records.hpp"

#include <cmath>
#include <map>

#include "gridflow/error.hpp"
#include "gridflow/textio.hpp"

namespace gridflow::nn {

using Eigen::Index;

namespace {

// Calls row(line_no, cols) for every non-empty line after the header.
template <typename F>
void for_each_row(std::string_view text, std::string_view header, std::string_view what, F&& row) {
  std::size_t pos = 0, line_no = 0;
  bool first = true;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line != header) throw DataError(std::string(what) + " line 1: unexpected header");
      continue;
    }
    row(line_no, textio::split(line));
  }
  if (first) throw DataError(std::string(what) + ": empty file");
}

}  // namespace

std::string predictions_to_csv(const Network& network, const PredictionSet& set) {
  std::string out = "step,link_id,f_hat\n";
  for (std::size_t i = 0; i < set.steps.size(); ++i) {
    for (std::size_t l = 0; l < network.num_links(); ++l) {
      out += std::to_string(set.steps[i]) + "," + std::to_string(network.links[l].id) + "," +
             textio::format_double(set.f_hat[i](static_cast<Index>(l))) + "\n";
    }
  }
  return out;
}

PredictionSet predictions_from_csv(const Network& network, std::string_view text) {
  std::map<int, Index> link_pos;
  for (std::size_t l = 0; l < network.num_links(); ++l) link_pos[network.links[l].id] = static_cast<Index>(l);
  const auto num_links = static_cast<Index>(network.num_links());
  PredictionSet set;
  std::map<int, std::size_t> by_step;
  std::vector<std::vector<bool>> seen;
  for_each_row(text, "step,link_id,f_hat", "predictions", [&](std::size_t line_no, const auto& cols) {
    auto fail = [&](const std::string& why) {
      throw DataError("predictions line " + std::to_string(line_no) + ": " + why);
    };
    if (cols.size() != 3) fail("malformed row");
    const auto step = textio::parse_int(cols[0]);
    const auto link = textio::parse_int(cols[1]);
    const auto v = textio::parse_double(cols[2]);
    if (!step || !link || !v || !std::isfinite(*v)) fail("malformed row");
    auto it = link_pos.find(static_cast<int>(*link));
    if (it == link_pos.end()) fail("unknown link " + std::to_string(*link));
    auto [slot, inserted] = by_step.try_emplace(static_cast<int>(*step), set.steps.size());
    if (inserted) {
      set.steps.push_back(static_cast<int>(*step));
      set.f_hat.push_back(Eigen::VectorXd::Zero(num_links));
      seen.emplace_back(static_cast<std::size_t>(num_links), false);
    }
    if (seen[slot->second][static_cast<std::size_t>(it->second)]) fail("duplicate row");
    seen[slot->second][static_cast<std::size_t>(it->second)] = true;
    set.f_hat[slot->second](it->second) = *v;
  });
  for (std::size_t i = 0; i < seen.size(); ++i) {
    for (bool b : seen[i]) {
      if (!b) throw DataError("predictions: step " + std::to_string(set.steps[i]) + " misses a link");
    }
  }
  return set;
}

std::string attention_to_csv(const PredictionSet& set) {
  std::string out = "step,matrix,row,col,value\n";
  auto dump = [&](int step, const std::string& name, const Matrix& m) {
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        out += std::to_string(step) + "," + name + "," + std::to_string(r) + "," + std::to_string(c) + "," +
               textio::format_double(m(r, c)) + "\n";
      }
    }
  };
  for (std::size_t i = 0; i < set.attention.size(); ++i) {
    const AttentionRecord& a = set.attention[i];
    for (std::size_t k = 0; k < a.node_att.size(); ++k) dump(set.steps[i], "window" + std::to_string(k), a.node_att[k]);
    dump(set.steps[i], "link", a.link_att);
  }
  return out;
}

std::map<std::string, std::vector<Matrix>> attention_from_csv(std::string_view text) {
  struct Entry {
    long long row, col;
    double value;
  };
  // name -> step -> entries, keeping first-seen step order per name.
  std::map<std::string, std::vector<std::pair<int, std::vector<Entry>>>> raw;
  std::map<std::string, std::map<int, std::size_t>> index;
  for_each_row(text, "step,matrix,row,col,value", "attention", [&](std::size_t line_no, const auto& cols) {
    const auto step = cols.size() == 5 ? textio::parse_int(cols[0]) : std::nullopt;
    const auto row = cols.size() == 5 ? textio::parse_int(cols[2]) : std::nullopt;
    const auto col = cols.size() == 5 ? textio::parse_int(cols[3]) : std::nullopt;
    const auto v = cols.size() == 5 ? textio::parse_double(cols[4]) : std::nullopt;
    if (!step || !row || !col || !v || *row < 0 || *col < 0) {
      throw DataError("attention line " + std::to_string(line_no) + ": malformed row");
    }
    const std::string name(cols[1]);
    auto [it, inserted] = index[name].try_emplace(static_cast<int>(*step), raw[name].size());
    if (inserted) raw[name].emplace_back(static_cast<int>(*step), std::vector<Entry>{});
    raw[name][it->second].second.push_back({*row, *col, *v});
  });
  std::map<std::string, std::vector<Matrix>> out;
  for (const auto& [name, steps] : raw) {
    for (const auto& [step, entries] : steps) {
      long long rows = 0, cols = 0;
      for (const Entry& e : entries) {
        rows = std::max(rows, e.row + 1);
        cols = std::max(cols, e.col + 1);
      }
      if (static_cast<long long>(entries.size()) != rows * cols) {
        throw DataError("attention: matrix " + name + " at step " + std::to_string(step) + " is incomplete");
      }
      Matrix m(rows, cols);
      for (const Entry& e : entries) m(e.row, e.col) = e.value;
      if (!out[name].empty() && (out[name].front().rows() != rows || out[name].front().cols() != cols)) {
        throw DataError("attention: matrix " + name + " changes shape");
      }
      out[name].push_back(std::move(m));
    }
  }
  return out;
}

}  // namespace gridflow::nn
