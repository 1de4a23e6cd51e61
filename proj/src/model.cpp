#include "gridflow/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gridflow/error.hpp"
#include "gridflow/rng.hpp"
#include "json.hpp"

namespace gridflow::nn {

using Eigen::Index;
using Eigen::VectorXd;

void check_config(const ModelConfig& c) {
  if (c.m < 0 || c.latent <= 0 || c.qk_dim <= 0 || c.link_dim <= 0) {
    throw DataError("model config: sizes must be positive");
  }
  if (c.hops.empty()) throw DataError("model config: at least one attention window is required");
  for (std::size_t k = 0; k < c.hops.size(); ++k) {
    if (c.hops[k] < 0 || (k > 0 && c.hops[k] <= c.hops[k - 1])) {
      throw DataError("model config: hops must be non-negative and strictly increasing");
    }
  }
  for (int d : c.hidden) {
    if (d <= 0) throw DataError("model config: hidden sizes must be positive");
  }
}

const char* group_name(Group g) {
  switch (g) {
    case Group::gsat_W: return "gsat_W";
    case Group::gsat_a: return "gsat_a";
    case Group::nlat_Q: return "nlat_Q";
    case Group::nlat_K: return "nlat_K";
    case Group::nlat_V: return "nlat_V";
    case Group::mlp_W: return "mlp_W";
    case Group::mlp_b: return "mlp_b";
  }
  return "unknown";
}

std::size_t Params::count() const {
  std::size_t n = 0;
  for (const Matrix& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

Params Params::zeros_like() const {
  Params z = *this;
  for (Matrix& t : z.tensors) t.setZero();
  return z;
}

bool Params::operator==(const Params& other) const {
  if (tensors.size() != other.tensors.size() || groups != other.groups || names != other.names) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].rows() != other.tensors[i].rows() || tensors[i].cols() != other.tensors[i].cols()) return false;
    if (!(tensors[i].array() == other.tensors[i].array()).all()) return false;
  }
  return true;
}

Params init_params(std::uint64_t seed, const ModelConfig& c, int num_nodes, int num_links) {
  check_config(c);
  Rng rng = Rng::substream(seed, 0x6e6e);
  Params p;
  // Blocks of `blocks` matrices, each fan_in x fan_out, stored side by side.
  auto add = [&](Group g, std::string name, int fan_in, int fan_out, int blocks, bool bias) {
    Matrix t(fan_in, static_cast<Index>(fan_out) * blocks);
    if (bias) {
      t.setZero();
    } else {
      const double r = std::sqrt(6.0 / (fan_in + fan_out));
      for (Index j = 0; j < t.cols(); ++j)
        for (Index i = 0; i < t.rows(); ++i) t(i, j) = rng.uniform(-r, r);
    }
    p.tensors.push_back(std::move(t));
    p.groups.push_back(g);
    p.names.push_back(std::move(name));
  };
  const int f = c.features();
  for (int k = 0; k < c.windows(); ++k) {
    add(Group::gsat_W, "gsat_W" + std::to_string(k), f, c.latent, num_nodes, false);
    add(Group::gsat_a, "gsat_a" + std::to_string(k), 2 * c.latent, 1, 1, false);
  }
  const int kf = c.windows() * c.latent;
  add(Group::nlat_Q, "nlat_Q", 2 * c.m, c.qk_dim, num_links, false);
  add(Group::nlat_K, "nlat_K", kf, c.qk_dim, num_nodes, false);
  add(Group::nlat_V, "nlat_V", kf, c.link_dim, num_nodes, false);
  int prev = c.link_dim;
  for (std::size_t r = 0; r < c.hidden.size(); ++r) {
    add(Group::mlp_W, "mlp_W" + std::to_string(r), prev, c.hidden[r], 1, false);
    // Biases are d x 1: fan_in d, one block of width 1.
    add(Group::mlp_b, "mlp_b" + std::to_string(r), c.hidden[r], 1, 1, true);
    prev = c.hidden[r];
  }
  add(Group::mlp_W, "mlp_W_out", prev, 1, 1, false);
  add(Group::mlp_b, "mlp_b_out", 1, 1, 1, true);
  return p;
}

Structure make_structure(const Network& network, const ModelConfig& config) {
  check_config(config);
  require_valid(network);
  return make_structure(network, config, node_lpe(network, config.m));
}

Structure make_structure(const Network& network, const ModelConfig& config, const NodeEncoding& encoding) {
  check_config(config);
  if (encoding.p_node.rows() != static_cast<Index>(network.num_nodes()) || encoding.p_node.cols() != config.m) {
    throw DataError("model: stored encoding does not match the network");
  }
  Structure s;
  s.num_nodes = static_cast<int>(network.num_nodes());
  s.num_links = static_cast<int>(network.num_links());
  s.encoding = encoding;
  s.p_link = link_pe(s.encoding, network);
  for (int hop : config.hops) s.masks.push_back(hop_mask(network, hop));
  return s;
}

namespace {

void check_shapes(const ModelConfig& c, const Structure& s, const Params& p, const Matrix& h) {
  const std::size_t expected = 2 * static_cast<std::size_t>(c.windows()) + 3 + 2 * (c.hidden.size() + 1);
  if (p.tensors.size() != expected) throw DataError("model: parameter count does not match the config");
  if (h.rows() != c.features() || h.cols() != s.num_nodes) throw DataError("model: feature matrix has the wrong shape");
  if (p.tensors[0].cols() != static_cast<Index>(s.num_nodes) * c.latent) {
    throw DataError("model: parameters were built for a different network");
  }
}

}  // namespace

ForwardVars forward(Tape& t, const ModelConfig& c, const Structure& s, const Params& p, const Matrix& h) {
  check_shapes(c, s, p, h);
  ForwardVars out;
  for (const Matrix& m : p.tensors) out.params.push_back(t.param(m));
  const Var hv = t.input(h);

  std::size_t next = 0;
  std::vector<Var> windows;
  for (int k = 0; k < c.windows(); ++k) {
    const Var w = out.params[next++];
    const Var a = out.params[next++];
    const Var z = per_column_linear(t, w, hv, c.latent);  // F' x N, column j = W_j^T h_j
    const Var src = matmul(t, transpose(t, z), slice_rows(t, a, 0, c.latent));      // N x 1
    const Var dst = matmul(t, transpose(t, slice_rows(t, a, c.latent, c.latent)), z);  // 1 x N
    const Var e = leaky_relu(t, outer_add(t, src, dst), c.leaky_slope);
    const Var alpha = masked_softmax_rows(t, e, s.masks[static_cast<std::size_t>(k)]);
    out.node_att.push_back(alpha);
    windows.push_back(matmul(t, z, transpose(t, alpha)));  // column i = sum_j alpha_ij z_j
  }
  const Var h2 = concat_rows(t, windows);

  const Var wq = out.params[next++];
  const Var wk = out.params[next++];
  const Var wv = out.params[next++];
  const Var q = per_column_linear(t, wq, t.param(s.p_link), c.qk_dim);  // V x L
  const Var keys = per_column_linear(t, wk, h2, c.qk_dim);               // V x N
  const Var values = per_column_linear(t, wv, h2, c.link_dim);           // U x N
  const Var e_hat = scale(t, matmul(t, transpose(t, q), keys), 1.0 / std::sqrt(static_cast<double>(c.qk_dim)));
  out.link_att = softmax_rows(t, e_hat);                                  // L x N
  Var x = matmul(t, values, transpose(t, out.link_att));                  // U x L

  for (std::size_t r = 0; r < c.hidden.size(); ++r) {
    const Var w = out.params[next++];
    const Var b = out.params[next++];
    x = leaky_relu(t, add_col_broadcast(t, matmul(t, transpose(t, w), x), b), c.leaky_slope);
  }
  const Var w_out = out.params[next++];
  const Var b_out = out.params[next++];
  out.f_hat = tanh(t, add_col_broadcast(t, matmul(t, transpose(t, w_out), x), b_out));
  return out;
}

Prediction predict(const ModelConfig& c, const Structure& s, const Params& p, const Matrix& h) {
  Tape tape;
  const ForwardVars fv = forward(tape, c, s, p, h);
  Prediction pred;
  pred.f_hat = tape.value(fv.f_hat).row(0).transpose();
  for (Var a : fv.node_att) pred.attention.node_att.push_back(tape.value(a));
  pred.attention.link_att = tape.value(fv.link_att);
  return pred;
}

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json config_to_json(const ModelConfig& c) {
  return {{"m", c.m},           {"latent", c.latent}, {"hops", c.hops},
          {"qk_dim", c.qk_dim}, {"link_dim", c.link_dim}, {"hidden", c.hidden},
          {"leaky_slope", c.leaky_slope}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.m = j.at("m").get<int>();
  c.latent = j.at("latent").get<int>();
  c.hops = j.at("hops").get<std::vector<int>>();
  c.qk_dim = j.at("qk_dim").get<int>();
  c.link_dim = j.at("link_dim").get<int>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  check_config(c);
  return c;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  // Row-major order.
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

void read_matrix(std::istream& in, Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      m(i, j) = v;
    }
  }
  if (!in) throw DataError("checkpoint: payload truncated");
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  json header;
  header["format"] = std::string(kCheckpointFormat);
  header["config"] = config_to_json(ck.config);
  header["network"] = json::parse(network_to_json(ck.network));
  header["seed"] = ck.seed;
  header["step"] = ck.step;
  header["epoch"] = ck.epoch;
  header["best_val"] = ck.best_val;
  header["epochs_since_best"] = ck.epochs_since_best;
  header["train_config"] = ck.train_config_json;
  json tensors = json::array();
  auto describe = [&](const std::string& name, const Matrix& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  };
  for (std::size_t i = 0; i < ck.params.tensors.size(); ++i) {
    describe(ck.params.names[i], ck.params.tensors[i]);
  }
  header["has_optimizer"] = !ck.adam_m.tensors.empty();
  if (!ck.adam_m.tensors.empty() && (ck.current.tensors.size() != ck.params.tensors.size() ||
                                      ck.adam_v.tensors.size() != ck.params.tensors.size())) {
    throw DataError("checkpoint: optimiser state is incomplete");
  }
  header["tensors"] = tensors;
  header["encoding_m"] = ck.encoding.p_node.cols();
  header["num_nodes"] = ck.encoding.p_node.rows();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string text = header.dump();
  out << kCheckpointFormat << '\n';
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Matrix& m : ck.params.tensors) write_matrix(out, m);
  write_matrix(out, ck.encoding.p_node);
  write_matrix(out, ck.encoding.eigenvalues);
  write_matrix(out, ck.demand_max);
  if (!ck.adam_m.tensors.empty()) {
    for (const Matrix& m : ck.current.tensors) write_matrix(out, m);
    for (const Matrix& m : ck.adam_m.tensors) write_matrix(out, m);
    for (const Matrix& m : ck.adam_v.tensors) write_matrix(out, m);
  }
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointFormat) throw DataError("checkpoint: expected format \"" + std::string(kCheckpointFormat) + "\"");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (std::uint64_t{1} << 32)) throw DataError("checkpoint: bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint: header truncated");

  Checkpoint ck;
  try {
    const json header = json::parse(text);
    ck.config = config_from_json(header.at("config"));
    ck.network = network_from_json(header.at("network").dump());
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.step = header.at("step").get<long long>();
    ck.epoch = header.at("epoch").get<int>();
    ck.best_val = header.at("best_val").get<double>();
    ck.epochs_since_best = header.at("epochs_since_best").get<int>();
    ck.train_config_json = header.value("train_config", std::string{});
    const auto n = static_cast<int>(ck.network.num_nodes());
    ck.params = init_params(0, ck.config, n, static_cast<int>(ck.network.num_links()));
    const json& tensors = header.at("tensors");
    if (tensors.size() != ck.params.tensors.size()) throw DataError("checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const Matrix& t = ck.params.tensors[i];
      if (tensors[i].at("name").get<std::string>() != ck.params.names[i] ||
          tensors[i].at("rows").get<Index>() != t.rows() || tensors[i].at("cols").get<Index>() != t.cols()) {
        throw DataError("checkpoint: tensor " + ck.params.names[i] + " has an unexpected shape");
      }
    }
    for (Matrix& m : ck.params.tensors) read_matrix(in, m);
    const auto m = header.at("encoding_m").get<Index>();
    if (m != ck.config.m || header.at("num_nodes").get<int>() != n) throw DataError("checkpoint: encoding shape mismatch");
    ck.encoding.p_node.resize(n, m);
    read_matrix(in, ck.encoding.p_node);
    Matrix ev(m, 1);
    read_matrix(in, ev);
    ck.encoding.eigenvalues = ev.col(0);
    Matrix dmax(n, 1);
    read_matrix(in, dmax);
    ck.demand_max = dmax.col(0);
    if (header.at("has_optimizer").get<bool>()) {
      ck.current = ck.params.zeros_like();
      ck.adam_m = ck.params.zeros_like();
      ck.adam_v = ck.params.zeros_like();
      for (Matrix& t : ck.current.tensors) read_matrix(in, t);
      for (Matrix& t : ck.adam_m.tensors) read_matrix(in, t);
      for (Matrix& t : ck.adam_v.tensors) read_matrix(in, t);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  return ck;
}

}  // namespace gridflow::nn
