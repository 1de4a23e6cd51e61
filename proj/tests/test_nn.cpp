#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "gridflow/error.hpp"
#include "gridflow/model.hpp"
#include "nn_reference.hpp"

using namespace gridflow;
using namespace gridflow::nn;
using namespace gridflow::testing;

namespace {

ModelConfig small_config(int m) {
  ModelConfig c;
  c.m = m;
  c.latent = 6;
  c.hops = {0, 1, 2};
  c.qk_dim = 5;
  c.link_dim = 7;
  c.hidden = {4, 3};
  return c;
}

Matrix random_features(Rng& rng, const ModelConfig& c, const Structure& s) {
  Matrix h(c.features(), s.num_nodes);
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    for (Eigen::Index i = 0; i < kNodeFeatures; ++i) h(i, j) = rng.uniform();
    h.col(j).tail(c.m) = s.encoding.p_node.row(j).transpose();
  }
  return h;
}

double loss_of(const ModelConfig& c, const Structure& s, const Params& p, const Matrix& h, const Matrix& target) {
  Tape t;
  const ForwardVars fv = forward(t, c, s, p, h);
  return t.value(logcosh_mean(t, fv.f_hat, target))(0, 0);
}

}  // namespace

TEST_CASE("elementary op gradients") {
  Tape t;
  const Var x = t.input(Matrix::Zero(1, 1));
  const Var y = nn::tanh(t, x);
  t.backward(y);
  CHECK(t.grad(x)(0, 0) == 1.0);

  // Masked softmax: gradient of sum_ij w_ij s_ij against finite differences.
  const Matrix e = Matrix::Random(3, 4);
  const Matrix w = Matrix::Random(3, 4);
  Mask mask = Mask::Constant(3, 4, true);
  mask(0, 1) = false;
  mask(2, 3) = false;
  auto build = [&](Tape& tp, const Matrix& em, Var& ev) {
    ev = tp.input(em);
    const Var sm = masked_softmax_rows(tp, ev, mask);
    Var total = tp.input(Matrix::Zero(1, 1));
    for (int i = 0; i < 3; ++i) {
      // Row i of s dotted with row i of w.
      const Var picked = affine_of_row(tp, slice_rows(tp, sm, i, 1), w.row(i), Eigen::VectorXd::Zero(1));
      total = add(tp, total, picked);
    }
    return std::pair{sm, total};
  };
  Tape tp;
  Var ev;
  const auto [sm, total] = build(tp, e, ev);
  CHECK(tp.value(sm)(0, 1) == 0.0);
  CHECK(tp.value(sm)(2, 3) == 0.0);
  tp.backward(total);
  const Matrix g = tp.grad(ev);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      Matrix ep = e, em = e;
      ep(i, j) += 1e-5;
      em(i, j) -= 1e-5;
      Tape a, b;
      Var unused;
      const double fd = (a.value(build(a, ep, unused).second)(0, 0) - b.value(build(b, em, unused).second)(0, 0)) / 2e-5;
      CHECK(g(i, j) == doctest::Approx(fd).epsilon(1e-6));
      if (!mask(i, j)) CHECK(g(i, j) == 0.0);
    }
  }
}

TEST_CASE("non-finite values are reported with the op name") {
  Tape t;
  const Var x = t.input(Matrix::Constant(1, 1, 1e308));
  CHECK_THROWS_WITH_AS(scale(t, x, 10.0), doctest::Contains("scale"), NumericError);
}

TEST_CASE("forward equals the straight-line recomputation") {
  Rng rng(5);
  for (const Network& net : {chain(3), chain(2), from_edges(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}})}) {
    const int n = static_cast<int>(net.num_nodes());
    const ModelConfig c = small_config(std::min(2, n - 1));
    const Structure s = make_structure(net, c);
    for (int trial = 0; trial < 5; ++trial) {
      Params p = init_params(100 + static_cast<std::uint64_t>(trial), c, n, static_cast<int>(net.num_links()));
      for (Matrix& t : p.tensors) t += 0.1 * Matrix::Random(t.rows(), t.cols());  // nonzero biases
      const Matrix h = random_features(rng, c, s);
      const Prediction pred = predict(c, s, p, h);
      const ReferenceOutput ref = reference_forward(c, s, p, h);
      for (int l = 0; l < s.num_links; ++l) CHECK(std::abs(pred.f_hat(l) - ref.f_hat[static_cast<std::size_t>(l)]) <= 1e-12);
      for (int k = 0; k < c.windows(); ++k) {
        CHECK((pred.attention.node_att[static_cast<std::size_t>(k)] - ref.node_att[static_cast<std::size_t>(k)]).lpNorm<Eigen::Infinity>() <= 1e-12);
      }
      CHECK((pred.attention.link_att - ref.link_att).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
  }
}

TEST_CASE("single node with a zero-hop window attends to itself") {
  ModelConfig c = small_config(0);
  c.hops = {0};
  Structure s;
  s.num_nodes = 1;
  s.num_links = 2;  // two links whose encodings are empty
  s.encoding.p_node = Matrix::Zero(1, 0);
  s.p_link = Matrix::Zero(0, 2);
  s.masks = {Mask::Constant(1, 1, true)};
  Params p = init_params(3, c, 1, 2);
  Matrix h(3, 1);
  h << 0.3, 0.5, 0.7;
  Tape t;
  const ForwardVars fv = forward(t, c, s, p, h);
  CHECK(t.value(fv.node_att[0])(0, 0) == 1.0);
  CHECK(t.value(fv.link_att)(0, 0) == 1.0);
  CHECK(t.value(fv.link_att)(1, 0) == 1.0);
  // h'' = W_1^T h_1 exactly.
  const Matrix expect = p.tensors[0].transpose() * h;
  const Prediction pred = predict(c, s, p, h);
  const ReferenceOutput ref = reference_forward(c, s, p, h);
  CHECK(pred.f_hat(0) == doctest::Approx(ref.f_hat[0]).epsilon(1e-14));
  CHECK(expect.rows() == c.latent);
}

TEST_CASE("symmetric inputs give uniform attention on a complete graph") {
  const Network net = from_edges(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
  ModelConfig c = small_config(0);
  c.hops = {1};
  const Structure s = make_structure(net, c);
  Params p = init_params(9, c, 4, 6);
  // Same W for every node.
  for (int j = 1; j < 4; ++j) p.tensors[0].middleCols(j * c.latent, c.latent) = p.tensors[0].leftCols(c.latent);
  Matrix h = Matrix::Constant(3, 4, 0.4);
  const Prediction pred = predict(c, s, p, h);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(pred.attention.node_att[0](i, j) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("zero MLP gives zero output and outputs stay inside (-1, 1)") {
  const Network net = chain(3);
  const ModelConfig c = small_config(2);
  const Structure s = make_structure(net, c);
  Params p = init_params(1, c, 3, 2);
  Rng rng(2);
  const Matrix h = random_features(rng, c, s);
  Params zero = p;
  for (std::size_t i = 0; i < zero.tensors.size(); ++i) {
    if (zero.groups[i] == Group::mlp_W || zero.groups[i] == Group::mlp_b) zero.tensors[i].setZero();
  }
  CHECK(predict(c, s, zero, h).f_hat.isZero(0.0));

  for (int trial = 0; trial < 200; ++trial) {
    Params big = init_params(static_cast<std::uint64_t>(trial), c, 3, 2);
    for (Matrix& t : big.tensors) t *= 10.0;
    const Eigen::VectorXd f = predict(c, s, big, random_features(rng, c, s)).f_hat;
    CHECK((f.array().abs() < 1.0).all());
  }
}

TEST_CASE("forward is deterministic and equivariant to link relabelling") {
  const Network net = from_edges(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  const ModelConfig c = small_config(2);
  const Structure s = make_structure(net, c);
  const Params p = init_params(4, c, 4, 4);
  Rng rng(4);
  const Matrix h = random_features(rng, c, s);
  const Prediction a = predict(c, s, p, h);
  const Prediction b = predict(c, s, p, h);
  CHECK(a.f_hat == b.f_hat);

  // Reverse the link list and the per-link query blocks with it.
  Network rev = net;
  std::reverse(rev.links.begin(), rev.links.end());
  const Structure sr = make_structure(rev, c);
  Params pr = p;
  const std::size_t q = 2 * static_cast<std::size_t>(c.windows());
  for (int l = 0; l < 4; ++l) {
    pr.tensors[q].middleCols(l * c.qk_dim, c.qk_dim) = p.tensors[q].middleCols((3 - l) * c.qk_dim, c.qk_dim);
  }
  const Prediction r = predict(c, sr, pr, h);
  for (int l = 0; l < 4; ++l) CHECK(r.f_hat(l) == doctest::Approx(a.f_hat(3 - l)).epsilon(1e-13));
}

TEST_CASE("attention rows sum to one and respect masks") {
  Rng rng(8);
  const Network net = random_connected(rng, 6, 2);
  const ModelConfig c = small_config(3);
  const Structure s = make_structure(net, c);
  for (int trial = 0; trial < 300; ++trial) {
    const Params p = init_params(static_cast<std::uint64_t>(trial), c, 6, static_cast<int>(net.num_links()));
    const Prediction pred = predict(c, s, p, random_features(rng, c, s));
    for (int k = 0; k < c.windows(); ++k) {
      const Matrix& a = pred.attention.node_att[static_cast<std::size_t>(k)];
      CHECK(((a.rowwise().sum().array() - 1.0).abs() <= 1e-8).all());
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
          if (!s.masks[static_cast<std::size_t>(k)](i, j)) CHECK(a(i, j) == 0.0);
          CHECK(a(i, j) >= 0.0);
        }
    }
    CHECK(((pred.attention.link_att.rowwise().sum().array() - 1.0).abs() <= 1e-8).all());
  }
}

TEST_CASE("gradients match central finite differences in every parameter group") {
  const Network net = chain(3);
  ModelConfig c;  // full-size layers on the 3-node fixture
  c.m = 2;
  c.hops = {1, 2, 3};
  const Structure s = make_structure(net, c);
  Params p = init_params(12, c, 3, 2);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    if (p.groups[i] == Group::mlp_b) p.tensors[i].setConstant(0.05);
  }
  Rng rng(12);
  const Matrix h = random_features(rng, c, s);
  Matrix target(1, 2);
  target << 0.6, -0.4;

  Tape t;
  const ForwardVars fv = forward(t, c, s, p, h);
  t.backward(logcosh_mean(t, fv.f_hat, target));

  for (std::size_t ti = 0; ti < p.tensors.size(); ++ti) {
    const Matrix grad = t.grad(fv.params[ti]);
    const int coords = 20;
    for (int k = 0; k < coords; ++k) {
      const auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.tensors[ti].rows())));
      const auto col = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.tensors[ti].cols())));
      Params plus = p, minus = p;
      plus.tensors[ti](r, col) += 1e-3;
      minus.tensors[ti](r, col) -= 1e-3;
      const double fd = (loss_of(c, s, plus, h, target) - loss_of(c, s, minus, h, target)) / 2e-3;
      const double g = grad(r, col);
      const double rel = std::abs(g - fd) / std::max(std::abs(g) + std::abs(fd), 1e-8);
      INFO(p.names[ti], " (", r, ",", col, ") grad ", g, " fd ", fd);
      CHECK(rel <= 1e-4);
    }
  }
}

TEST_CASE("initialisation") {
  const ModelConfig c = small_config(2);
  const Params a = init_params(7, c, 5, 4);
  CHECK(a == init_params(7, c, 5, 4));
  CHECK_FALSE(a == init_params(8, c, 5, 4));
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    CHECK(a.tensors[i].cwiseAbs().maxCoeff() <= std::sqrt(6.0));
    if (a.groups[i] == Group::mlp_b) CHECK(a.tensors[i].isZero(0.0));
  }
  // Large layer: the sample mean stays within 3 sigma of zero.
  ModelConfig big;
  big.m = 8;
  const Params p = init_params(1, big, 40, 60);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    if (p.groups[i] == Group::mlp_b) continue;
    sum += p.tensors[i].sum();
    sq += p.tensors[i].squaredNorm();
    n += static_cast<std::size_t>(p.tensors[i].size());
  }
  CHECK(n >= 1000000);
  const double mean = sum / static_cast<double>(n);
  const double sigma = std::sqrt(sq / static_cast<double>(n));
  CHECK(std::abs(mean) <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("checkpoint round trip") {
  Network net = chain(3);
  add_generator(net, 0, Carrier::wind, 10.0);
  const ModelConfig c = small_config(2);
  Checkpoint ck;
  ck.config = c;
  ck.network = net;
  ck.params = init_params(5, c, 3, 2);
  ck.encoding = node_lpe(net, 2);
  ck.demand_max = Eigen::VectorXd::Constant(3, 7.5);
  ck.seed = 42;
  ck.current = init_params(6, c, 3, 2);
  ck.adam_m = ck.params;
  ck.adam_v = ck.params.zeros_like();
  ck.step = 17;
  ck.epoch = 3;
  ck.best_val = 0.125;
  ck.train_config_json = "{\"epochs\":5}";
  const auto path = std::filesystem::temp_directory_path() / "gridflow_test_ckpt.bin";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.params == ck.params);
  CHECK(back.current == ck.current);
  CHECK(back.adam_m == ck.adam_m);
  CHECK(back.adam_v == ck.adam_v);
  CHECK(back.network == ck.network);
  CHECK(back.encoding.p_node == ck.encoding.p_node);
  CHECK(back.demand_max == ck.demand_max);
  CHECK(back.step == 17);
  CHECK(back.seed == 42);
  CHECK(back.train_config_json == ck.train_config_json);
  CHECK(back.config.hops == c.hops);
  std::filesystem::remove(path);
}
