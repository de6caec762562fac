// Reverse-mode autodiff: finite-difference verification of every op at both
// precisions, adjoint accumulation through shared nodes, and keyed dropout.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ltsft/graph.hpp"

using namespace ltsft;

namespace {

template <typename Real>
TensorT<Real> random_tensor(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
  TensorT<Real> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.v) v = static_cast<Real>(rng.next_normal() * scale);
  return t;
}

// Deterministic fixed-weight reduction of a [m,n] node to a scalar so any op
// output can feed backward(); the reduction weights are graph leaves whose
// gradients are simply ignored.
template <typename Real>
typename Graph<Real>::Id reduce(Graph<Real>& g, typename Graph<Real>::Id x, uint64_t seed) {
  const std::vector<int64_t> shape = g.val(x).shape;  // copy: leaf() may reallocate nodes
  REQUIRE(shape.size() == 2);
  auto w1 = g.leaf(random_tensor<Real>({shape[1], 1}, derive_key(seed, "w1")));
  auto w2 = g.leaf(random_tensor<Real>({1, shape[0]}, derive_key(seed, "w2")));
  return g.matmul(w2, g.matmul(x, w1));
}

// Central finite differences on `leaf_idx`-th input of `f` against the
// reverse-mode gradient. f builds a fresh graph from the inputs and returns
// the scalar node plus the leaf ids (pure function of its inputs).
template <typename Real>
struct Built {
  Graph<Real> g;
  typename Graph<Real>::Id loss;
  std::vector<typename Graph<Real>::Id> leaves;
};

template <typename Real>
void check_gradients(const std::vector<TensorT<Real>>& inputs,
                     const std::function<void(Graph<Real>&, const std::vector<typename Graph<Real>::Id>&,
                                              typename Graph<Real>::Id*)>& build,
                     uint64_t sample_seed) {
  const double h = std::is_same_v<Real, float> ? 5e-3 : 1e-6;
  const double tol = std::is_same_v<Real, float> ? 1e-3 : 1e-6;

  auto eval = [&](const std::vector<TensorT<Real>>& xs, std::vector<TensorT<Real>>* grads) {
    Graph<Real> g;
    std::vector<typename Graph<Real>::Id> ids;
    for (const auto& x : xs) ids.push_back(g.leaf(x));
    typename Graph<Real>::Id loss{};
    build(g, ids, &loss);
    REQUIRE(g.val(loss).size() == 1);
    const double value = static_cast<double>(g.val(loss).v[0]);
    if (grads != nullptr) {
      g.backward(loss);
      grads->clear();
      for (auto id : ids) grads->push_back(g.grad(id));
    }
    return value;
  };

  std::vector<TensorT<Real>> grads;
  eval(inputs, &grads);

  Rng rng(sample_seed);
  for (size_t leaf = 0; leaf < inputs.size(); ++leaf) {
    const int64_t n = inputs[leaf].size();
    const int samples = static_cast<int>(std::min<int64_t>(n, 8));
    for (int s = 0; s < samples; ++s) {
      const int64_t i = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n)));
      std::vector<TensorT<Real>> xs = inputs;
      const Real keep = xs[leaf].v[static_cast<size_t>(i)];
      xs[leaf].v[static_cast<size_t>(i)] = static_cast<Real>(static_cast<double>(keep) + h);
      const double up = eval(xs, nullptr);
      xs[leaf].v[static_cast<size_t>(i)] = static_cast<Real>(static_cast<double>(keep) - h);
      const double down = eval(xs, nullptr);
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = static_cast<double>(grads[leaf].v[static_cast<size_t>(i)]);
      const double bound = tol * std::max({1.0, std::abs(numeric), std::abs(analytic)});
      INFO("leaf ", leaf, " coord ", i, " analytic ", analytic, " numeric ", numeric);
      CHECK(std::abs(analytic - numeric) <= bound);
    }
  }
}

}  // namespace

TEST_CASE_TEMPLATE("fd: add and add_rowvec", Real, float, double) {
  check_gradients<Real>(
      {random_tensor<Real>({3, 4}, 1), random_tensor<Real>({3, 4}, 2)},
      [](Graph<Real>& g, const auto& in, auto* loss) { *loss = reduce(g, g.add(in[0], in[1]), 100); }, 10);
  check_gradients<Real>(
      {random_tensor<Real>({3, 4}, 3), random_tensor<Real>({4}, 4)},
      [](Graph<Real>& g, const auto& in, auto* loss) { *loss = reduce(g, g.add_rowvec(in[0], in[1]), 101); }, 11);
}

TEST_CASE_TEMPLATE("fd: matmul both orientations", Real, float, double) {
  check_gradients<Real>(
      {random_tensor<Real>({3, 5}, 5), random_tensor<Real>({5, 2}, 6)},
      [](Graph<Real>& g, const auto& in, auto* loss) { *loss = reduce(g, g.matmul(in[0], in[1]), 102); }, 12);
  check_gradients<Real>(
      {random_tensor<Real>({3, 5}, 7), random_tensor<Real>({4, 5}, 8)},
      [](Graph<Real>& g, const auto& in, auto* loss) { *loss = reduce(g, g.matmul_nt(in[0], in[1]), 103); }, 13);
}

TEST_CASE_TEMPLATE("fd: gelu", Real, float, double) {
  check_gradients<Real>(
      {random_tensor<Real>({4, 3}, 9)},
      [](Graph<Real>& g, const auto& in, auto* loss) { *loss = reduce(g, g.gelu(in[0]), 104); }, 14);
}

TEST_CASE_TEMPLATE("fd: layer_norm", Real, float, double) {
  check_gradients<Real>(
      {random_tensor<Real>({3, 6}, 15), random_tensor<Real>({6}, 16), random_tensor<Real>({6}, 17)},
      [](Graph<Real>& g, const auto& in, auto* loss) {
        *loss = reduce(g, g.layer_norm(in[0], in[1], in[2]), 105);
      },
      18);
}

TEST_CASE_TEMPLATE("fd: embedding with a repeated id", Real, float, double) {
  check_gradients<Real>(
      {random_tensor<Real>({5, 3}, 19)},
      [](Graph<Real>& g, const auto& in, auto* loss) {
        *loss = reduce(g, g.embedding(in[0], {0, 3, 3, 1}), 106);
      },
      20);
}

TEST_CASE_TEMPLATE("fd: gather_rows", Real, float, double) {
  check_gradients<Real>(
      {random_tensor<Real>({6, 3}, 21)},
      [](Graph<Real>& g, const auto& in, auto* loss) {
        *loss = reduce(g, g.gather_rows(in[0], {5, 0, 0, 2}), 107);
      },
      22);
}

TEST_CASE_TEMPLATE("fd: dropout at a fixed key", Real, float, double) {
  check_gradients<Real>(
      {random_tensor<Real>({4, 4}, 23)},
      [](Graph<Real>& g, const auto& in, auto* loss) {
        *loss = reduce(g, g.dropout(in[0], 0.4, 777), 108);
      },
      24);
}

TEST_CASE_TEMPLATE("fd: self_attention with padding", Real, float, double) {
  // 1 batch of seq 4 with the last position padded, 2 heads over hidden 6.
  const std::vector<uint8_t> attn{1, 1, 1, 0};
  check_gradients<Real>(
      {random_tensor<Real>({4, 6}, 25, 0.5), random_tensor<Real>({4, 6}, 26, 0.5),
       random_tensor<Real>({4, 6}, 27, 0.5)},
      [&attn](Graph<Real>& g, const auto& in, auto* loss) {
        *loss = reduce(g, g.self_attention(in[0], in[1], in[2], 1, 4, 2, attn), 109);
      },
      28);
}

TEST_CASE_TEMPLATE("fd: masked_mean", Real, float, double) {
  const std::vector<uint8_t> attn{1, 0, 1, 1, 1, 0};
  check_gradients<Real>(
      {random_tensor<Real>({6, 3}, 29)},
      [&attn](Graph<Real>& g, const auto& in, auto* loss) {
        *loss = reduce(g, g.masked_mean(in[0], attn, 2, 3), 110);
      },
      30);
}

TEST_CASE_TEMPLATE("fd: softmax cross-entropy with ignored rows", Real, float, double) {
  check_gradients<Real>(
      {random_tensor<Real>({5, 4}, 31)},
      [](Graph<Real>& g, const auto& in, auto* loss) {
        *loss = g.softmax_ce_mean(in[0], {2, -1, 0, 3, -1});
      },
      32);
}

TEST_CASE_TEMPLATE("fd: composite network end to end", Real, float, double) {
  // embedding -> layer_norm -> attention -> gelu(ffn) -> ce, the same op mix
  // the real model uses, differentiated through every layer at once.
  const std::vector<uint8_t> attn{1, 1, 1, 1};
  check_gradients<Real>(
      {random_tensor<Real>({6, 4}, 33, 0.7), random_tensor<Real>({4}, 34), random_tensor<Real>({4}, 35),
       random_tensor<Real>({4, 4}, 36, 0.5), random_tensor<Real>({3, 4}, 37, 0.5)},
      [&attn](Graph<Real>& g, const auto& in, auto* loss) {
        auto h = g.embedding(in[0], {1, 4, 2, 0});
        h = g.layer_norm(h, in[1], in[2]);
        h = g.self_attention(h, h, h, 1, 4, 2, attn);
        h = g.gelu(g.matmul(h, in[3]));
        auto logits = g.matmul_nt(h, in[4]);
        *loss = g.softmax_ce_mean(logits, {0, 2, -1, 1});
      },
      38);
}

TEST_CASE("diamond graph accumulates adjoints once per path") {
  // L = sum(add(x, x) * w): dL/dx must be exactly 2w.
  Graph<double> g;
  auto x = g.leaf(random_tensor<double>({2, 3}, 40));
  auto w = random_tensor<double>({3, 1}, 41);
  auto ones = TensorT<double>({1, 2}, {1.0, 1.0});
  auto y = g.add(x, x);
  auto loss = g.matmul(g.leaf(ones), g.matmul(y, g.leaf(w)));
  g.backward(loss);
  const auto gx = g.grad(x);
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t c = 0; c < 3; ++c) CHECK(gx.at(r, c) == doctest::Approx(2.0 * w.v[static_cast<size_t>(c)]));
}

TEST_CASE("grad of an unused leaf is zero and backward needs a scalar") {
  Graph<float> g;
  auto x = g.leaf(random_tensor<float>({2, 2}, 50));
  auto unused = g.leaf(random_tensor<float>({3, 3}, 51));
  auto loss = g.softmax_ce_mean(x, {0, 1});
  g.backward(loss);
  for (float v : g.grad(unused).v) CHECK(v == 0.0f);
  CHECK_THROWS_AS(g.backward(x), Error);
}

TEST_CASE("non-finite results surface as numeric errors") {
  Graph<float> g;
  TensorT<float> huge({2, 2}, {3e38f, 3e38f, 3e38f, 3e38f});
  auto a = g.leaf(huge);
  CHECK_THROWS_AS(g.add(a, a), Error);
  try {
    g.matmul(a, a);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::numeric);
  }
}

TEST_CASE("dropout: keyed determinism and inverted scaling") {
  const auto x = random_tensor<float>({8, 8}, 60);
  auto run = [&](uint64_t key) {
    Graph<float> g;
    auto id = g.dropout(g.leaf(x), 0.25, key);
    return g.val(id).v;
  };
  CHECK(run(5) == run(5));      // same key, same pattern
  CHECK(run(5) != run(6));      // different key, different pattern
  const auto out = run(5);
  int kept = 0;
  for (size_t i = 0; i < out.size(); ++i) {
    if (out[i] == 0.0f) continue;
    ++kept;
    CHECK(out[i] == doctest::Approx(x.v[i] / 0.75f));
  }
  CHECK(kept > 32);  // rate 0.25 keeps about three quarters
  CHECK(kept < 64);

  // rate 0 is the identity (no node recorded)
  Graph<float> g;
  auto leaf = g.leaf(x);
  CHECK(g.dropout(leaf, 0.0, 1) == leaf);
  CHECK_THROWS_AS(g.dropout(leaf, 1.0, 1), Error);
}

TEST_CASE("softmax cross-entropy hand oracle") {
  // Two rows, second ignored: loss = -log softmax(row0)[1].
  Graph<double> g;
  TensorT<double> logits({2, 3}, {1.0, 2.0, 0.5, 9.0, 9.0, 9.0});
  auto l = g.leaf(logits);
  auto loss = g.softmax_ce_mean(l, {1, -1});
  const double z = std::exp(1.0 - 2.0) + 1.0 + std::exp(0.5 - 2.0);
  CHECK(g.val(loss).v[0] == doctest::Approx(std::log(z)).epsilon(1e-12));

  // All rows ignored: zero loss, zero gradient.
  Graph<double> g2;
  auto l2 = g2.leaf(logits);
  auto loss2 = g2.softmax_ce_mean(l2, {-1, -1});
  CHECK(g2.val(loss2).v[0] == 0.0);
  g2.backward(loss2);
  for (double v : g2.grad(l2).v) CHECK(v == 0.0);
}

TEST_CASE("masked_mean hand oracle and empty-row error") {
  Graph<double> g;
  TensorT<double> x({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
  const std::vector<uint8_t> attn{1, 1, 0, 1};
  auto id = g.masked_mean(g.leaf(x), attn, 2, 2);
  CHECK(g.val(id).at(0, 0) == doctest::Approx(1.5));
  CHECK(g.val(id).at(0, 1) == doctest::Approx(15.0));
  CHECK(g.val(id).at(1, 0) == doctest::Approx(4.0));
  CHECK(g.val(id).at(1, 1) == doctest::Approx(40.0));
  const std::vector<uint8_t> empty_row{0, 0, 1, 1};
  CHECK_THROWS_AS(g.masked_mean(g.leaf(x), empty_row, 2, 2), Error);
}

TEST_CASE("self_attention ignores padded keys") {
  // With position 2 padded, changing its key/value must not change outputs
  // at real positions.
  auto q = random_tensor<double>({3, 4}, 70);
  auto k = random_tensor<double>({3, 4}, 71);
  auto v = random_tensor<double>({3, 4}, 72);
  const std::vector<uint8_t> attn{1, 1, 0};
  auto run = [&](const TensorT<double>& kk, const TensorT<double>& vv) {
    Graph<double> g;
    auto id = g.self_attention(g.leaf(q), g.leaf(kk), g.leaf(vv), 1, 3, 2, attn);
    return g.val(id).v;
  };
  auto k2 = k;
  auto v2 = v;
  for (int64_t j = 0; j < 4; ++j) {
    k2.at(2, j) = 123.0 + static_cast<double>(j);
    v2.at(2, j) = -55.0 * static_cast<double>(j + 1);
  }
  const auto base = run(k, v);
  const auto poked = run(k2, v2);
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t j = 0; j < 4; ++j)
      CHECK(base[static_cast<size_t>(t * 4 + j)] == doctest::Approx(poked[static_cast<size_t>(t * 4 + j)]));
}
