#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "ehdiscrim/grad_check.hpp"
#include "ehdiscrim/graph.hpp"
#include "ehdiscrim/rng.hpp"
#include "ehdiscrim/tensor.hpp"

using ehd::Graph;
using ehd::GradCheckReport;
using ehd::Parameter;
using ehd::Rng;
using ehd::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.data) v = lo + (hi - lo) * rng.uniform01();
  return t;
}

}  // namespace

TEST(Matmul, IdentityTimesIdentity) {
  Graph<double> g;
  Tensor<double> eye = Tensor<double>::zeros({2, 2});
  eye.at(0, 0) = eye.at(1, 1) = 1.0;
  auto id = g.matmul(g.input(eye), g.input(eye));
  EXPECT_EQ(g.val(id).data, eye.data);
}

TEST(Matmul, ZeroAnnihilates) {
  Rng rng(1);
  Graph<double> g;
  auto a = g.input(random_tensor({3, 4}, rng));
  auto z = g.input(Tensor<double>::zeros({4, 2}));
  for (double v : g.val(g.matmul(a, z)).data) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  Rng rng(2);
  Graph<double> g;
  auto a = g.input(random_tensor({3, 4}, rng));
  auto b = g.input(random_tensor({5, 2}, rng));
  EXPECT_THROW(g.matmul(a, b), std::invalid_argument);
}

// Independent triple-loop oracle for the forward product and both input
// gradients of loss = sum(W ⊙ (A·B)).
TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(3);
  Tensor<double> A = random_tensor({3, 4}, rng);
  Tensor<double> B = random_tensor({4, 2}, rng);
  Tensor<double> W = random_tensor({3, 2}, rng);

  Parameter<double> pa("a", A), pb("b", B);
  Graph<double> g;
  auto c = g.matmul(g.param(pa), g.param(pb));
  auto loss = g.sum(g.mul(c, g.input(W)));
  g.backward(loss);

  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 2; ++j) {
      double expect = 0.0;
      for (size_t k = 0; k < 4; ++k) expect += A.at(i, k) * B.at(k, j);
      EXPECT_NEAR(g.val(c).at(i, j), expect, 1e-12);
    }
  for (size_t i = 0; i < 3; ++i)
    for (size_t k = 0; k < 4; ++k) {
      double expect = 0.0;
      for (size_t j = 0; j < 2; ++j) expect += W.at(i, j) * B.at(k, j);
      EXPECT_NEAR(pa.grad.at(i, k), expect, 1e-12);
    }
  for (size_t k = 0; k < 4; ++k)
    for (size_t j = 0; j < 2; ++j) {
      double expect = 0.0;
      for (size_t i = 0; i < 3; ++i) expect += W.at(i, j) * A.at(i, k);
      EXPECT_NEAR(pb.grad.at(k, j), expect, 1e-12);
    }
}

TEST(SoftmaxRows, UniformOnEqualLogits) {
  Graph<double> g;
  auto s = g.softmax_rows(g.input(Tensor<double>::full({1, 4}, 3.7)));
  for (double v : g.val(s).data) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(SoftmaxRows, AnalyticallyForced) {
  Graph<double> g;
  auto s = g.softmax_rows(g.input(Tensor<double>({1, 2}, {0.0, std::log(2.0)})));
  EXPECT_NEAR(g.val(s).data[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(g.val(s).data[1], 2.0 / 3.0, 1e-15);
}

TEST(SoftmaxRows, ShiftInvariantAndNormalized) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    size_t n = 1 + rng.uniform_int(8);
    Tensor<double> x = random_tensor({2, n}, rng, -30.0, 30.0);
    Tensor<double> shifted = x;
    for (size_t c = 0; c < n; ++c) shifted.at(0, c) += 17.25;
    Graph<double> g;
    auto a = g.val(g.softmax_rows(g.input(x)));
    auto b = g.val(g.softmax_rows(g.input(shifted)));
    double sum = 0.0;
    for (size_t c = 0; c < n; ++c) {
      EXPECT_NEAR(a.at(0, c), b.at(0, c), 1e-12);
      sum += a.at(0, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ConstantInputGivesZeros) {
  Graph<double> g;
  auto y = g.layer_norm_rows(g.input(Tensor<double>::full({1, 5}, 2.5)),
                             g.input(Tensor<double>::full({5}, 1.0)),
                             g.input(Tensor<double>::zeros({5})), 1e-8);
  for (double v : g.val(y).data) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(LayerNorm, AlreadyNormalizedPassesThrough) {
  Graph<double> g;
  auto y = g.layer_norm_rows(g.input(Tensor<double>({1, 2}, {-1.0, 1.0})),
                             g.input(Tensor<double>::full({2}, 1.0)),
                             g.input(Tensor<double>::zeros({2})), 1e-14);
  EXPECT_NEAR(g.val(y).data[0], -1.0, 1e-6);
  EXPECT_NEAR(g.val(y).data[1], 1.0, 1e-6);
}

TEST(LayerNorm, LengthMismatchThrows) {
  Graph<double> g;
  EXPECT_THROW(g.layer_norm_rows(g.input(Tensor<double>::zeros({1, 5})),
                                 g.input(Tensor<double>::full({4}, 1.0)),
                                 g.input(Tensor<double>::zeros({5})), 1e-8),
               std::invalid_argument);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Parameter<double> x("x", random_tensor({3, 6}, rng));
  Parameter<double> gain("gain", random_tensor({6}, rng, 0.5, 1.5));
  Parameter<double> bias("bias", random_tensor({6}, rng));
  Rng probe_rng(6);
  Tensor<double> w = random_tensor({3, 6}, probe_rng);
  auto fn = [&]() {
    Graph<double> g;
    auto y = g.layer_norm_rows(g.param(x), g.param(gain), g.param(bias), 1e-6);
    auto loss = g.sum(g.mul(y, g.input(w)));
    g.backward(loss);
    return g.val(loss).data[0];
  };
  auto rep = ehd::grad_check<double>(fn, {&x, &gain, &bias}, 1e-6);
  EXPECT_LT(rep.max_rel_err, 1e-6);
}

TEST(Gelu, Symmetry) {
  EXPECT_EQ(ehd::gelu_scalar(0.0), 0.0);
}

TEST(Gelu, Asymptote) {
  EXPECT_NEAR(ehd::gelu_scalar(10.0), 10.0, 1e-9);
}

// Independent oracle: Phi(1) by Simpson quadrature of the normal pdf,
// nowhere touching erf.
TEST(Gelu, MatchesQuadratureOracle) {
  const double lo = -10.0, hi = 1.0;
  const int steps = 200000;  // even
  const double h = (hi - lo) / steps;
  auto pdf = [](double t) {
    return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
  };
  double acc = pdf(lo) + pdf(hi);
  for (int i = 1; i < steps; ++i) acc += pdf(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  const double phi1 = acc * h / 3.0;
  EXPECT_NEAR(ehd::gelu_scalar(1.0), 1.0 * phi1, 1e-10);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(7);
  Parameter<double> p("p", random_tensor({2, 3}, rng));
  Graph<double> g;
  auto loss = g.sum(g.param(p));
  g.backward(loss);
  for (double v : p.grad.data) EXPECT_EQ(v, 1.0);
}

TEST(Backward, DetachedParameterGetsExactZero) {
  Rng rng(8);
  Parameter<double> p("p", random_tensor({2, 2}, rng));
  Parameter<double> q("q", random_tensor({2, 2}, rng));
  Graph<double> g;
  g.param(p);  // in the graph but not on the loss path
  auto loss = g.sum(g.param(q));
  g.backward(loss);
  for (double v : p.grad.data) EXPECT_EQ(v, 0.0);
}

TEST(Backward, FrozenLeafReceivesNothing) {
  Rng rng(9);
  Parameter<double> frozen("frozen", random_tensor({3, 3}, rng));
  frozen.trainable = false;
  Graph<double> g;
  auto loss = g.sum(g.matmul(g.param(frozen), g.param(frozen)));
  g.backward(loss);
  for (double v : frozen.grad.data) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonScalarLossThrows) {
  Rng rng(10);
  Graph<double> g;
  auto a = g.input(random_tensor({2, 2}, rng));
  EXPECT_THROW(g.backward(a), std::invalid_argument);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  Rng rng(11);
  Parameter<double> a("a", random_tensor({3, 4}, rng));
  Parameter<double> b("b", random_tensor({4, 5}, rng));
  std::vector<int> targets = {1, 4, 0};
  auto fn = [&]() {
    Graph<double> g;
    auto logits = g.gelu(g.matmul(g.param(a), g.param(b)));
    auto loss = g.cross_entropy_rows(logits, targets);
    g.backward(loss);
    return g.val(loss).data[0];
  };
  auto rep = ehd::grad_check<double>(fn, {&a, &b}, 1e-6);
  EXPECT_LT(rep.max_rel_err, 1e-4);
}

TEST(GradCheck, QuadraticIsExactToTolerance) {
  Parameter<double> theta("theta", Tensor<double>::scalar(3.0));
  auto fn = [&]() {
    Graph<double> g;
    auto t = g.param(theta);
    auto loss = g.sum(g.mul(t, t));
    g.backward(loss);
    return g.val(loss).data[0];
  };
  auto rep = ehd::grad_check<double>(fn, {&theta}, 1e-5);
  EXPECT_LT(rep.max_rel_err, 1e-8);
  EXPECT_EQ(rep.checked, 1u);
}

TEST(GradCheck, FrozenParameterReportedSkipped) {
  Parameter<double> theta("theta", Tensor<double>::scalar(2.0));
  Parameter<double> ice("ice", Tensor<double>::scalar(5.0));
  ice.trainable = false;
  auto fn = [&]() {
    Graph<double> g;
    auto loss = g.sum(g.mul(g.param(theta), g.param(ice)));
    g.backward(loss);
    return g.val(loss).data[0];
  };
  auto rep = ehd::grad_check<double>(fn, {&theta, &ice}, 1e-5);
  EXPECT_EQ(rep.skipped_frozen, 1u);
  EXPECT_LT(rep.max_rel_err, 1e-8);
}

// Property: random compositions of the remaining ops match finite
// differences (shapes <= 8 per extent).
TEST(GradCheck, RandomOpCompositions) {
  for (uint64_t seed = 100; seed < 112; ++seed) {
    Rng rng(seed);
    size_t m = 2 + rng.uniform_int(6), k = 2 + rng.uniform_int(6),
           n = 2 + rng.uniform_int(6);
    Parameter<double> a("a", random_tensor({m, k}, rng));
    Parameter<double> b("b", random_tensor({k, n}, rng));
    Parameter<double> row("row", random_tensor({n}, rng));
    Parameter<double> table("table", random_tensor({6, k}, rng));
    std::vector<int> ids = {int(rng.uniform_int(6)), int(rng.uniform_int(6)),
                            int(rng.uniform_int(6))};
    Rng probe_rng(seed * 7 + 1);
    Tensor<double> w1 = random_tensor({m, n}, probe_rng);
    Tensor<double> w2 = random_tensor({3 + m, n}, probe_rng);
    Tensor<double> w3 = random_tensor({n, 3 + m}, probe_rng);
    auto fn = [&]() {
      Graph<double> g;
      auto prod = g.add_row(g.matmul(g.param(a), g.param(b)), g.param(row));
      auto soft = g.softmax_rows(g.scale(prod, 1.7));
      auto emb = g.matmul(g.embed(g.param(table), ids), g.param(b));
      auto both = g.concat_rows({g.mul(soft, g.input(w1)), emb});
      auto sliced = g.concat_cols(
          {g.slice_cols(both, 0, n / 2), g.slice_cols(both, n / 2, n - n / 2)});
      auto unit = g.l2_normalize_rows(g.add(sliced, g.input(w2)));
      auto loss1 = g.sum(g.mul(g.transpose(unit), g.input(w3)));
      auto loss2 = g.bce_logits(g.gather_rows(prod, {0}),
                                std::vector<int>(n, 1));
      auto loss = g.weighted_sum({{0.7, loss1}, {1.3, loss2}});
      g.backward(loss);
      return g.val(loss).data[0];
    };
    auto rep = ehd::grad_check<double>(fn, {&a, &b, &row, &table}, 1e-6);
    EXPECT_LT(rep.max_rel_err, 1e-4) << "seed " << seed;
  }
}

TEST(Graph, OpsArePure) {
  Rng rng(12);
  Tensor<double> x = random_tensor({4, 4}, rng, -5.0, 5.0);
  Graph<double> g1, g2;
  auto r1 = g1.val(g1.softmax_rows(g1.gelu(g1.matmul(g1.input(x), g1.input(x)))));
  auto r2 = g2.val(g2.softmax_rows(g2.gelu(g2.matmul(g2.input(x), g2.input(x)))));
  ASSERT_EQ(r1.data.size(), r2.data.size());
  EXPECT_EQ(0, std::memcmp(r1.data.data(), r2.data.data(),
                           r1.data.size() * sizeof(double)));
}

TEST(Graph, NonFiniteAbortsNamingOp) {
  Graph<double> g;
  auto big = g.input(Tensor<double>::full({1, 2}, 1e308));
  try {
    g.add(big, big);
    FAIL() << "expected abort";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
  }
}

TEST(Graph, DropoutScalesAndMasks) {
  Rng rng(13);
  Parameter<double> x("x", Tensor<double>::full({20, 20}, 1.0));
  Graph<double> g;
  auto y = g.dropout(g.param(x), 0.25, rng);
  size_t zeros = 0;
  for (double v : g.val(y).data) {
    if (v == 0.0)
      ++zeros;
    else
      EXPECT_NEAR(v, 1.0 / 0.75, 1e-12);
  }
  EXPECT_GT(zeros, 40u);
  EXPECT_LT(zeros, 160u);
  g.backward(g.sum(y));
  for (size_t i = 0; i < x.grad.numel(); ++i) {
    if (g.val(y).data[i] == 0.0)
      EXPECT_EQ(x.grad.data[i], 0.0);
    else
      EXPECT_NEAR(x.grad.data[i], 1.0 / 0.75, 1e-12);
  }
}
