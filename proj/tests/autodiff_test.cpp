#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fcgan/graph.hpp"
#include "fcgan/optim.hpp"
#include "fcgan/rng.hpp"
#include "fcgan/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace fcgan;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = fdtest::away_from_kink(rng.uniform01());
  return t;
}

}  // namespace

TEST(Tensor, ShapeChecks) {
  Tensor m = Tensor::matrix(2, 3, 1.0);
  EXPECT_EQ(m.size(), 6u);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_THROW(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
  EXPECT_THROW(Tensor({std::size_t{1}, 1, 1}), DimensionError);
}

TEST(Affine, HandArithmetic) {
  Graph g;
  NodeId x = g.constant(Tensor({1, 2}, {1.0, 2.0}));
  NodeId w = g.constant(Tensor({2, 1}, {1.0, 1.0}));
  NodeId b = g.constant(Tensor({std::size_t{1}}, {3.0}));
  NodeId y = g.affine(x, w, b);
  EXPECT_DOUBLE_EQ(g.value(y)[0], 6.0);
}

TEST(Affine, IdentityWeights) {
  Graph g;
  Tensor xv({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor wv = Tensor::matrix(3, 3);
  for (int i = 0; i < 3; ++i) wv.at(i, i) = 1.0;
  NodeId y = g.affine(g.constant(xv), g.constant(wv),
                      g.constant(Tensor::vector(3, 0.0)));
  for (std::size_t i = 0; i < xv.size(); ++i)
    EXPECT_DOUBLE_EQ(g.value(y)[i], xv[i]);
}

TEST(Affine, ShapeMismatchNamesBothShapes) {
  Graph g;
  NodeId x = g.constant(Tensor::matrix(2, 3));
  NodeId w = g.constant(Tensor::matrix(4, 5));
  NodeId b = g.constant(Tensor::vector(5));
  try {
    g.affine(x, w, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x5]"), std::string::npos);
  }
}

TEST(Affine, ParameterCount) {
  // in=150, out=256 carries 150*256 + 256 weights.
  EXPECT_EQ(150 * 256 + 256, 38656);
}

TEST(BatchNorm, ClosedFormTwoRows) {
  Graph g;
  NodeId x = g.constant(Tensor({2, 1}, {0.0, 2.0}));
  NodeId gamma = g.constant(Tensor::vector(1, 1.0));
  NodeId beta = g.constant(Tensor::vector(1, 0.0));
  BatchNormState st(1);
  NodeId y = g.batch_norm_train(x, gamma, beta, st, 1e-5);
  EXPECT_NEAR(g.value(y)[0], -1.0, 1e-4);
  EXPECT_NEAR(g.value(y)[1], 1.0, 1e-4);
}

TEST(BatchNorm, IdentityOnStandardizedBatch) {
  Rng rng(7);
  const std::size_t n = 64, w = 5;
  Tensor x = Tensor::matrix(n, w);
  for (std::size_t c = 0; c < w; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      x.at(r, c) = rng.normal();
      mean += x.at(r, c);
    }
    mean /= n;
    for (std::size_t r = 0; r < n; ++r) {
      x.at(r, c) -= mean;
      var += x.at(r, c) * x.at(r, c);
    }
    var /= n;
    const double s = std::sqrt(var);
    for (std::size_t r = 0; r < n; ++r) x.at(r, c) /= s;
  }
  Graph g;
  BatchNormState st(w);
  NodeId y = g.batch_norm_train(g.constant(x), g.constant(Tensor::vector(w, 1.0)),
                                g.constant(Tensor::vector(w, 0.0)), st, 1e-12);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(g.value(y)[i], x[i], 1e-9);
}

TEST(BatchNorm, DegenerateBatchRejected) {
  Graph g;
  BatchNormState st(3);
  NodeId x = g.constant(Tensor::matrix(1, 3));
  EXPECT_THROW(g.batch_norm_train(x, g.constant(Tensor::vector(3, 1.0)),
                                  g.constant(Tensor::vector(3, 0.0)), st),
               DegenerateBatchError);
}

TEST(Activations, LeakyRelu) {
  Graph g;
  NodeId y = g.leaky_relu(g.constant(Tensor({std::size_t{2}}, {-1.0, 2.0})), 0.2);
  EXPECT_DOUBLE_EQ(g.value(y)[0], -0.2);
  EXPECT_DOUBLE_EQ(g.value(y)[1], 2.0);
}

TEST(Activations, SlrPiecewise) {
  Graph g;
  NodeId p = g.constant(Tensor::scalar(1.0));
  NodeId q = g.constant(Tensor::scalar(0.25));
  NodeId y = g.slr(g.constant(Tensor({std::size_t{2}}, {-4.0, 4.0})), p, q, +1);
  EXPECT_DOUBLE_EQ(g.value(y)[0], -1.0);
  EXPECT_DOUBLE_EQ(g.value(y)[1], 4.0);
  NodeId y2 = g.slr(g.constant(Tensor({std::size_t{2}}, {-4.0, 4.0})), p, q, -1);
  EXPECT_DOUBLE_EQ(g.value(y2)[0], -4.0);
  EXPECT_DOUBLE_EQ(g.value(y2)[1], 1.0);
}

TEST(Activations, SoftmaxSymmetryAndRowStochastic) {
  Graph g;
  NodeId y = g.softmax(g.constant(Tensor({1, 2}, {0.0, 0.0})));
  EXPECT_DOUBLE_EQ(g.value(y)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.value(y)[1], 0.5);

  Rng rng(3);
  Tensor x = Tensor::matrix(40, 7);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal() * 5.0;
  Graph g2;
  const Tensor& s = g2.value(g2.softmax(g2.constant(x)));
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < s.cols(); ++c) {
      EXPECT_GE(s.at(r, c), 0.0);
      EXPECT_LE(s.at(r, c), 1.0);
      sum += s.at(r, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Concat, WidthsAndErrors) {
  Graph g;
  NodeId a = g.constant(Tensor::matrix(3, 52));
  NodeId b = g.constant(Tensor::matrix(3, 5));
  NodeId c = g.constant(Tensor::matrix(3, 2));
  EXPECT_EQ(g.value(g.concat_cols({a, b, c})).cols(), 59u);
  EXPECT_EQ(g.value(g.concat_cols({a})).cols(), 52u);

  Graph g2;
  NodeId x = g2.constant(Tensor({1, 1}, {1.0}));
  NodeId y = g2.constant(Tensor({1, 1}, {2.0}));
  const Tensor& v = g2.value(g2.concat_cols({x, y}));
  EXPECT_DOUBLE_EQ(v[0], 1.0);
  EXPECT_DOUBLE_EQ(v[1], 2.0);

  NodeId bad = g2.constant(Tensor::matrix(2, 1));
  EXPECT_THROW(g2.concat_cols({x, bad}), DimensionError);
}

TEST(Dropout, RateZeroIsIdentity) {
  Graph g;
  Rng rng(1);
  Tensor x({std::size_t{4}}, {1.0, -2.0, 3.0, -4.0});
  NodeId y = g.dropout(g.constant(x), 0.0, rng);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_DOUBLE_EQ(g.value(y)[i], x[i]);
}

TEST(Dropout, SurvivorScalingPreservesMean) {
  Graph g;
  Rng rng(11);
  const std::size_t n = 1000000;
  NodeId y = g.dropout(g.constant(Tensor::vector(n, 1.0)), 0.5, rng);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += g.value(y)[i];
  mean /= n;
  EXPECT_NEAR(mean, 1.0, 0.01);
}

TEST(Dropout, MaskReproducibleFromSeed) {
  Tensor x = Tensor::vector(64, 1.0);
  Graph a, b;
  Rng ra(99), rb(99);
  NodeId ya = a.dropout(a.constant(x), 0.3, ra);
  NodeId yb = b.dropout(b.constant(x), 0.3, rb);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_EQ(a.value(ya)[i], b.value(yb)[i]);
}

TEST(Dropout, RateOutOfRangeRejected) {
  Graph g;
  Rng rng(1);
  NodeId x = g.constant(Tensor::vector(3, 1.0));
  EXPECT_THROW(g.dropout(x, 1.0, rng), ConfigError);
  EXPECT_THROW(g.dropout(x, -0.1, rng), ConfigError);
}

TEST(Backward, SquareAtThree) {
  Graph g;
  NodeId x = g.input(Tensor::scalar(3.0), /*needs_grad=*/true);
  NodeId y = g.mean_all(g.square(x));
  auto adj = g.backward(y);
  EXPECT_DOUBLE_EQ(adj[x][0], 6.0);
}

TEST(Backward, NonScalarOutputRejected) {
  Graph g;
  NodeId x = g.input(Tensor::vector(3, 1.0), true);
  NodeId y = g.square(x);
  EXPECT_THROW(g.backward(y), DimensionError);
}

TEST(Backward, ConstantOutputHasZeroGradients) {
  Graph g;
  Parameter p("p", Tensor::vector(4, 2.0));
  g.param(p);
  NodeId c = g.constant(Tensor::scalar(5.0));
  NodeId y = g.mean_all(c);
  auto adj = g.backward(y);
  auto grads = g.param_grads(adj);
  ASSERT_EQ(grads.size(), 1u);
  EXPECT_EQ(grads[0], nullptr);  // never touched => all-zero gradient
}

// Every op with a gradient, against central differences.
TEST(Backward, FiniteDifferenceSweep) {
  Rng rng(2024);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 3 + rng.uniform_index(3);
    const std::size_t in = 2 + rng.uniform_index(3);
    const std::size_t out = 2 + rng.uniform_index(3);
    Tensor x = random_tensor({n, in}, rng);
    Tensor w = random_tensor({in, out}, rng);
    Tensor b = random_tensor({out}, rng);
    Tensor gmm = random_tensor({out}, rng);
    Tensor bt = random_tensor({out}, rng);
    Tensor p = Tensor::scalar(1.0), q = Tensor::scalar(0.25);
    const std::uint64_t mask_seed = rng.next_u64();

    auto build = [&](std::vector<Tensor*>* leaves, Graph& g,
                     std::vector<NodeId>* ids) -> NodeId {
      Rng mask_rng(mask_seed);
      NodeId xi = g.input(x, true);
      NodeId wi = g.input(w, true);
      NodeId bi = g.input(b, true);
      NodeId gi = g.input(gmm, true);
      NodeId ti = g.input(bt, true);
      NodeId pi = g.input(p, true);
      NodeId qi = g.input(q, true);
      if (leaves) {
        *leaves = {&x, &w, &b, &gmm, &bt, &p, &q};
        *ids = {xi, wi, bi, gi, ti, pi, qi};
      }
      NodeId h = g.affine(xi, wi, bi);
      BatchNormState st(out);
      h = g.batch_norm_train(h, gi, ti, st);
      h = g.slr(h, pi, qi, rep % 2 ? +1 : -1);
      h = g.leaky_relu(h, 0.2);
      h = g.dropout(h, 0.25, mask_rng);
      h = g.softmax(h);
      return g.mean_all(g.square(h));
    };

    Graph g;
    std::vector<Tensor*> leaves;
    std::vector<NodeId> ids;
    NodeId loss = build(&leaves, g, &ids);
    auto adj = g.backward(loss);

    auto eval = [&]() {
      Graph h;
      return h.value(build(nullptr, h, nullptr)).scalar_value();
    };
    for (std::size_t k = 0; k < leaves.size(); ++k) {
      auto num = fdtest::central_diff(*leaves[k], eval);
      const Tensor& ana = adj[ids[k]];
      ASSERT_FALSE(ana.empty());
      for (std::size_t i = 0; i < num.size(); ++i)
        EXPECT_TRUE(fdtest::close_grad(ana[i], num[i], 1e-6, 1e-10))
            << "rep " << rep << " leaf " << k << " coord " << i << ": "
            << ana[i] << " vs " << num[i];
    }
  }
}

TEST(Backward, GraphReexecutionIsBitwiseDeterministic) {
  Rng rng(5);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor w = random_tensor({3, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  auto run = [&](std::vector<double>* grad) {
    Graph g;
    Rng mask(42);
    NodeId xi = g.input(x, true);
    NodeId y = g.affine(xi, g.constant(w), g.constant(b));
    y = g.leaky_relu(y, 0.2);
    y = g.dropout(y, 0.5, mask);
    NodeId loss = g.mean_all(g.square(y));
    auto adj = g.backward(loss);
    *grad = adj[xi].values();
    return g.value(loss).scalar_value();
  };
  std::vector<double> g1, g2;
  const double l1 = run(&g1);
  const double l2 = run(&g2);
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(g1, g2);
}

TEST(InputGradient, LinearCriticClosedForm) {
  // C(x) = x * w  =>  per-row input gradient is w, and the derivative of
  // ||grad||_2 w.r.t. w is w / ||w||.
  Rng rng(8);
  Tensor w = random_tensor({5, 1}, rng);
  double norm = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) norm += w[i] * w[i];
  norm = std::sqrt(norm);

  Graph g;
  Parameter wp("w", w);
  NodeId wi = g.param(wp);
  NodeId x = g.input(random_tensor({3, 5}, rng), true);
  NodeId scores = g.affine(x, wi, g.constant(Tensor::vector(1, 0.0)));
  NodeId grad = g.input_gradient(scores, x);
  const Tensor& gv = g.value(grad);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c)
      EXPECT_NEAR(gv.at(r, c), w[c], 1e-12);

  // ||grad|| per row, averaged; d/dw should be w/||w||.
  NodeId gnorm = g.sqrt_elem(g.sum_cols(g.square(grad)));
  NodeId loss = g.mean_all(gnorm);
  auto adj = g.backward(loss);
  const Tensor& gw = adj[wi];
  ASSERT_FALSE(gw.empty());
  for (std::size_t i = 0; i < w.size(); ++i)
    EXPECT_NEAR(gw[i], w[i] / norm, 1e-10);
}

TEST(InputGradient, HalfSquaredNormGivesInputBack) {
  Rng rng(9);
  Tensor x = random_tensor({4, 6}, rng);
  Graph g;
  NodeId xi = g.input(x, true);
  NodeId rowwise = g.scale(g.sum_cols(g.square(xi)), 0.5);
  NodeId grad = g.input_gradient(rowwise, xi);
  const Tensor& gv = g.value(grad);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(gv[i], x[i], 1e-12);
}

TEST(InputGradient, UnsupportedOpRejected) {
  Graph g;
  BatchNormState st(3);
  NodeId x = g.input(Tensor::matrix(4, 3), true);
  NodeId y = g.batch_norm_train(x, g.constant(Tensor::vector(3, 1.0)),
                                g.constant(Tensor::vector(3, 0.0)), st);
  NodeId out = g.mean_all(y);
  EXPECT_THROW(g.input_gradient(out, x), UnsupportedSecondOrderError);
}

TEST(InputGradient, DetachedInputRejected) {
  Graph g;
  NodeId x = g.input(Tensor::vector(3, 1.0), true);
  NodeId y = g.mean_all(g.constant(Tensor::vector(3, 2.0)));
  EXPECT_THROW(g.input_gradient(y, x), Error);
}

// Penalty gradients w.r.t. weights through the constructed adjoint nodes,
// against an outer finite difference (the inner input gradient is certified
// by the closed-form tests above).
TEST(InputGradient, PenaltyWeightGradientMatchesFiniteDifference) {
  Rng rng(77);
  const std::size_t n = 3, d = 4, h1 = 6;
  Tensor x = random_tensor({n, d}, rng);
  Tensor w1 = random_tensor({d, h1}, rng);
  Tensor b1 = random_tensor({h1}, rng);
  Tensor w2 = random_tensor({h1, 1}, rng);
  Tensor b2 = random_tensor({1}, rng);
  const std::uint64_t mask_seed = 4242;

  auto penalty = [&](Graph& g, std::vector<NodeId>* ids) {
    Rng mask(mask_seed);
    NodeId xi = g.input(x, true);
    NodeId w1i = g.input(w1, true);
    NodeId b1i = g.input(b1, true);
    NodeId w2i = g.input(w2, true);
    NodeId b2i = g.input(b2, true);
    if (ids) *ids = {w1i, b1i, w2i, b2i};
    NodeId h = g.leaky_relu(g.affine(xi, w1i, b1i), 0.2);
    h = g.dropout(h, 0.4, mask);
    NodeId score = g.affine(h, w2i, b2i);
    NodeId grad = g.input_gradient(score, xi);
    NodeId gnorm = g.sqrt_elem(g.sum_cols(g.square(grad)));
    return g.mean_all(g.square(g.add_scalar(gnorm, -1.0)));
  };

  Graph g;
  std::vector<NodeId> ids;
  NodeId pen = penalty(g, &ids);
  auto adj = g.backward(pen);

  std::vector<Tensor*> weights = {&w1, &b1, &w2, &b2};
  auto eval = [&]() {
    Graph h;
    return h.value(penalty(h, nullptr)).scalar_value();
  };
  for (std::size_t k = 0; k < weights.size(); ++k) {
    auto num = fdtest::central_diff(*weights[k], eval);
    const Tensor& ana = adj[ids[k]];
    // Bias adjoints stay empty: the input gradient is independent of them
    // except through activation masks, whose derivative is zero a.e.
    for (std::size_t i = 0; i < num.size(); ++i) {
      const double a = ana.empty() ? 0.0 : ana[i];
      EXPECT_TRUE(fdtest::close_grad(a, num[i], 1e-5, 1e-9))
          << "weight " << k << " coord " << i << ": " << a << " vs "
          << num[i];
    }
  }
}

TEST(Adam, ZeroGradientLeavesValueAndAdvancesCounter) {
  Parameter p("p", Tensor::vector(3, 1.5));
  Parameter* ps[] = {&p};
  const Tensor* gs[] = {nullptr};
  adam_step(ps, gs, {});
  EXPECT_EQ(p.step, 1);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(p.value[i], 1.5);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  Parameter p("p", Tensor::scalar(0.0));
  Tensor g = Tensor::scalar(1.0);
  Parameter* ps[] = {&p};
  const Tensor* gs[] = {&g};
  AdamConfig cfg;
  cfg.lr = 0.001;
  adam_step(ps, gs, cfg);
  EXPECT_NEAR(std::abs(p.value[0]), cfg.lr, 1e-9);
}

TEST(Adam, ShapeMismatchRejected) {
  Parameter p("p", Tensor::vector(3, 0.0));
  Tensor g = Tensor::vector(4, 1.0);
  Parameter* ps[] = {&p};
  const Tensor* gs[] = {&g};
  EXPECT_THROW(adam_step(ps, gs, {}), DimensionError);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(123);
    Parameter p("p", Tensor::vector(8, 0.1));
    AdamConfig cfg;
    for (int it = 0; it < 50; ++it) {
      Tensor g = Tensor::vector(8);
      for (std::size_t i = 0; i < 8; ++i) g[i] = rng.normal();
      Parameter* ps[] = {&p};
      const Tensor* gs[] = {&g};
      adam_step(ps, gs, cfg);
    }
    return p.value.values();
  };
  EXPECT_EQ(run(), run());
}
