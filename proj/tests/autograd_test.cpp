#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "advit/errors.hpp"
#include "advit/grad_check.hpp"
#include "advit/graph.hpp"
#include "advit/ops.hpp"
#include "advit/rng.hpp"
#include "test_support.hpp"

using namespace advit;
using advit::test::random_tensor;
using advit::test::weighted_sum;

namespace {

using UnaryOp = std::function<Var(Graph<double>&, Var)>;

// Max relative error of `op` over `instances` random inputs of `shape`.
double worst_unary_error(const UnaryOp& op, const Shape& shape, int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    Tensor<double> x = random_tensor(shape, rng);
    Tensor<double> probe;
    {
      Graph<double> g;
      Tensor<double> copy = x;
      probe = random_tensor(g.shape(op(g, g.constant(copy))), rng);
    }
    auto f = [&](Graph<double>& g) { return weighted_sum(g, op(g, g.leaf(x)), probe); };
    worst = std::max(worst, grad_check(f, x).max_rel_error);
  }
  return worst;
}

// erf via its Maclaurin series, independent of std::erf.
double erf_series(double x) {
  double term = x;
  double total = x;
  for (int n = 1; n < 60; ++n) {
    term *= -x * x / n;
    total += term / (2 * n + 1);
  }
  return 2.0 / std::sqrt(std::numbers::pi) * total;
}

}  // namespace

TEST(Tensor, ShapeInvariants) {
  Tensor<double> t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(Tensor<double>({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  EXPECT_THROW(Tensor<double>({0, 2}), DimensionError);
  EXPECT_THROW((void)t.reshaped({4, 2}), DimensionError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
  Rng c = Rng::from_state(a.state());
  EXPECT_EQ(c.next_u64(), a.next_u64());
}

TEST(Rng, SubstreamsAreIndependentOfParentPosition) {
  Rng a(7);
  Rng child_before = a.substream(3);
  a.next_u64();
  Rng child_after = a.substream(3);
  EXPECT_EQ(child_before.next_u64(), child_after.next_u64());
  EXPECT_NE(a.substream(1).next_u64(), a.substream(2).next_u64());
}

TEST(Rng, UniformAndNormalMoments) {
  Rng rng(1);
  double su = 0.0;
  double sn = 0.0;
  double sn2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    su += rng.uniform();
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
}

TEST(Rng, BetaMean) {
  Rng rng(5);
  double s = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    s += rng.beta(2.0, 5.0);
  }
  EXPECT_NEAR(s / n, 2.0 / 7.0, 0.005);
  Rng small(6);
  for (int i = 0; i < 1000; ++i) {
    const double b = small.beta(0.4, 0.4);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
  }
}

TEST(Matmul, IdentityAndHandCase) {
  Graph<double> g;
  Var id = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  Var m = g.constant(Tensor<double>({2, 2}, {3, 4, 5, 6}));
  EXPECT_TRUE(bit_equal(g.value(ops::matmul(g, id, m)), g.value(m)));
  Var a = g.constant(Tensor<double>({1, 2}, {1, 2}));
  Var b = g.constant(Tensor<double>({2, 1}, {3, 4}));
  EXPECT_EQ(g.value(ops::matmul(g, a, b)).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph<double> g;
  Var a = g.constant(Tensor<double>({2, 3}));
  Var b = g.constant(Tensor<double>({2, 3}));
  try {
    ops::matmul(g, a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] and [2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor<double> a = random_tensor({3, 4}, rng);
  Tensor<double> b = random_tensor({4, 2}, rng);
  Tensor<double> w = random_tensor({3, 2}, rng);
  auto fa = [&](Graph<double>& g) { return weighted_sum(g, ops::matmul(g, g.leaf(a), g.constant(b)), w); };
  auto fb = [&](Graph<double>& g) { return weighted_sum(g, ops::matmul(g, g.constant(a), g.leaf(b)), w); };
  EXPECT_LT(grad_check(fa, a).max_rel_error, 1e-6);
  EXPECT_LT(grad_check(fb, b).max_rel_error, 1e-6);
}

TEST(Matmul, BatchedGradient) {
  Rng rng(12);
  Tensor<double> a = random_tensor({2, 3, 4}, rng);
  Tensor<double> b = random_tensor({2, 4, 5}, rng);
  Tensor<double> w = random_tensor({2, 3, 5}, rng);
  auto fa = [&](Graph<double>& g) { return weighted_sum(g, ops::matmul(g, g.leaf(a), g.constant(b)), w); };
  auto fb = [&](Graph<double>& g) { return weighted_sum(g, ops::matmul(g, g.constant(a), g.leaf(b)), w); };
  EXPECT_LT(grad_check(fa, a).max_rel_error, 1e-6);
  EXPECT_LT(grad_check(fb, b).max_rel_error, 1e-6);
}

TEST(Softmax, ClosedForms) {
  Graph<double> g;
  auto s = g.value(ops::softmax_lastdim(g, g.constant(Tensor<double>({2}, {0.0, 0.0}))));
  EXPECT_EQ(s[0], 0.5);
  EXPECT_EQ(s[1], 0.5);
  auto t = g.value(ops::softmax_lastdim(g, g.constant(Tensor<double>({2}, {std::log(2.0), 0.0}))));
  EXPECT_NEAR(t[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(t[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndRowSums) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> x = random_tensor({4, 7}, rng, 3.0);
    Tensor<double> shifted = x;
    const double c = rng.uniform(-50.0, 50.0);
    for (auto& v : shifted.data()) {
      v += c;
    }
    Graph<double> g;
    const auto& a = g.value(ops::softmax_lastdim(g, g.constant(x)));
    const auto& b = g.value(ops::softmax_lastdim(g, g.constant(shifted)));
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(a[r * 7 + j], 0.0);
        total += a[r * 7 + j];
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, RejectsNonFinite) {
  Graph<double> g;
  Var x = g.constant(Tensor<double>({2}, {0.0, std::nan("")}));
  EXPECT_THROW(ops::softmax_lastdim(g, x), NumericError);
}

TEST(LayerNorm, ConstantSliceMapsToBeta) {
  Graph<double> g;
  Var x = g.constant(Tensor<double>({4}, {5, 5, 5, 5}));
  Var gamma = g.constant(Tensor<double>::full({4}, 1.0));
  Var beta = g.constant(Tensor<double>({4}));
  const auto& y = g.value(ops::layer_norm(g, x, gamma, beta));
  for (double v : y.data()) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(LayerNorm, AlreadyNormalizedAtZeroEps) {
  Graph<double> g;
  Var x = g.constant(Tensor<double>({2}, {1, -1}));
  Var gamma = g.constant(Tensor<double>::full({2}, 1.0));
  Var beta = g.constant(Tensor<double>({2}));
  const auto& y = g.value(ops::layer_norm(g, x, gamma, beta, 0.0));
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[1], -1.0);
  EXPECT_THROW(ops::layer_norm(g, x, gamma, beta, -1.0), ContractError);
}

TEST(LayerNorm, GradientsForInputAndAffine) {
  Rng rng(21);
  Tensor<double> x = random_tensor({2, 8}, rng);
  Tensor<double> gamma = random_tensor({8}, rng);
  Tensor<double> beta = random_tensor({8}, rng);
  Tensor<double> w = random_tensor({2, 8}, rng);
  auto build = [&](Graph<double>& g, Var xv, Var gv, Var bv) { return weighted_sum(g, ops::layer_norm(g, xv, gv, bv), w); };
  auto fx = [&](Graph<double>& g) { return build(g, g.leaf(x), g.constant(gamma), g.constant(beta)); };
  auto fg = [&](Graph<double>& g) { return build(g, g.constant(x), g.leaf(gamma), g.constant(beta)); };
  auto fb = [&](Graph<double>& g) { return build(g, g.constant(x), g.constant(gamma), g.leaf(beta)); };
  EXPECT_LT(grad_check(fx, x).max_rel_error, 1e-5);
  EXPECT_LT(grad_check(fg, gamma).max_rel_error, 1e-5);
  EXPECT_LT(grad_check(fb, beta).max_rel_error, 1e-5);
}

TEST(Gelu, KnownValues) {
  Graph<double> g;
  const auto& y = g.value(ops::gelu(g, g.constant(Tensor<double>({3}, {0.0, 10.0, 1.0}))));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 10.0, 1e-9);
  const double phi1 = 0.5 * (1.0 + erf_series(1.0 / std::sqrt(2.0)));
  EXPECT_NEAR(y[2], phi1, 1e-10);
}

TEST(CrossEntropy, ClosedForms) {
  Graph<double> g;
  Tensor<double> onehot({1, 10});
  onehot[3] = 1.0;
  Var uniform = g.constant(Tensor<double>({1, 10}));
  EXPECT_NEAR(g.value(ops::cross_entropy(g, uniform, onehot)).item(), std::log(10.0), 1e-12);

  Tensor<double> first({1, 3}, {1, 0, 0});
  Var saturated = g.constant(Tensor<double>({1, 3}, {100, 0, 0}));
  EXPECT_NEAR(g.value(ops::cross_entropy(g, saturated, first)).item(), 0.0, 1e-9);

  Tensor<double> soft({1, 2}, {0.7, 0.3});
  Var logits = g.constant(Tensor<double>({1, 2}, {1.0, 2.0}));
  const double z = std::exp(1.0) + std::exp(2.0);
  const double expected = -(0.7 * std::log(std::exp(1.0) / z) + 0.3 * std::log(std::exp(2.0) / z));
  EXPECT_NEAR(g.value(ops::cross_entropy(g, logits, soft)).item(), expected, 1e-12);
}

TEST(CrossEntropy, RejectsNonDistribution) {
  Graph<double> g;
  Var logits = g.constant(Tensor<double>({1, 2}));
  EXPECT_THROW(ops::cross_entropy(g, logits, Tensor<double>({1, 2}, {0.5, 0.6})), ValidationError);
  EXPECT_THROW(ops::cross_entropy(g, logits, Tensor<double>({1, 2}, {1.5, -0.5})), ValidationError);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusLabelsOverBatch) {
  Rng rng(8);
  Tensor<double> logits = random_tensor({3, 4}, rng).set_requires_grad(true);
  Tensor<double> labels({3, 4}, {1, 0, 0, 0, 0, 0.5, 0.5, 0, 0.25, 0.25, 0.25, 0.25});
  Graph<double> g;
  Var x = g.leaf(logits);
  Var sm = ops::softmax_lastdim(g, x);
  g.backward(ops::cross_entropy(g, x, labels));
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_NEAR(logits.grad()[i], (g.value(sm)[i] - labels[i]) / 3.0, 1e-15);
  }
  auto f = [&](Graph<double>& gr) { return ops::cross_entropy(gr, gr.leaf(logits), labels); };
  EXPECT_LT(grad_check(f, logits).max_rel_error, 1e-7);
}

TEST(Backward, SumAndSquare) {
  Rng rng(2);
  Tensor<double> x = random_tensor({2, 3, 2}, rng).set_requires_grad(true);
  {
    Graph<double> g;
    g.backward(ops::sum(g, g.leaf(x)));
    for (double v : x.grad()) {
      EXPECT_EQ(v, 1.0);
    }
  }
  x.zero_grad();
  Graph<double> g;
  Var xv = g.leaf(x);
  g.backward(ops::sum(g, ops::mul(g, xv, xv)));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(x.grad()[i], 2.0 * x[i]);
  }
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor<double> x({3}, {1, 2, 3});
  x.set_requires_grad(true);
  Graph<double> g;
  Var loss = ops::sum(g, ops::scale(g, g.leaf(x), 2.0));
  g.backward(loss);
  g.backward(loss);
  for (double v : x.grad()) {
    EXPECT_EQ(v, 4.0);
  }
  x.zero_grad();
  for (double v : x.grad()) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor<double> x({2}, {1, 2});
  x.set_requires_grad(true);
  Graph<double> g;
  EXPECT_THROW(g.backward(g.leaf(x)), ContractError);
}

TEST(Backward, FanOutSumsBranchAdjoints) {
  Rng rng(4);
  Tensor<double> x = random_tensor({5}, rng).set_requires_grad(true);
  Tensor<double> wa = random_tensor({5}, rng);
  auto branch_a = [&](Graph<double>& g, Var v) { return ops::sum(g, ops::mul(g, v, g.constant(wa))); };
  auto branch_b = [&](Graph<double>& g, Var v) { return ops::sum(g, ops::gelu(g, v)); };
  auto grad_of = [&](auto&& build) {
    x.clear_grad();
    Graph<double> g;
    g.backward(build(g, g.leaf(x)));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto ga = grad_of(branch_a);
  const auto gb = grad_of(branch_b);
  const auto both = grad_of([&](Graph<double>& g, Var v) { return ops::add(g, branch_a(g, v), branch_b(g, v)); });
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(both[i], ga[i] + gb[i]);
  }
}

TEST(Backward, DetachAndGateStopGradient) {
  Tensor<double> x({2}, {0.5, -1.0});
  x.set_requires_grad(true);
  Graph<double> g;
  Var xv = g.leaf(x);
  Var gated = ops::grad_gate(g, xv, 0);
  EXPECT_TRUE(bit_equal(g.value(gated), x.detached()));
  Var det = ops::detach(g, xv);
  EXPECT_TRUE(bit_equal(g.value(det), x.detached()));
  g.backward(ops::add(g, ops::sum(g, gated), ops::sum(g, det)));
  EXPECT_FALSE(x.has_grad());
  EXPECT_THROW(ops::grad_gate(g, xv, 2), ContractError);
}

TEST(Backward, DeterministicForward) {
  Rng rng(9);
  Tensor<double> x = random_tensor({4, 6}, rng);
  auto run = [&] {
    Graph<double> g;
    Var y = ops::softmax_lastdim(g, ops::gelu(g, g.constant(x)));
    return g.value(y).detached();
  };
  EXPECT_TRUE(bit_equal(run(), run()));
}

// Every primitive against central differences on 100 random instances.
TEST(Primitives, FiniteDifferenceSweep) {
  constexpr int kInstances = 100;
  Rng rng(77);
  const Tensor<double> gamma = random_tensor({6}, rng);
  const Tensor<double> beta = random_tensor({6}, rng);
  const Tensor<double> weight = random_tensor({6, 3}, rng);
  const Tensor<double> bias = random_tensor({6}, rng);
  const Tensor<double> other = random_tensor({2, 3, 6}, rng);
  const Tensor<double> labels({2, 6}, {0.2, 0.1, 0.3, 0.1, 0.2, 0.1, 0, 0, 1, 0, 0, 0});

  struct Case {
    const char* name;
    UnaryOp op;
    Shape shape;
  };
  const std::vector<Case> cases = {
      {"matmul", [&](Graph<double>& g, Var x) { return ops::matmul(g, x, g.constant(weight)); }, {2, 3, 6}},
      {"transpose", [&](Graph<double>& g, Var x) { return ops::transpose_last2(g, x); }, {2, 3, 6}},
      {"add_broadcast", [&](Graph<double>& g, Var x) { return ops::add(g, x, g.constant(bias)); }, {2, 3, 6}},
      {"add_rhs", [&](Graph<double>& g, Var x) { return ops::add(g, g.constant(other), x); }, {3, 6}},
      {"mul", [&](Graph<double>& g, Var x) { return ops::mul(g, x, g.constant(other)); }, {2, 3, 6}},
      {"scale", [&](Graph<double>& g, Var x) { return ops::scale(g, x, 1.7); }, {2, 3}},
      {"permute", [&](Graph<double>& g, Var x) { return ops::permute(g, x, {2, 0, 1}); }, {2, 3, 4}},
      {"broadcast", [&](Graph<double>& g, Var x) { return ops::broadcast_leading(g, x, {3}); }, {2, 2}},
      {"slice", [&](Graph<double>& g, Var x) { return ops::slice(g, x, 1, 1, 3); }, {2, 4, 3}},
      {"concat",
       [&](Graph<double>& g, Var x) {
         Var parts[] = {x, ops::scale(g, x, -2.0)};
         return ops::concat(g, std::span<const Var>(parts), 1);
       },
       {2, 3, 2}},
      {"softmax", [&](Graph<double>& g, Var x) { return ops::softmax_lastdim(g, x); }, {3, 5}},
      {"layer_norm",
       [&](Graph<double>& g, Var x) { return ops::layer_norm(g, x, g.constant(gamma), g.constant(beta)); },
       {3, 6}},
      {"gelu", [&](Graph<double>& g, Var x) { return ops::gelu(g, x); }, {4, 5}},
      {"cross_entropy", [&](Graph<double>& g, Var x) { return ops::cross_entropy(g, x, labels); }, {2, 6}},
  };
  for (const auto& c : cases) {
    EXPECT_LT(worst_unary_error(c.op, c.shape, kInstances, 1000), 1e-5) << c.name;
  }
}

TEST(GradCheck, ExactQuadratic) {
  Rng rng(31);
  Tensor<double> x = random_tensor({10}, rng);
  auto f = [&](Graph<double>& g) {
    Var v = g.leaf(x);
    return ops::sum(g, ops::mul(g, v, v));
  };
  const auto r = grad_check(f, x);
  EXPECT_LT(r.max_rel_error, 1e-7);
  EXPECT_EQ(r.checked, 10u);
  EXPECT_FALSE(x.requires_grad());
}

TEST(GradCheck, DetectsScaledGradient) {
  Rng rng(32);
  Tensor<double> x = random_tensor({10}, rng);
  // Identity op whose backward is 1% too large.
  auto skewed = [](Graph<double>& g, Var v) {
    return g.record("skewed", g.value(v).detached(), {v}, [v](Graph<double>& gr, std::span<const double> d) {
      auto dv = gr.adjoint_buffer(v);
      for (std::size_t i = 0; i < d.size(); ++i) {
        dv[i] += 1.01 * d[i];
      }
    });
  };
  auto f = [&](Graph<double>& g) {
    Var v = skewed(g, g.leaf(x));
    return ops::sum(g, ops::mul(g, v, v));
  };
  EXPECT_GE(grad_check(f, x).max_rel_error, 4e-3);
}

TEST(GradCheck, DetectsNonDeterminism) {
  Tensor<double> x({2}, {1, 2});
  int calls = 0;
  auto f = [&](Graph<double>& g) { return ops::scale(g, ops::sum(g, g.leaf(x)), 1.0 + (calls++)); };
  EXPECT_THROW(grad_check(f, x), ContractError);
}

TEST(GradCheck, SubsamplesCoordinates) {
  Rng rng(33);
  Tensor<double> x = random_tensor({50}, rng);
  auto f = [&](Graph<double>& g) { return ops::sum(g, ops::gelu(g, g.leaf(x))); };
  GradCheckOptions opts;
  opts.max_coords = 7;
  EXPECT_EQ(grad_check(f, x, opts).checked, 7u);
}
