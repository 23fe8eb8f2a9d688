#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fatnet/autodiff.hpp"
#include "fatnet/gradcheck.hpp"
#include "fatnet/optim.hpp"

using namespace fatnet;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

Var<double> param(Tensor<double> t) { return Var<double>(std::move(t), true); }

/// Random projection so every output element carries a distinct weight.
Var<double> weighted_sum(const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, Var<double>(random_tensor(y.shape(), rng))));
}

}  // namespace

TEST(Tensor, RejectsDataSizeMismatch) {
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor<float>({0, 2}), DimensionError);
}

TEST(Matmul, IdentityAndSelector) {
  Var<float> eye(Tensor<float>::eye(2));
  Var<float> b(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(matmul(eye, b).value(), b.value());

  Var<float> sel(Tensor<float>({2, 2}, {1, 0, 0, 0}));
  Var<float> c(Tensor<float>({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(matmul(sel, c).value(), Tensor<float>({2, 2}, {5, 6, 0, 0}));
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Var<float> a(Tensor<float>({2, 3}));
  Var<float> b(Tensor<float>({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto a = param(random_tensor({3, 4}, rng));
  auto b = param(random_tensor({4, 2}, rng));
  auto r = check_gradients<double>({{"a", a}, {"b", b}},
                                   [&] { return weighted_sum(matmul(a, b), 11); });
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_name << "[" << r.worst_index << "]";
}

TEST(LeakyRelu, BranchesAndDerivative) {
  Var<float> x(Tensor<float>({2}, {-1.0f, 3.0f}), true);
  Var<float> y = leaky_relu(x, 0.2f);
  EXPECT_FLOAT_EQ(y.value()[0], -0.2f);
  EXPECT_FLOAT_EQ(y.value()[1], 3.0f);
  backward(sum(y));
  EXPECT_FLOAT_EQ(x.grad()[0], 0.2f);
  EXPECT_FLOAT_EQ(x.grad()[1], 1.0f);
  EXPECT_THROW(leaky_relu(x, 1.5f), InvalidArgument);
}

TEST(Sigmoid, ValuesSaturationAndDerivative) {
  Var<double> x(Tensor<double>({2}, {0.0, 50.0}), true);
  Var<double> y = sigmoid(x);
  EXPECT_EQ(y.value()[0], 0.5);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-7);
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Reduce, MaxMeanValues) {
  Var<float> x(Tensor<float>({2, 2}, {1, 5, 3, 2}));
  EXPECT_EQ(reduce_max(x, 0).value(), Tensor<float>({2}, {3, 5}));
  Var<float> y(Tensor<float>({1, 2}, {2, 4}));
  EXPECT_EQ(reduce_mean(y, 1).value(), Tensor<float>({1}, {3}));
  EXPECT_THROW(reduce_max(x, 2), DimensionError);
}

TEST(Reduce, MaxTieRoutesToFirstIndex) {
  Var<float> x(Tensor<float>({2}, {7, 7}), true);
  backward(sum(reduce_max(x, 0)));
  EXPECT_EQ(x.grad()[0], 1.0f);
  EXPECT_EQ(x.grad()[1], 0.0f);
}

TEST(Reduce, MaxBackwardConservesGradientMass) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Var<double> x(random_tensor({4, 6, 3}, rng), true);
    Var<double> upstream(random_tensor({4, 3}, rng));
    backward(sum(mul(reduce_max(x, 1), upstream)));
    double in = 0.0, out = 0.0;
    for (double g : upstream.value().data()) in += g;
    for (double g : x.grad().data()) out += g;
    EXPECT_NEAR(in, out, 1e-12);
  }
}

TEST(Reduce, MeanIsBitwisePermutationInvariant) {
  std::mt19937_64 rng(8);
  Tensor<float> base({7, 5});
  std::uniform_real_distribution<float> d(-3, 3);
  for (auto& v : base.data()) v = d(rng);
  const auto ref = reduce_mean(Var<float>(base), 0).value();
  std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5, 6};
  for (int t = 0; t < 50; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<float> p({7, 5});
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 5; ++j) p.at(i, j) = base.at(perm[i], j);
    EXPECT_EQ(reduce_mean(Var<float>(p), 0).value(), ref);
  }
}

TEST(BatchNorm, SymmetricBatchNormalizesToUnit) {
  Var<double> x(Tensor<double>({2, 1}, {-1.0, 1.0}));
  Var<double> g(Tensor<double>({1}, {1.0})), b(Tensor<double>({1}, {0.0}));
  BatchNormState<double> st(1);
  auto y = batch_norm(x, g, b, st, Mode::kTrain);
  EXPECT_DOUBLE_EQ(y.value()[0], -1.0 / std::sqrt(1.0 + 1e-5));
  EXPECT_DOUBLE_EQ(y.value()[1], 1.0 / std::sqrt(1.0 + 1e-5));
  // running stats: 0.9*old + 0.1*batch
  EXPECT_DOUBLE_EQ(st.running_mean[0], 0.0);
  EXPECT_DOUBLE_EQ(st.running_var[0], 0.9 + 0.1 * 1.0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Var<float> x(Tensor<float>({3, 2}, {1, 2, 3, 4, 5, 9}));
  Var<float> g(Tensor<float>({2}, {0, 0})), b(Tensor<float>({2}, {0.5f, -1}));
  BatchNormState<float> st(2);
  auto y = batch_norm(x, g, b, st, Mode::kTrain);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(y.value().at(i, 0), 0.5f);
    EXPECT_EQ(y.value().at(i, 1), -1.0f);
  }
}

TEST(BatchNorm, EvalBeforeTrainingUsesUnitStatistics) {
  Var<float> x(Tensor<float>({1, 1}, {2.0f}));
  Var<float> g(Tensor<float>({1}, {1})), b(Tensor<float>({1}, {0}));
  BatchNormState<float> st(1);
  auto y = batch_norm(x, g, b, st, Mode::kEval);
  EXPECT_FLOAT_EQ(y.value()[0], 2.0f / std::sqrt(1.0f + 1e-5f));
}

TEST(BatchNorm, RandomBatchStatistics) {
  std::mt19937_64 rng(12);
  for (std::size_t rows : {8u, 16u, 64u}) {
    Var<double> x(random_tensor({rows, 5}, rng, -4.0, 9.0));
    Var<double> g(Tensor<double>::ones({5})), b(Tensor<double>({5}));
    BatchNormState<double> st(5);
    auto y = batch_norm(x, g, b, st, Mode::kTrain).value();
    for (std::size_t c = 0; c < 5; ++c) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < rows; ++i) m += y.at(i, c);
      m /= double(rows);
      for (std::size_t i = 0; i < rows; ++i) v += (y.at(i, c) - m) * (y.at(i, c) - m);
      v /= double(rows);
      EXPECT_LT(std::abs(m), 1e-6);
      EXPECT_LT(std::abs(v - 1.0), 1e-4);
    }
  }
}

TEST(SoftmaxCrossEntropy, UniformAndSaturated) {
  Var<double> z(Tensor<double>({1, 4}));
  EXPECT_NEAR(softmax_cross_entropy(z, {2}).value()[0], std::log(4.0), 1e-12);
  Var<double> s(Tensor<double>({1, 4}, {0, 50, 0, 0}));
  EXPECT_LT(softmax_cross_entropy(s, {1}).value()[0], 1e-6);
  EXPECT_THROW(softmax_cross_entropy(z, {4}), InvalidArgument);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  auto z = param(random_tensor({5, 4}, rng, -2, 2));
  auto r = check_gradients<double>({{"z", z}}, [&] {
    return softmax_cross_entropy(z, {0, 3, 1, 1, 2});
  });
  EXPECT_LT(r.max_rel_error, 1e-5);
}

/// Every differentiable primitive on small random 64-bit inputs.
TEST(Primitives, CentralDifferenceAgreement) {
  std::mt19937_64 rng(99);
  auto x = param(random_tensor({6, 4}, rng));
  auto y = param(random_tensor({6, 4}, rng));
  auto bias = param(random_tensor({4}, rng));
  auto gates = param(random_tensor({2, 4}, rng, 0.1, 0.9));
  auto gamma = param(random_tensor({4}, rng, 0.5, 1.5));
  auto beta = param(random_tensor({4}, rng));
  auto t = param(random_tensor({2, 9}, rng));
  auto x3 = param(random_tensor({6, 3}, rng));
  auto w3 = param(random_tensor({3, 2}, rng));
  std::vector<std::size_t> nbrs{1, 2, 0, 2, 0, 1, 4, 5, 3, 5, 3, 4};

  struct Case {
    const char* name;
    std::function<Var<double>()> f;
    std::vector<std::pair<std::string, Var<double>>> params;
  };
  std::vector<Case> cases = {
      {"add", [&] { return weighted_sum(add(x, y), 1); }, {{"x", x}, {"y", y}}},
      {"sub", [&] { return weighted_sum(sub(x, y), 2); }, {{"x", x}, {"y", y}}},
      {"mul", [&] { return weighted_sum(mul(x, y), 3); }, {{"x", x}, {"y", y}}},
      {"scale", [&] { return weighted_sum(scale(x, 1.7), 4); }, {{"x", x}}},
      {"add_row", [&] { return weighted_sum(add_row(x, bias), 5); }, {{"x", x}, {"b", bias}}},
      {"leaky_relu", [&] { return weighted_sum(leaky_relu(x, 0.2), 6); }, {{"x", x}}},
      {"sigmoid", [&] { return weighted_sum(sigmoid(x), 7); }, {{"x", x}}},
      {"reshape", [&] { return weighted_sum(reshape(x, {3, 8}), 8); }, {{"x", x}}},
      {"reduce_max", [&] { return weighted_sum(reduce_max(reshape(x, {2, 3, 4}), 1), 9); }, {{"x", x}}},
      {"reduce_mean", [&] { return weighted_sum(reduce_mean(reshape(x, {2, 3, 4}), 1), 10); }, {{"x", x}}},
      {"concat", [&] { return weighted_sum(concat_cols<double>({x, y}), 11); }, {{"x", x}, {"y", y}}},
      {"gather_edges", [&] { return weighted_sum(gather_edges(x, nbrs, 2), 12); }, {{"x", x}}},
      {"gather_edges_center", [&] { return weighted_sum(gather_edges(x, nbrs, 2, true), 13); }, {{"x", x}}},
      {"scale_groups", [&] { return weighted_sum(scale_groups(x, gates), 14); }, {{"x", x}, {"g", gates}}},
      {"tile_rows", [&] { return weighted_sum(tile_rows(gates, 3), 15); }, {{"g", gates}}},
      {"batched_transform", [&] { return weighted_sum(batched_transform(x3, t, 3), 16); }, {{"x", x3}, {"t", t}}},
      {"batch_norm_train", [&] {
         BatchNormState<double> st(4);
         return weighted_sum(batch_norm(x, gamma, beta, st, Mode::kTrain), 17);
       }, {{"x", x}, {"gamma", gamma}, {"beta", beta}}},
      {"batch_norm_eval", [&] {
         BatchNormState<double> st(4);
         st.running_mean.fill(0.3);
         st.running_var.fill(1.7);
         return weighted_sum(batch_norm(x, gamma, beta, st, Mode::kEval), 18);
       }, {{"x", x}, {"gamma", gamma}, {"beta", beta}}},
      {"matmul", [&] { return weighted_sum(matmul(x3, w3), 19); }, {{"x", x3}, {"w", w3}}},
  };
  for (auto& c : cases) {
    auto r = check_gradients<double>(c.params, c.f);
    EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " worst " << r.worst_name << "["
                                     << r.worst_index << "] analytic " << r.worst_analytic
                                     << " numeric " << r.worst_numeric;
  }
}

TEST(Backward, SigmoidSumAtZero) {
  Var<float> x(Tensor<float>({5}), true);
  backward(sum(sigmoid(x)));
  for (float g : x.grad().data()) EXPECT_FLOAT_EQ(g, 0.25f);
}

TEST(Backward, ReusedNodeAccumulates) {
  std::mt19937_64 rng(1);
  Var<double> x(random_tensor({3}, rng), true);
  backward(sum(add(x, x)));
  Tensor<double> twice = x.grad();
  x.zero_grad();
  backward(sum(scale(x, 2.0)));
  EXPECT_EQ(twice, x.grad());
  for (double g : twice.data()) EXPECT_EQ(g, 2.0);
}

TEST(Backward, RejectsNonScalarRoot) {
  Var<float> x(Tensor<float>({3}), true);
  EXPECT_THROW(backward(sigmoid(x)), DimensionError);
}

TEST(Backward, NoGradGuardSkipsRecording) {
  Var<float> x(Tensor<float>({3}), true);
  NoGradGuard guard;
  auto y = sum(sigmoid(x));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Adam, ZeroGradientLeavesParameter) {
  Tensor<float> p({1}, {0.75f});
  Tensor<float> g({1});
  AdamState<float> st;
  adam_step<float>({&p}, {&g}, st);
  EXPECT_EQ(p[0], 0.75f);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientManyStepsBitIdentical) {
  std::mt19937_64 rng(4);
  Tensor<double> p = random_tensor({10}, rng);
  const Tensor<double> before = p;
  Tensor<double> g({10});
  AdamState<double> st;
  for (int i = 0; i < 100; ++i) adam_step<double>({&p}, {&g}, st);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 100u);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  // m_hat = g, v_hat = g^2 after one step, so the update is lr*g/(|g|+eps).
  Tensor<double> p({1}, {1.0});
  Tensor<double> g({1}, {10.0});
  AdamState<double> st;
  adam_step<double>({&p}, {&g}, st);
  EXPECT_NEAR(p[0], 1.0 - 0.001 * 10.0 / (10.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0], 0.999, 1e-9);
}

TEST(Adam, IdenticalInputsIdenticalUpdates) {
  Tensor<float> a({3}, {1, 2, 3}), b({3}, {1, 2, 3});
  Tensor<float> ga({3}, {0.1f, -2, 5}), gb({3}, {0.1f, -2, 5});
  AdamState<float> st;
  adam_step<float>({&a, &b}, {&ga, &gb}, st);
  EXPECT_EQ(a, b);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Tensor<float> p({2}, {1, 2});
  Tensor<float> g({2}, {0, std::nanf("")});
  AdamState<float> st;
  try {
    adam_step<float>({&p}, {&g}, st, {"head.0.weight"});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head.0.weight"), std::string::npos);
  }
  EXPECT_EQ(p[0], 1.0f);
  EXPECT_EQ(st.step, 0u);
}

TEST(GradCheck, KinkInsideProbeIsReportedNotScored) {
  // LeakyReLU at exactly 0: one-sided slopes 1 and 0.2.
  Var<double> x(Tensor<double>({1, 3}, std::vector<double>{0.0, 0.5, -0.7}), true);
  auto r = check_gradients<double>({{"x", x}}, [&] { return sum(leaky_relu(x, 0.2)); });
  EXPECT_EQ(r.checked, 3u);
  EXPECT_EQ(r.discontinuities, 1u);
  EXPECT_EQ(r.first_discontinuity, "x[0]");
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(gradient_rel_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gradient_rel_error(1.0, 2.0), 0.5);
  EXPECT_NEAR(gradient_rel_error(1e-9, 2e-9), 1e-3, 1e-15);
}
