#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fatnet/aggregation.hpp"
#include "fatnet/gradcheck.hpp"
#include "support.hpp"

using namespace fatnet;
using fatnet::testing::permute_rows;
using fatnet::testing::random_tensor;
using fatnet::testing::randomize;

namespace {

template <typename T>
Tensor<T> column_max(const Tensor<T>& x) {
  Tensor<T> out({x.cols()}, -std::numeric_limits<T>::infinity());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] = std::max(out[c], x.at(r, c));
  return out;
}

template <typename T>
Tensor<T> column_mean(const Tensor<T>& x) {
  Tensor<T> out({x.cols()});
  for (std::size_t c = 0; c < x.cols(); ++c) {
    std::vector<T> col;
    for (std::size_t r = 0; r < x.rows(); ++r) col.push_back(x.at(r, c));
    out[c] = detail::order_free_sum(col) / T(x.rows());
  }
  return out;
}

}  // namespace

TEST(Gfa, ConstantEmbedding) {
  GfaBlock<float> block(16, Aggregation::kGfa);
  init_module(block, 1);
  std::mt19937_64 rng(1);
  auto c = random_tensor<float>({1, 16}, rng);
  Tensor<float> emb({8, 16});
  for (std::size_t r = 0; r < 8; ++r) std::copy_n(c.raw(), 16, emb.raw() + r * 16);
  auto w = block.attention().gates(Var<float>(c)).value();
  auto out = gfa(emb, block);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_FLOAT_EQ(out[j], c[j] * w[j] + c[j] * w[j]);
}

TEST(Gfa, ZeroEncoderGivesHalfMaxPlusMean) {
  GfaBlock<float> block(24, Aggregation::kGfa);
  EXPECT_EQ(block.attention().hidden(), 2u);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    auto emb = random_tensor<float>({13, 24}, rng, -3, 3);
    auto out = gfa(emb, block);
    auto m = column_max(emb), a = column_mean(emb);
    for (std::size_t j = 0; j < 24; ++j) EXPECT_EQ(out[j], 0.5f * (m[j] + a[j]));
  }
}

TEST(Gfa, ForcedGatesReproducePlainMaxPool) {
  GfaBlock<float> block(16, Aggregation::kGfa);
  init_module(block, 3);
  block.forced_gates = std::pair<float, float>{1.0f, 0.0f};
  GfaBlock<float> mp(16, Aggregation::kMaxPool);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    auto emb = random_tensor<float>({9, 16}, rng);
    EXPECT_EQ(gfa(emb, block), gfa(emb, mp));
    EXPECT_EQ(gfa(emb, mp), column_max(emb));
  }
}

TEST(Gfa, ExactPermutationInvariance) {
  GfaBlock<float> block(16, Aggregation::kGfa);
  init_module(block, 4);
  randomize(block, 4);
  std::mt19937_64 rng(4);
  auto emb = random_tensor<float>({37, 16}, rng, -5, 5);
  const auto base = gfa(emb, block);
  std::vector<std::size_t> perm(37);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 50; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_EQ(gfa(permute_rows(emb, perm), block), base);
  }
}

TEST(Gfa, BatchedCloudsAreIndependent) {
  GfaBlock<float> block(8, Aggregation::kGfa);
  init_module(block, 5);
  std::mt19937_64 rng(5);
  auto emb = random_tensor<float>({12, 8}, rng);
  NoGradGuard guard;
  auto joint = block.forward(Var<float>(emb), 3).value();
  ASSERT_EQ(joint.shape(), (Shape{3, 8}));
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor<float> part({4, 8}, std::vector<float>(emb.raw() + b * 32, emb.raw() + b * 32 + 32));
    auto single = gfa(part, block);
    EXPECT_TRUE(std::equal(single.raw(), single.raw() + 8, joint.raw() + b * 8));
  }
}

TEST(Gfa, GradientCheck) {
  GfaBlock<double> block(12, Aggregation::kGfa);
  init_module(block, 6);
  randomize(block, 6);
  std::mt19937_64 rng(6);
  Var<double> emb(random_tensor<double>({10, 12}, rng), true);
  auto params = fatnet::testing::param_vars(block);
  params.emplace_back("embedding", emb);
  auto result = check_gradients<double>(params, [&] {
    return fatnet::testing::weighted_sum(block.forward(emb, 2), 8);
  });
  EXPECT_LT(result.max_rel_error, 1e-4)
      << result.worst_name << "[" << result.worst_index << "] analytic "
      << result.worst_analytic << " numeric " << result.worst_numeric;
}

TEST(Gfa, AblationModesGradientCheck) {
  for (auto mode : {Aggregation::kConcatAttention, Aggregation::kMaxPoolAttention}) {
    GfaBlock<double> block(8, mode);
    init_module(block, 7);
    randomize(block, 7);
    std::mt19937_64 rng(7);
    Var<double> emb(random_tensor<double>({6, 8}, rng), true);
    auto params = fatnet::testing::param_vars(block);
    params.emplace_back("embedding", emb);
    auto result = check_gradients<double>(params, [&] {
      return fatnet::testing::weighted_sum(block.forward(emb, 1), 9);
    });
    EXPECT_LT(result.max_rel_error, 1e-4) << to_string(mode);
  }
}

TEST(AggregateAblation, MaxPoolExample) {
  Tensor<float> emb({2, 2}, {1, 5, 3, 2});
  AttentionBlock<float> unused;
  EXPECT_EQ(aggregate_ablation(emb, "mp", unused), Tensor<float>({2}, {3, 5}));
}

TEST(AggregateAblation, ConcatWidthAndZeroWeightMpa) {
  AttentionBlock<float> zero(6, kGfaRatio);
  std::mt19937_64 rng(8);
  auto emb = random_tensor<float>({5, 6}, rng);
  EXPECT_EQ(aggregate_ablation(emb, "ca", zero).size(), 12u);
  auto mpa = aggregate_ablation(emb, "mpa", zero);
  auto m = column_max(emb);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(mpa[j], 0.5f * m[j]);
}

TEST(AggregateAblation, UnknownModeAndWidthMismatch) {
  AttentionBlock<float> block(4, kGfaRatio);
  Tensor<float> emb({3, 4});
  EXPECT_THROW(aggregate_ablation(emb, "sum", block), InvalidArgument);
  EXPECT_THROW(aggregate_ablation(Tensor<float>({3, 5}), "gfa", block), DimensionError);
}

TEST(AggregationNames, RoundTrip) {
  for (auto a : {Aggregation::kGfa, Aggregation::kMaxPool, Aggregation::kConcatAttention,
                 Aggregation::kMaxPoolAttention})
    EXPECT_EQ(parse_aggregation(to_string(a)), a);
  EXPECT_EQ(parse_aggregation("max-only"), Aggregation::kMaxPool);
}
