#include <gtest/gtest.h>

#include <cmath>

#include "dsat/cca.hpp"
#include "dsat/error.hpp"
#include "test_util.hpp"

using namespace dsat;
using dsat::testing::check_op;
using dsat::testing::random_tensor;
using dsat::testing::values;

namespace {

// out[n,s,i] = (1/heads) Σ_h Σ_j σ(Σ_r q[n,r,hd+i]·k[n,r,hd+j] / 2√C) · v[n,s,hd+j]
std::vector<Real> attention_loops(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                  std::size_t channels) {
  const std::size_t N = q.dim(0), S = q.dim(1), d = q.dim(2) / heads;
  const Real temp = 2.0 * std::sqrt(static_cast<Real>(channels));
  std::vector<Real> out(N * S * d, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          Real logit = 0.0;
          for (std::size_t r = 0; r < S; ++r) logit += q.at({n, r, h * d + i}) * k.at({n, r, h * d + j});
          const Real a = 1.0 / (1.0 + std::exp(-logit / temp));
          for (std::size_t s = 0; s < S; ++s) out[(n * S + s) * d + i] += a * v.at({n, s, h * d + j}) / heads;
        }
  return out;
}

PyramidFeatures random_pyramid(std::size_t N, std::size_t C, std::size_t H, std::size_t W, Rng& rng) {
  PyramidFeatures y;
  for (std::size_t t = 0; t < kScales; ++t) y.scales[t] = random_tensor({N, C, H >> t, W >> t}, rng);
  return y;
}

}  // namespace

TEST(CrossChannelAttention, MatchesLoopOracle) {
  Rng rng(4);
  for (std::size_t heads : {1u, 2u, 4u}) {
    const Tensor q = random_tensor({2, 3, heads * 3}, rng);
    const Tensor k = random_tensor({2, 3, heads * 3}, rng);
    const Tensor v = random_tensor({2, 3, heads * 3}, rng);
    const auto got = values(cross_channel_attention(q, k, v, heads, 8));
    const auto want = attention_loops(q, k, v, heads, 8);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(CrossChannelAttention, ScoresAreSigmoidNotSoftmax) {
  // With zero queries every score is σ(0) = 1/2, so each output channel is
  // half the sum of the head's value channels.
  const Tensor q = Tensor::zeros({1, 1, 2});
  const Tensor k = Tensor::from({1, 1, 2}, {1, 1});
  const Tensor v = Tensor::from({1, 1, 2}, {2, 4});
  EXPECT_EQ(values(cross_channel_attention(q, k, v, 1, 4)), (std::vector<Real>{3, 3}));
}

TEST(CrossChannelAttention, RejectsBadShapes) {
  const Tensor a = Tensor::zeros({1, 2, 6});
  EXPECT_THROW(cross_channel_attention(a, Tensor::zeros({1, 2, 4}), a, 2, 4), ShapeError);
  EXPECT_THROW(cross_channel_attention(a, a, a, 4, 4), ShapeError);
}

TEST(CrossChannelAttention, GradientsMatchFiniteDifference) {
  Rng rng(9);
  Tensor q = random_tensor({1, 2, 4}, rng, true), k = random_tensor({1, 2, 4}, rng, true),
         v = random_tensor({1, 2, 4}, rng, true);
  const auto r = check_op([&] { return cross_channel_attention(q, k, v, 2, 4); }, {q, k, v});
  EXPECT_TRUE(r.passed()) << r.worst.name << " " << r.max_rel_error;
}

TEST(ConcatScales, ChannelOrderAndLengthCheck) {
  std::array<Tensor, kScales> z;
  for (std::size_t t = 0; t < kScales; ++t) z[t] = Tensor::full({1, 1, 2}, static_cast<Real>(t));
  EXPECT_EQ(values(concat_scales(z)), (std::vector<Real>{0, 0, 1, 1, 2, 2, 3, 3}));
  z[2] = Tensor::zeros({1, 2, 2});
  EXPECT_THROW(concat_scales(z), ShapeError);
}

TEST(Tokenize, ShapesAndPositionalEmbedding) {
  Rng rng(1);
  ParameterStore store;
  CcaConfig cfg;
  cfg.dropout = 0.0;
  CrossChannelAttention cca(store, "cca", 4, 16, 16, cfg, rng);
  const auto y = random_pyramid(2, 4, 16, 16, rng);
  const auto z = cca.tokenize(y, false, rng);
  for (const auto& t : z) EXPECT_EQ(t.shape(), (Shape{2, 4, 4}));
  EXPECT_EQ(token_count(16, 16), 4u);

  std::fill(cca.pos_embed[1].data().begin(), cca.pos_embed[1].data().end(), 1.0);
  const auto shifted = cca.tokenize(y, false, rng);
  for (std::size_t i = 0; i < z[1].numel(); ++i) EXPECT_NEAR(shifted[1].at(i), z[1].at(i) + 1.0, 1e-12);
}

TEST(CcaBlock, KeysAndValuesSeeEveryScale) {
  Rng rng(6);
  ParameterStore store;
  CcaBlock block(store, "b", 4, CcaConfig{}, rng);
  std::array<Tensor, kScales> z;
  for (auto& t : z) t = random_tensor({1, 2, 4}, rng);
  const auto before = block(z);
  z[3].data()[0] += 0.5;
  const auto after = block(z);
  // Scale 0 only reaches scale 3 through K and V.
  EXPECT_NE(values(before[0]), values(after[0]));
}

TEST(CcaBlock, MlpResidualFormula) {
  Rng rng(6);
  ParameterStore store;
  CcaBlock block(store, "b", 4, CcaConfig{}, rng);
  const Tensor z = random_tensor({1, 2, 4}, rng), q = random_tensor({1, 2, 4}, rng);
  const auto got = values(block.mlp_residual(z, q));
  const auto want = values(add(z, block.fc2(relu(block.fc1(block.ln_mlp(add(z, q)))))));
  EXPECT_EQ(got, want);
}

TEST(CrossChannelAttentionModule, ZeroResidualPathsIsIdentity) {
  Rng rng(12);
  ParameterStore store;
  CrossChannelAttention cca(store, "cca", 4, 8, 8, CcaConfig{}, rng);
  cca.zero_residual_paths();
  const auto y = random_pyramid(2, 4, 8, 8, rng);
  for (bool training : {false, true}) {
    const auto d = cca(y, training, rng);
    for (std::size_t t = 0; t < kScales; ++t) EXPECT_EQ(values(d[t]), values(y.scales[t]));
  }
}

TEST(CrossChannelAttentionModule, ConfigErrors) {
  Rng rng(0);
  ParameterStore store;
  EXPECT_THROW(CrossChannelAttention(store, "a", 4, 12, 16, CcaConfig{}, rng), ConfigError);
  CcaConfig bad;
  bad.heads = 8;
  EXPECT_THROW(CrossChannelAttention(store, "b", 4, 16, 16, bad, rng), ConfigError);
  bad = CcaConfig{};
  bad.depth = 0;
  EXPECT_THROW(CrossChannelAttention(store, "c", 4, 16, 16, bad, rng), ConfigError);
}

TEST(CrossChannelAttentionModule, GradientsReachEveryParameter) {
  Rng rng(3);
  ParameterStore store;
  CcaConfig cfg;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  CrossChannelAttention cca(store, "cca", 4, 16, 16, cfg, rng);
  for (const auto& p : store.entries())
    if (p.trainable) {
      Tensor t = p.value;
      for (auto& v : t.data()) v += 0.1 * std::normal_distribution<Real>()(rng);
    }
  const auto y = random_pyramid(2, 4, 16, 16, rng);
  std::vector<Parameter> params;
  for (const auto& p : store.entries())
    if (p.trainable) params.push_back(p);
  // Running-statistics normalization: batch statistics would cancel the
  // constant offset fc2.bias adds, leaving it a zero gradient.
  const auto report = grad_check(
      [&] {
        const auto d = cca(y, false, rng);
        Tensor total = dsat::testing::weighted_sum(d[0], 1);
        for (std::size_t t = 1; t < kScales; ++t) total = add(total, dsat::testing::weighted_sum(d[t], t + 1));
        return total;
      },
      params, 1e-6, 1e-4);
  EXPECT_TRUE(report.passed()) << report.worst.name << "[" << report.worst.index << "] " << report.max_rel_error;
}
