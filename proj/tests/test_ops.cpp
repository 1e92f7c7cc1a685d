#include <gtest/gtest.h>

#include <cmath>

#include "dsat/error.hpp"
#include "dsat/ops.hpp"
#include "test_util.hpp"

using namespace dsat;
using dsat::testing::check_op;
using dsat::testing::random_tensor;
using dsat::testing::values;

namespace {

std::vector<Real> conv_oracle(const Tensor& x, const Tensor& w, std::size_t s, std::size_t p) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
  const std::size_t OH = (H + 2 * p - K) / s + 1, OW = (W + 2 * p - K) / s + 1;
  std::vector<Real> out(N * O * OH * OW, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          Real acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
                const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += x.at({n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)}) * w.at({o, c, ky, kx});
              }
          out[((n * O + o) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

std::vector<Real> conv_transpose_oracle(const Tensor& x, const Tensor& w, std::size_t s, std::size_t p) {
  const std::size_t N = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(1), K = w.dim(2);
  const std::size_t OH = (H - 1) * s + K - 2 * p, OW = (W - 1) * s + K - 2 * p;
  std::vector<Real> out(N * O * OH * OW, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          for (std::size_t o = 0; o < O; ++o)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long oy = static_cast<long>(y * s + ky) - static_cast<long>(p);
                const long ox = static_cast<long>(xx * s + kx) - static_cast<long>(p);
                if (oy < 0 || ox < 0 || oy >= static_cast<long>(OH) || ox >= static_cast<long>(OW)) continue;
                out[((n * O + o) * OH + static_cast<std::size_t>(oy)) * OW + static_cast<std::size_t>(ox)] +=
                    x.at({n, i, y, xx}) * w.at({i, o, ky, kx});
              }
  return out;
}

void expect_near_all(const std::vector<Real>& got, const std::vector<Real>& want, Real tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

}  // namespace

TEST(Conv2d, MatchesDirectSumAcrossStridesAndPadding) {
  Rng rng(1);
  for (std::size_t s : {1, 2})
    for (std::size_t p : {0, 1, 3})
      for (std::size_t k : {1, 3, 7}) {
        if (6 + 2 * p < k) continue;
        const Tensor x = random_tensor({2, 3, 7, 6}, rng);
        const Tensor w = random_tensor({4, 3, k, k}, rng);
        const Tensor y = conv2d(x, w, s, p);
        expect_near_all(values(y), conv_oracle(x, w, s, p), 1e-12);
      }
}

TEST(Conv2d, IdentityKernelReproducesInput) {
  Rng rng(2);
  const Tensor x = random_tensor({1, 2, 5, 5}, rng);
  Tensor w = Tensor::zeros({2, 2, 3, 3});
  w.data()[0 * 9 + 4] = 1.0;
  w.data()[3 * 9 + 4] = 1.0;
  EXPECT_EQ(values(conv2d(x, w, 1, 1)), values(x));
}

TEST(Conv2d, RejectsMismatchedChannelsAndEmptyOutput) {
  Rng rng(3);
  EXPECT_THROW(conv2d(random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 3, 3, 3}, rng), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(random_tensor({1, 1, 2, 2}, rng), random_tensor({1, 1, 5, 5}, rng), 1, 0), ConfigError);
}

TEST(ConvTranspose2d, MatchesScatterDefinition) {
  Rng rng(4);
  for (std::size_t s : {1, 2})
    for (std::size_t k : {2, 3, 4}) {
      const std::size_t p = k > 2 ? 1 : 0;
      const Tensor x = random_tensor({2, 3, 4, 5}, rng);
      const Tensor w = random_tensor({3, 2, k, k}, rng);
      const Tensor y = conv_transpose2d(x, w, s, p);
      EXPECT_EQ(y.dim(2), (4 - 1) * s + k - 2 * p);
      expect_near_all(values(y), conv_transpose_oracle(x, w, s, p), 1e-12);
    }
}

TEST(ConvTranspose2d, IsAdjointOfConv) {
  // <conv(x), y> == <x, convT(y)> with the kernel viewed as I×O.
  Rng rng(5);
  const Tensor x = random_tensor({1, 3, 7, 7}, rng);
  const Tensor w = random_tensor({2, 3, 3, 3}, rng);
  const Tensor cx = conv2d(x, w, 2, 1);
  const Tensor y = random_tensor(cx.shape(), rng);
  Real lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) lhs += cx.data()[i] * y.data()[i];
  const Tensor ty = conv_transpose2d(y, w, 2, 1);
  ASSERT_EQ(ty.dim(2), 7u);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t q = 0; q < 7; ++q) rhs += x.at({0, c, r, q}) * ty.at({0, c, r, q});
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Pooling, MaxAvgAndUpsampleFollowWindows) {
  const Tensor x = Tensor::from({1, 1, 2, 4}, {1, 5, 2, 2, 3, 0, 7, 2});
  EXPECT_EQ(values(max_pool2d(x, 2)), (std::vector<Real>{5, 7}));
  EXPECT_EQ(values(avg_pool2d(x, 2)), (std::vector<Real>{2.25, 3.25}));
  EXPECT_EQ(values(adaptive_avg_pool(x)), (std::vector<Real>{22.0 / 8.0}));
  const Tensor up = upsample_nearest(Tensor::from({1, 1, 1, 2}, {1, 2}), 2);
  EXPECT_EQ(up.shape(), (Shape{1, 1, 2, 4}));
  EXPECT_EQ(values(up), (std::vector<Real>{1, 1, 2, 2, 1, 1, 2, 2}));
  EXPECT_THROW(max_pool2d(Tensor::zeros({1, 1, 3, 4}), 2), ShapeError);
}

TEST(Pooling, MaxPoolGradientGoesToFirstMaximum) {
  Tensor x = Tensor::from({1, 1, 2, 2}, {3, 3, 1, 3}, true);
  Tensor y = sum(max_pool2d(x, 2));
  y.backward();
  EXPECT_EQ(std::vector<Real>(x.grad().begin(), x.grad().end()), (std::vector<Real>{1, 0, 0, 0}));
}

TEST(Tokens, RowMajorPixelOrderAndRoundTrip) {
  Rng rng(6);
  const Tensor x = random_tensor({2, 3, 2, 4}, rng);
  const Tensor t = nchw_to_tokens(x);
  ASSERT_EQ(t.shape(), (Shape{2, 8, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t q = 0; q < 4; ++q) EXPECT_EQ(t.at({n, y * 4 + q, c}), x.at({n, c, y, q}));
  EXPECT_EQ(values(tokens_to_nchw(t, 2, 4)), values(x));
}

TEST(BatchNorm, TrainingUsesBiasedBatchStatsAndUpdatesRunningAverages) {
  Rng rng(7);
  const Tensor x = random_tensor({3, 2, 2, 2}, rng);
  const Tensor gamma = Tensor::from({2}, {1.5, -0.5});
  const Tensor beta = Tensor::from({2}, {0.1, 0.2});
  BatchNormState st{Tensor::from({2}, {0.0, 1.0}), Tensor::from({2}, {1.0, 2.0})};
  const Tensor y = batch_norm2d(x, gamma, beta, st, true);
  for (std::size_t c = 0; c < 2; ++c) {
    Real m = 0.0, v = 0.0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < 4; ++k) m += x.at({n, c, k / 2, k % 2});
    m /= 12.0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < 4; ++k) v += std::pow(x.at({n, c, k / 2, k % 2}) - m, 2);
    v /= 12.0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < 4; ++k) {
        const Real want = (x.at({n, c, k / 2, k % 2}) - m) / std::sqrt(v + 1e-5) * gamma.data()[c] + beta.data()[c];
        EXPECT_NEAR(y.at({n, c, k / 2, k % 2}), want, 1e-12);
      }
    const Real old_mean = c == 0 ? 0.0 : 1.0, old_var = c == 0 ? 1.0 : 2.0;
    EXPECT_NEAR(st.running_mean.data()[c], 0.9 * old_mean + 0.1 * m, 1e-15);
    EXPECT_NEAR(st.running_var.data()[c], 0.9 * old_var + 0.1 * v, 1e-15);
  }
}

TEST(BatchNorm, EvalUsesRunningStatsAndLeavesThemAlone) {
  const Tensor x = Tensor::from({1, 1, 1, 2}, {1.0, 3.0});
  BatchNormState st{Tensor::from({1}, {1.0}), Tensor::from({1}, {4.0})};
  const Tensor y = batch_norm2d(x, Tensor::from({1}, {2.0}), Tensor::from({1}, {0.5}), st, false);
  EXPECT_NEAR(y.data()[0], 0.5, 1e-12);
  EXPECT_NEAR(y.data()[1], 2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 0.5, 1e-12);
  EXPECT_EQ(st.running_mean.data()[0], 1.0);
  EXPECT_EQ(st.running_var.data()[0], 4.0);
}

TEST(LayerNorm, NormalizesLastAxis) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, -1, 0, 4});
  const Tensor y = layer_norm(x, Tensor::full({3}, 1.0), Tensor::zeros({3}));
  for (std::size_t r = 0; r < 2; ++r) {
    Real m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 3; ++c) m += y.at({r, c});
    for (std::size_t c = 0; c < 3; ++c) v += y.at({r, c}) * y.at({r, c});
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 3.0, 1.0, 1e-4);
  }
}

TEST(Matmul, MatchesLoopsAndNamesShapesOnMismatch) {
  Rng rng(8);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      Real acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at({i, k}) * b.at({k, j});
      EXPECT_NEAR(c.at({i, j}), acc, 1e-14);
    }
  try {
    matmul(a, a);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[3,4]"), std::string::npos) << e.what();
  }
  const Tensor ba = random_tensor({2, 3, 4}, rng), bb = random_tensor({2, 4, 5}, rng);
  const Tensor bc = bmm(ba, bb);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        Real acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += ba.at({n, i, k}) * bb.at({n, k, j});
        EXPECT_NEAR(bc.at({n, i, j}), acc, 1e-14);
      }
  const Tensor t = transpose12(ba);
  EXPECT_EQ(t.at({1, 3, 2}), ba.at({1, 2, 3}));
}

TEST(Shapes, ConcatSliceAndBias) {
  const Tensor a = Tensor::from({2, 1}, {1, 2}), b = Tensor::from({2, 2}, {3, 4, 5, 6});
  const Tensor c = concat_last({a, b});
  EXPECT_EQ(values(c), (std::vector<Real>{1, 3, 4, 2, 5, 6}));
  EXPECT_EQ(values(slice_last(c, 1, 2)), values(b));
  EXPECT_EQ(values(add_bias(b, Tensor::from({2}, {10, 20}))), (std::vector<Real>{13, 24, 15, 26}));
  EXPECT_THROW(reshape(b, {3}), ShapeError);
}

TEST(Dropout, IdentityInEvalAndScaledInTraining) {
  Rng rng(9);
  const Tensor x = Tensor::full({1000}, 1.0);
  EXPECT_EQ(values(dropout(x, 0.1, false, rng)), values(x));
  const Tensor y = dropout(x, 0.25, true, rng);
  std::size_t zeros = 0;
  for (Real v : y.data()) {
    if (v == 0.0) ++zeros;
    else EXPECT_NEAR(v, 1.0 / 0.75, 1e-15);
  }
  EXPECT_GT(zeros, 180u);
  EXPECT_LT(zeros, 320u);
}

TEST(Relu, DerivativeAtZeroIsZero) {
  Tensor x = Tensor::from({3}, {-1.0, 0.0, 2.0}, true);
  Tensor y = sum(relu(x));
  y.backward();
  EXPECT_EQ(std::vector<Real>(x.grad().begin(), x.grad().end()), (std::vector<Real>{0.0, 0.0, 1.0}));
}

// Every differentiable primitive against central differences on small shapes.
TEST(OpGradients, CentralDifferencesAgree) {
  Rng rng(10);
  auto expect_ok = [](const GradCheckReport& r, const char* what) {
    EXPECT_LT(r.max_rel_error, 1e-4) << what << ": worst " << r.worst.name << "[" << r.worst.index
                                     << "] analytic " << r.worst.analytic << " numeric " << r.worst.numeric;
  };
  Tensor a = random_tensor({2, 3}, rng, true), b = random_tensor({2, 3}, rng, true);
  expect_ok(check_op([&] { return add(a, b); }, {a, b}), "add");
  expect_ok(check_op([&] { return sub(a, b); }, {a, b}), "sub");
  expect_ok(check_op([&] { return mul(a, b); }, {a, b}), "mul");
  expect_ok(check_op([&] { return scale(a, -1.7); }, {a}), "scale");
  expect_ok(check_op([&] { return sigmoid(a); }, {a}), "sigmoid");
  expect_ok(check_op([&] { return relu(a); }, {a}), "relu");
  expect_ok(check_op([&] { return mean(mul(a, a)); }, {a}), "mean");
  expect_ok(check_op([&] { return mse_loss(a, b); }, {a, b}), "mse");

  Tensor m1 = random_tensor({3, 4}, rng, true), m2 = random_tensor({4, 2}, rng, true);
  expect_ok(check_op([&] { return matmul(m1, m2); }, {m1, m2}), "matmul");
  expect_ok(check_op([&] { return transpose(m1); }, {m1}), "transpose");
  Tensor b1 = random_tensor({2, 2, 3}, rng, true), b2 = random_tensor({2, 3, 2}, rng, true);
  expect_ok(check_op([&] { return bmm(b1, b2); }, {b1, b2}), "bmm");
  expect_ok(check_op([&] { return transpose12(b1); }, {b1}), "transpose12");
  expect_ok(check_op([&] { return reshape(b1, {3, 4}); }, {b1}), "reshape");
  expect_ok(check_op([&] { return concat_last({b1, b1, transpose12(b2)}); }, {b1, b2}), "concat");
  expect_ok(check_op([&] { return slice_last(b1, 1, 2); }, {b1}), "slice");
  Tensor bias = random_tensor({3}, rng, true);
  expect_ok(check_op([&] { return add_bias(b1, bias); }, {b1, bias}), "add_bias");

  Tensor x = random_tensor({2, 2, 4, 4}, rng, true), w = random_tensor({3, 2, 3, 3}, rng, true);
  expect_ok(check_op([&] { return conv2d(x, w, 2, 1); }, {x, w}), "conv2d");
  Tensor wt = random_tensor({2, 3, 2, 2}, rng, true);
  expect_ok(check_op([&] { return conv_transpose2d(x, wt, 2, 0); }, {x, wt}), "conv_transpose2d");
  Tensor g = random_tensor({2}, rng, true), be = random_tensor({2}, rng, true);
  BatchNormState st{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
  expect_ok(check_op([&] { return batch_norm2d(x, g, be, st, true); }, {x, g, be}), "batch_norm train");
  expect_ok(check_op([&] { return batch_norm2d(x, g, be, st, false); }, {x, g, be}), "batch_norm eval");
  Tensor lg = random_tensor({3}, rng, true), lb = random_tensor({3}, rng, true);
  expect_ok(check_op([&] { return layer_norm(b1, lg, lb); }, {b1, lg, lb}), "layer_norm");
  expect_ok(check_op([&] { return max_pool2d(x, 2); }, {x}), "max_pool");
  expect_ok(check_op([&] { return avg_pool2d(x, 2); }, {x}), "avg_pool");
  expect_ok(check_op([&] { return adaptive_avg_pool(x); }, {x}), "adaptive_avg_pool");
  expect_ok(check_op([&] { return upsample_nearest(x, 2); }, {x}), "upsample");
  Tensor gate = random_tensor({2, 2}, rng, true);
  expect_ok(check_op([&] { return channel_scale(x, gate); }, {x, gate}), "channel_scale");
  expect_ok(check_op([&] { return nchw_to_tokens(x); }, {x}), "nchw_to_tokens");
  Tensor tok = random_tensor({2, 4, 3}, rng, true);
  expect_ok(check_op([&] { return tokens_to_nchw(tok, 2, 2); }, {tok}), "tokens_to_nchw");
  expect_ok(check_op([&] {
              Rng fixed(3);
              return dropout(tok, 0.3, true, fixed);
            },
            {tok}),
            "dropout");
}

TEST(Autograd, SharedInputAccumulatesAndNoGradSkipsGraph) {
  Tensor x = Tensor::from({1}, {3.0}, true);
  Tensor y = add(mul(x, x), x);
  y = sum(y);
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
  Tensor detached;
  {
    NoGradGuard guard;
    detached = sum(mul(x, x));
  }
  EXPECT_FALSE(detached.requires_grad());
  EXPECT_THROW(detached.backward(), ContractError);
}

TEST(Tensor, RejectsEmptyShapes) {
  EXPECT_THROW(Tensor::zeros({}), ShapeError);
  EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
  EXPECT_THROW(Tensor::from({2}, {1.0}), ShapeError);
}
