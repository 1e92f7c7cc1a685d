#pragma once

#include <random>
#include <vector>

#include "dsat/tensor.hpp"

namespace dsat {

using Rng = std::mt19937_64;

// Elementwise arithmetic on identically shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean squared error; the target may or may not require grad.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

/// Rank-2 matrix product. Throws ShapeError naming both shapes on mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Batched product of [B,M,K] and [B,K,N].
Tensor bmm(const Tensor& a, const Tensor& b);
/// Swaps the last two axes of a rank-3 tensor.
Tensor transpose12(const Tensor& a);

Tensor reshape(const Tensor& a, const Shape& shape);
/// Concatenates along the last axis; all leading extents must agree.
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& a, std::size_t start, std::size_t length);
/// x[..., D] + b[D]
Tensor add_bias(const Tensor& x, const Tensor& b);

/// Cross-correlation. x: N×C×H×W, w: O×C×K×K.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding);
/// Adjoint of conv2d. x: N×I×H×W, w: I×O×K×K, output extent (H-1)·stride − 2·padding + K.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding);

struct BatchNormState {
  Tensor running_mean;  // C
  Tensor running_var;   // C
  Real momentum = 0.9;  // weight on the previous running value
  Real eps = 1e-5;
};

/// Per-channel normalization over N, H, W. Training mode normalizes with the
/// batch statistics and folds them into the running averages; eval mode
/// uses the running averages.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                    bool training);
/// Normalization over the last axis with affine gamma/beta of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);

/// k×k windows, stride k.
Tensor max_pool2d(const Tensor& x, std::size_t k);
Tensor avg_pool2d(const Tensor& x, std::size_t k);
/// Global mean over H×W: N×C×H×W → N×C.
Tensor adaptive_avg_pool(const Tensor& x);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

/// Inverted dropout; identity when not training or rate == 0.
Tensor dropout(const Tensor& x, Real rate, bool training, Rng& rng);

/// x[n,c,:,:] * g[n,c]
Tensor channel_scale(const Tensor& x, const Tensor& g);

/// N×C×H×W → N×(H·W)×C, tokens in row-major pixel order.
Tensor nchw_to_tokens(const Tensor& x);
/// N×(H·W)×C → N×C×H×W.
Tensor tokens_to_nchw(const Tensor& tokens, std::size_t height, std::size_t width);

namespace detail {

/// Creates an output tensor that requires grad iff recording is on and any
/// input requires grad.
Tensor make_output(const Shape& shape, std::initializer_list<const Tensor*> inputs);
/// Attaches a backward closure when the output participates in the graph.
void attach(Tensor& out, std::vector<Tensor> inputs, std::function<void(const Tensor&)> fn);

// C[M×N] += A[M×K]·B[K×N]
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C);
// C[M×N] += A[M×K]·B[N×K]ᵀ
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C);
// C[M×N] += A[K×M]ᵀ·B[K×N]
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const Real* A, const Real* B, Real* C);

}  // namespace detail

}  // namespace dsat
