#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dsat/ops.hpp"
#include "dsat/tensor.hpp"

namespace dsat {

// Dynamic channel gate: a pooled channel descriptor, binarized with the
// improved semantic-hashing trick, masks the input channels per sample.
//
// Training: d' = d + N(0,1) noise; each sample independently takes the soft
// path (saturating sigmoid) or the hard path (d' > 0) with probability 1/2.
// The hard path is differentiated as if it were the soft one. Evaluation:
// no noise, always the hard path.

enum class GatePath { Alpha, Beta, Eval };

std::string to_string(GatePath path);

struct GateDecision {
  std::vector<Real> gate;  // one entry per channel, in [0, 1]
  GatePath path = GatePath::Eval;
  bool noise_used = false;
};

struct GateMode {
  bool training = false;
  bool noise = true;                     // only consulted while training
  std::optional<GatePath> pinned_path;   // forces alpha or beta while training
};

/// d = per-sample channel mean, N×C×H×W → N×C.
Tensor pool_descriptor(const Tensor& x);
/// d' = d + ε with ε ~ N(0,1) per entry while training with noise on; d otherwise.
Tensor add_noise(const Tensor& d, const GateMode& mode, Rng& rng);

/// max(0, min(1, 1.2·σ(v) − 0.1))
Real saturating_sigmoid(Real v);
/// 1.2·σ'(v) where the unclamped value lies in [0, 1], 0 outside.
Real saturating_sigmoid_grad(Real v);
/// 1 if v > 0 else 0.
Real binary_activation(Real v);

/// Per-sample path draw: Eval for every sample outside training, otherwise
/// the pinned path or a fair coin between Alpha and Beta.
std::vector<GatePath> select_paths(std::size_t samples, const GateMode& mode, Rng& rng);

/// Value-level selection between precomputed soft and hard gates (N×C each).
std::vector<GateDecision> select_gate(const Tensor& d_alpha, const Tensor& d_beta, const GateMode& mode, Rng& rng);

/// Differentiable gate d'' from d' (N×C). Row n is sat_sig(d') on the Alpha
/// path and bin_act(d') otherwise; the backward pass always uses sat_sig'.
Tensor semhash_gate(const Tensor& d_prime, const std::vector<GatePath>& paths);

/// x[n,c] scaled by gate[n,c]. Gradients flow into both operands.
Tensor apply_gate(const Tensor& x, const Tensor& gate);
/// Applies one decision to every sample of x.
Tensor apply_gate(const Tensor& x, const GateDecision& decision);

/// Fraction of channels switched on. Throws ContractError on soft gates.
Real activation_ratio(const GateDecision& decision);

struct GateOutput {
  Tensor output;                        // X'
  std::vector<GateDecision> decisions;  // one per sample
};

/// Full gate: pool → noise → semhash → mask.
GateOutput dsa_forward(const Tensor& x, const GateMode& mode, Rng& rng);

struct GateStatRow {
  std::string sample_id;
  std::size_t dsa_index = 0;
  Real ratio = 0.0;
  std::size_t channels = 0;
};

/// CSV with header `sample_id,dsa_index,ratio,C`.
void write_gate_csv(std::ostream& os, const std::vector<GateStatRow>& rows);

}  // namespace dsat
