#include "dsat/dsa_gate.hpp"

#include <cmath>
#include <ostream>

#include "dsat/error.hpp"

namespace dsat {

std::string to_string(GatePath path) {
  switch (path) {
    case GatePath::Alpha: return "alpha";
    case GatePath::Beta: return "beta";
    case GatePath::Eval: return "eval";
  }
  return "?";
}

Tensor pool_descriptor(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("pool_descriptor: expected N×C×H×W, got " + shape_str(x.shape()));
  return adaptive_avg_pool(x);
}

Tensor add_noise(const Tensor& d, const GateMode& mode, Rng& rng) {
  if (!mode.training || !mode.noise) return d;
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::vector<Real> eps(d.numel());
  for (auto& e : eps) e = normal(rng);
  return add(d, Tensor::from(d.shape(), std::move(eps)));
}

Real saturating_sigmoid(Real v) {
  const Real s = 1.2 / (1.0 + std::exp(-v)) - 0.1;
  return std::max(0.0, std::min(1.0, s));
}

Real saturating_sigmoid_grad(Real v) {
  const Real sig = 1.0 / (1.0 + std::exp(-v));
  const Real s = 1.2 * sig - 0.1;
  if (s < 0.0 || s > 1.0) return 0.0;
  return 1.2 * sig * (1.0 - sig);
}

Real binary_activation(Real v) { return v > 0.0 ? 1.0 : 0.0; }

std::vector<GatePath> select_paths(std::size_t samples, const GateMode& mode, Rng& rng) {
  std::vector<GatePath> paths(samples, GatePath::Eval);
  if (!mode.training) return paths;
  if (mode.pinned_path) {
    if (*mode.pinned_path == GatePath::Eval) throw ContractError("select_paths: cannot pin the eval path in training");
    std::fill(paths.begin(), paths.end(), *mode.pinned_path);
    return paths;
  }
  std::bernoulli_distribution coin(0.5);
  for (auto& p : paths) p = coin(rng) ? GatePath::Alpha : GatePath::Beta;
  return paths;
}

std::vector<GateDecision> select_gate(const Tensor& d_alpha, const Tensor& d_beta, const GateMode& mode, Rng& rng) {
  if (d_alpha.shape() != d_beta.shape() || d_alpha.rank() != 2) {
    throw ShapeError("select_gate: " + shape_str(d_alpha.shape()) + " vs " + shape_str(d_beta.shape()));
  }
  const std::size_t N = d_alpha.dim(0), C = d_alpha.dim(1);
  const auto paths = select_paths(N, mode, rng);
  std::vector<GateDecision> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const Tensor& src = paths[n] == GatePath::Alpha ? d_alpha : d_beta;
    out[n].gate.assign(src.data().begin() + n * C, src.data().begin() + (n + 1) * C);
    out[n].path = paths[n];
    out[n].noise_used = mode.training && mode.noise;
  }
  return out;
}

Tensor semhash_gate(const Tensor& d_prime, const std::vector<GatePath>& paths) {
  if (d_prime.rank() != 2 || d_prime.dim(0) != paths.size()) {
    throw ShapeError("semhash_gate: descriptor " + shape_str(d_prime.shape()) + " vs " +
                     std::to_string(paths.size()) + " paths");
  }
  const std::size_t N = d_prime.dim(0), C = d_prime.dim(1);
  Tensor out = detail::make_output(d_prime.shape(), {&d_prime});
  auto x = d_prime.data();
  auto y = out.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const Real v = x[n * C + c];
      y[n * C + c] = paths[n] == GatePath::Alpha ? saturating_sigmoid(v) : binary_activation(v);
    }
  // Straight-through: the hard path borrows the soft path's Jacobian.
  detail::attach(out, {d_prime}, [d_prime](const Tensor& o) {
    auto go = o.grad();
    auto x = d_prime.data();
    auto g = Tensor(d_prime).grad();
    for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * saturating_sigmoid_grad(x[i]);
  });
  return out;
}

Tensor apply_gate(const Tensor& x, const Tensor& gate) { return channel_scale(x, gate); }

Tensor apply_gate(const Tensor& x, const GateDecision& decision) {
  if (x.rank() != 4 || decision.gate.size() != x.dim(1)) {
    throw ShapeError("apply_gate: gate of length " + std::to_string(decision.gate.size()) + " for input " +
                     shape_str(x.shape()));
  }
  const std::size_t N = x.dim(0);
  std::vector<Real> g;
  g.reserve(N * decision.gate.size());
  for (std::size_t n = 0; n < N; ++n) g.insert(g.end(), decision.gate.begin(), decision.gate.end());
  return channel_scale(x, Tensor::from({N, decision.gate.size()}, std::move(g)));
}

Real activation_ratio(const GateDecision& decision) {
  if (decision.path == GatePath::Alpha) {
    throw ContractError("activation_ratio: undefined for a soft (alpha-path) gate");
  }
  if (decision.gate.empty()) throw ContractError("activation_ratio: empty gate");
  std::size_t on = 0;
  for (Real v : decision.gate) on += v == 1.0 ? 1 : 0;
  return static_cast<Real>(on) / static_cast<Real>(decision.gate.size());
}

GateOutput dsa_forward(const Tensor& x, const GateMode& mode, Rng& rng) {
  const Tensor d = pool_descriptor(x);
  const Tensor d_prime = add_noise(d, mode, rng);
  const auto paths = select_paths(x.dim(0), mode, rng);
  const Tensor gate = semhash_gate(d_prime, paths);

  GateOutput out{apply_gate(x, gate), {}};
  const std::size_t C = x.dim(1);
  auto g = gate.data();
  for (std::size_t n = 0; n < paths.size(); ++n) {
    GateDecision dec;
    dec.gate.assign(g.begin() + n * C, g.begin() + (n + 1) * C);
    dec.path = paths[n];
    dec.noise_used = mode.training && mode.noise;
    out.decisions.push_back(std::move(dec));
  }
  return out;
}

void write_gate_csv(std::ostream& os, const std::vector<GateStatRow>& rows) {
  os << "sample_id,dsa_index,ratio,C\n";
  for (const auto& r : rows) os << r.sample_id << ',' << r.dsa_index << ',' << r.ratio << ',' << r.channels << '\n';
}

}  // namespace dsat
