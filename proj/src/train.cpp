#include "dsat/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsat/error.hpp"

namespace dsat {

Real learning_rate(const TrainConfig& cfg, std::size_t iteration) {
  return cfg.lr * std::pow(0.5, static_cast<Real>(iteration / cfg.halve_every));
}

void Adam::step(const std::vector<Tensor>& params, Real lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
  ++t_;
  const Real c1 = 1.0 - std::pow(beta1_, static_cast<Real>(t_));
  const Real c2 = 1.0 - std::pow(beta2_, static_cast<Real>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

std::vector<Point> heatmap_landmarks(const SyntheticSample& s, const TrainConfig& cfg) {
  std::vector<Point> out;
  out.reserve(s.landmarks.size());
  for (const auto& p : s.landmarks)
    out.push_back({image_to_heatmap(p.x, cfg.image_size, cfg.heatmap_size),
                   image_to_heatmap(p.y, cfg.image_size, cfg.heatmap_size)});
  return out;
}

HeatmapSet make_targets(const std::vector<const SyntheticSample*>& batch, const TrainConfig& cfg) {
  const std::size_t h = cfg.heatmap_size;
  std::vector<Real> lm, bd;
  for (const SyntheticSample* s : batch) {
    const auto pts = heatmap_landmarks(*s, cfg);
    const Tensor l = render_landmark_heatmaps(pts, cfg.sigma_gt, h, h);
    const Tensor b = render_boundary_heatmaps(pts, synthetic_layout().boundaries, cfg.sigma_gt, h, h);
    lm.insert(lm.end(), l.data().begin(), l.data().end());
    bd.insert(bd.end(), b.data().begin(), b.data().end());
  }
  return {Tensor::from({batch.size(), cfg.landmarks, h, h}, std::move(lm)),
          Tensor::from({batch.size(), cfg.boundaries, h, h}, std::move(bd))};
}

ParameterSnapshot snapshot(const ParameterStore& store) {
  ParameterSnapshot snap;
  for (const auto& p : store.entries()) snap.emplace_back(p.value.data().begin(), p.value.data().end());
  return snap;
}

void restore(ParameterStore& store, const ParameterSnapshot& snap) {
  if (snap.size() != store.entries().size()) throw ContractError("restore: snapshot has a different parameter count");
  for (std::size_t i = 0; i < snap.size(); ++i) {
    Tensor target = store.entries()[i].value;
    auto dst = target.data();
    if (dst.size() != snap[i].size()) throw ContractError("restore: size mismatch for " + store.entries()[i].name);
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

TrainingAborted::TrainingAborted(std::size_t iteration, TrainResult partial)
    : NumericError("training aborted: non-finite loss at iteration " + std::to_string(iteration)),
      iteration_(iteration),
      partial_(std::move(partial)) {}

TrainResult train(DsatModel& model, const std::vector<SyntheticSample>& data, const TrainOptions& opts) {
  const TrainConfig& cfg = model.config();
  if (data.empty() && cfg.iterations > 0) throw ContractError("train: empty dataset");
  Rng data_rng(cfg.seed * 2 + 1);
  Rng model_rng(cfg.seed * 2 + 2);
  Adam adam(cfg.beta1, cfg.beta2, cfg.eps);
  const auto params = model.parameters().trainable();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  ForwardOptions fwd;
  fwd.training = true;
  fwd.gate.noise = cfg.gate_noise;

  TrainResult result;
  ParameterSnapshot last_good = snapshot(model.parameters());
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<SyntheticSample> batch;
    for (std::size_t k = 0; k < cfg.batch_size; ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), data_rng);
        cursor = 0;
      }
      const SyntheticSample& s = data[order[cursor++]];
      batch.push_back(cfg.augment ? augment(s, data_rng) : s);
    }
    std::vector<const SyntheticSample*> ptrs;
    std::vector<const Tensor*> images;
    for (const auto& s : batch) {
      ptrs.push_back(&s);
      images.push_back(&s.image);
    }
    const HeatmapSet targets = make_targets(ptrs, cfg);

    model.parameters().zero_grad();
    const ForwardResult out = model.forward(batch_images(images), fwd, model_rng);
    Tensor loss = stacked_loss(out.stacks, targets);
    const Real value = loss.item();
    if (!std::isfinite(value)) {
      restore(model.parameters(), last_good);
      throw TrainingAborted(it, std::move(result));
    }
    result.losses.push_back(value);
    loss.backward();
    last_good = snapshot(model.parameters());
    const Real lr = learning_rate(cfg, it);
    adam.step(params, lr);
    if (opts.on_iteration) opts.on_iteration(it, value, lr);
  }
  return result;
}

GradCheckReport check_model_gradients(const TrainConfig& cfg, Real eps, Real tol) {
  DsatModel model(cfg);
  Rng jitter(cfg.seed + 7);
  std::normal_distribution<Real> noise(0.0, 0.05);
  std::vector<Parameter> params;
  for (const auto& p : model.parameters().entries()) {
    if (!p.trainable) continue;
    Tensor t = p.value;
    for (auto& v : t.data()) v += noise(jitter);
    params.push_back(p);
  }

  const auto data = generate_dataset(cfg.batch_size, {1, 1, 1, 1}, cfg.seed, cfg.image_size);
  std::vector<const SyntheticSample*> ptrs;
  std::vector<const Tensor*> images;
  for (const auto& s : data) {
    ptrs.push_back(&s);
    images.push_back(&s.image);
  }
  const HeatmapSet targets = make_targets(ptrs, cfg);
  const Tensor batch = batch_images(images);

  ForwardOptions fwd;
  fwd.training = true;
  fwd.gate.noise = false;
  fwd.gate.pinned_path = GatePath::Alpha;
  return grad_check(
      [&] {
        Rng fixed(cfg.seed);
        return stacked_loss(model.forward(batch, fwd, fixed).stacks, targets);
      },
      params, eps, tol);
}

}  // namespace dsat
