#include "dsat/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dsat/binary_io.hpp"
#include "dsat/error.hpp"

namespace dsat {

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::InterOcular: return "inter-ocular";
    case NormKind::InterPupil: return "inter-pupil";
    case NormKind::Diagonal: return "diagonal";
  }
  return "?";
}

NormKind parse_norm_kind(const std::string& text) {
  if (text == "inter-ocular") return NormKind::InterOcular;
  if (text == "inter-pupil") return NormKind::InterPupil;
  if (text == "diagonal") return NormKind::Diagonal;
  throw ConfigError("unknown normalization kind: " + text);
}

Tensor render_landmark_heatmaps(const std::vector<Point>& points, Real sigma, std::size_t height, std::size_t width,
                                std::size_t* clamped) {
  if (sigma <= 0.0) throw ContractError("render_landmark_heatmaps: sigma must be positive");
  if (points.empty()) throw ContractError("render_landmark_heatmaps: no landmarks");
  const std::size_t L = points.size(), HW = height * width;
  Tensor maps = Tensor::zeros({L, height, width});
  auto out = maps.data();
  const Real denom = 2.0 * sigma * sigma;
  for (std::size_t i = 0; i < L; ++i) {
    Point p = points[i];
    const Point q{std::clamp(p.x, 0.0, static_cast<Real>(width - 1)), std::clamp(p.y, 0.0, static_cast<Real>(height - 1))};
    if (q != p && clamped) ++*clamped;
    p = q;
    Real peak = 0.0;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const Real dx = static_cast<Real>(x) - p.x, dy = static_cast<Real>(y) - p.y;
        const Real v = std::exp(-(dx * dx + dy * dy) / denom);
        out[i * HW + y * width + x] = v;
        peak = std::max(peak, v);
      }
    for (std::size_t k = 0; k < HW; ++k) out[i * HW + k] /= peak;
  }
  return maps;
}

Real point_segment_distance(Point p, Point a, Point b) {
  const Real vx = b.x - a.x, vy = b.y - a.y;
  const Real len2 = vx * vx + vy * vy;
  Real t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / len2, 0.0, 1.0);
  const Real cx = a.x + t * vx - p.x, cy = a.y + t * vy - p.y;
  return std::sqrt(cx * cx + cy * cy);
}

Tensor render_boundary_heatmaps(const std::vector<Point>& points, const BoundaryTopology& topology, Real sigma,
                                std::size_t height, std::size_t width) {
  if (sigma <= 0.0) throw ContractError("render_boundary_heatmaps: sigma must be positive");
  if (topology.chains.empty()) throw ConfigError("render_boundary_heatmaps: no boundaries configured");
  for (const auto& chain : topology.chains) {
    if (chain.size() < 2) throw ConfigError("render_boundary_heatmaps: a boundary chain needs at least 2 points");
    for (auto idx : chain)
      if (idx >= points.size()) throw ConfigError("render_boundary_heatmaps: chain index out of range");
  }
  const std::size_t B = topology.chains.size(), HW = height * width;
  Tensor maps = Tensor::zeros({B, height, width});
  auto out = maps.data();
  const Real denom = 2.0 * sigma * sigma;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& chain = topology.chains[b];
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const Point p{static_cast<Real>(x), static_cast<Real>(y)};
        Real dist = std::numeric_limits<Real>::infinity();
        for (std::size_t k = 0; k + 1 < chain.size(); ++k)
          dist = std::min(dist, point_segment_distance(p, points[chain[k]], points[chain[k + 1]]));
        out[b * HW + y * width + x] = std::exp(-dist * dist / denom);
      }
  }
  return maps;
}

PredictionHeads::PredictionHeads(ParameterStore& store, const std::string& name, std::size_t channels,
                                 std::size_t trunk_channels, std::size_t landmarks, std::size_t boundaries, Rng& rng)
    : upsample(store, name + ".up", channels, trunk_channels, 2, 2, 0, rng),
      norm(store, name + ".bn", trunk_channels),
      landmark_head(store, name + ".landmark", trunk_channels, landmarks, 1, 1, 0, rng),
      boundary_head(store, name + ".boundary", trunk_channels, boundaries, 1, 1, 0, rng) {
  // Targets are mostly zero; starting from an all-zero prediction keeps the
  // sparse landmark maps from being swamped while random outputs decay.
  std::fill(landmark_head.weight.data().begin(), landmark_head.weight.data().end(), 0.0);
  std::fill(boundary_head.weight.data().begin(), boundary_head.weight.data().end(), 0.0);
}

HeatmapSet PredictionHeads::operator()(const Tensor& features, bool training) {
  const Tensor trunk = relu(norm(upsample(features), training));
  return {landmark_head(trunk), boundary_head(trunk)};
}

Tensor l2_loss(const HeatmapSet& pred, const HeatmapSet& gt) {
  return add(mse_loss(pred.landmark, gt.landmark), mse_loss(pred.boundary, gt.boundary));
}

Tensor stacked_loss(const std::vector<HeatmapSet>& preds, const HeatmapSet& gt) {
  if (preds.empty()) throw ContractError("stacked_loss: no predictions");
  Tensor total = l2_loss(preds[0], gt);
  for (std::size_t i = 1; i < preds.size(); ++i) total = add(total, l2_loss(preds[i], gt));
  return total;
}

void export_heatmaps(std::ostream& os, const Tensor& maps) {
  if (maps.rank() != 4) throw ShapeError("export_heatmaps: expected N×C×H×W, got " + shape_str(maps.shape()));
  for (std::size_t a = 0; a < 4; ++a) io::write_i32(os, static_cast<std::int32_t>(maps.dim(a)));
  for (Real v : maps.data()) io::write_f32(os, static_cast<float>(v));
}

Tensor import_heatmaps(std::istream& is) {
  Shape shape(4);
  for (auto& e : shape) {
    const auto v = io::read_i32(is);
    if (v <= 0) throw Error("import_heatmaps: non-positive extent in header");
    e = static_cast<std::size_t>(v);
  }
  std::vector<Real> values(shape_numel(shape));
  for (auto& v : values) v = io::read_f32(is);
  return Tensor::from(shape, std::move(values));
}

}  // namespace dsat
