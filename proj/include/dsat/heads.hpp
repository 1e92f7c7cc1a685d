#pragma once

#include <iosfwd>
#include <vector>

#include "dsat/landmarks.hpp"
#include "dsat/layers.hpp"

namespace dsat {

/// Landmark maps N×L×h×w and boundary maps N×B×h×w.
struct HeatmapSet {
  Tensor landmark;
  Tensor boundary;
};

/// L×h×w Gaussian maps centred on each point, each divided by its own
/// maximum so the nearest pixel is exactly 1. Points outside the map are
/// clamped to the border and counted in `clamped` when given.
Tensor render_landmark_heatmaps(const std::vector<Point>& points, Real sigma, std::size_t height, std::size_t width,
                                std::size_t* clamped = nullptr);

/// B×h×w maps of exp(−dist²/2σ²) to the polyline through each chain.
Tensor render_boundary_heatmaps(const std::vector<Point>& points, const BoundaryTopology& topology, Real sigma,
                                std::size_t height, std::size_t width);

/// Shortest distance from p to the segment [a, b].
Real point_segment_distance(Point p, Point a, Point b);

/// ×2 transposed convolution trunk (`channels` in, `trunk_channels` out) with
/// sibling 1×1 landmark and boundary heads. The two 1×1 heads start at zero.
class PredictionHeads {
 public:
  PredictionHeads() = default;
  PredictionHeads(ParameterStore& store, const std::string& name, std::size_t channels, std::size_t trunk_channels,
                  std::size_t landmarks, std::size_t boundaries, Rng& rng);
  HeatmapSet operator()(const Tensor& features, bool training);

  ConvTranspose2d upsample;
  BatchNorm2d norm;
  Conv2d landmark_head, boundary_head;
};

/// MSE(landmark) + MSE(boundary).
Tensor l2_loss(const HeatmapSet& pred, const HeatmapSet& gt);
/// Sum of l2_loss over every supervised stack.
Tensor stacked_loss(const std::vector<HeatmapSet>& preds, const HeatmapSet& gt);

/// Header of four little-endian int32 (N, C, H, W) then float32 LE values.
void export_heatmaps(std::ostream& os, const Tensor& maps);
Tensor import_heatmaps(std::istream& is);

}  // namespace dsat
