#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dsat/tensor.hpp"

namespace dsat {

struct Point {
  Real x = 0.0;
  Real y = 0.0;
  bool operator==(const Point&) const = default;
};

enum class NormKind { InterOcular, InterPupil, Diagonal };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& text);

/// Landmarks in heatmap pixel coordinates plus the NME normalization term.
struct LandmarkSet {
  std::vector<Point> points;
  Real norm_distance = 1.0;
  NormKind norm_kind = NormKind::InterOcular;
};

/// Ordered landmark chains, one per boundary heatmap.
struct BoundaryTopology {
  std::vector<std::vector<std::size_t>> chains;
};

/// Index conventions of a landmark scheme.
struct LandmarkLayout {
  std::size_t count = 0;
  std::pair<std::size_t, std::size_t> outer_eye_corners;
  std::pair<std::size_t, std::size_t> pupils;
  std::vector<std::size_t> flip_partner;  // index mapping under horizontal flip
  BoundaryTopology boundaries;
};

/// Pixel-centre mapping between image and heatmap grids.
inline Real image_to_heatmap(Real v, std::size_t image_size, std::size_t heatmap_size) {
  return (v + 0.5) * static_cast<Real>(heatmap_size) / static_cast<Real>(image_size) - 0.5;
}

}  // namespace dsat
