#include "dsat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "dsat/error.hpp"

namespace dsat {

DecodedLandmarks decode_heatmaps(const Tensor& maps, bool subpixel) {
  if (maps.rank() != 3) throw ShapeError("decode_heatmaps: expected L×h×w, got " + shape_str(maps.shape()));
  const std::size_t L = maps.dim(0), H = maps.dim(1), W = maps.dim(2), HW = H * W;
  auto v = maps.data();
  DecodedLandmarks out;
  for (std::size_t l = 0; l < L; ++l) {
    const Real* m = v.data() + l * HW;
    std::size_t best = 0;
    bool all_equal = true;
    for (std::size_t k = 1; k < HW; ++k) {
      if (m[k] != m[0]) all_equal = false;
      if (m[k] > m[best]) best = k;
    }
    if (!std::isfinite(m[best])) throw NumericError("decode_heatmaps: non-finite heatmap value");
    if (all_equal) {
      out.points.push_back({0.0, 0.0});
      out.degenerate.push_back(true);
      continue;
    }
    const std::size_t y = best / W, x = best % W;
    Point p{static_cast<Real>(x), static_cast<Real>(y)};
    if (subpixel) {
      if (x > 0 && x + 1 < W && m[best + 1] != m[best - 1]) p.x += m[best + 1] > m[best - 1] ? 0.25 : -0.25;
      if (y > 0 && y + 1 < H && m[best + W] != m[best - W]) p.y += m[best + W] > m[best - W] ? 0.25 : -0.25;
    }
    out.points.push_back(p);
    out.degenerate.push_back(false);
  }
  return out;
}

std::vector<Real> landmark_errors(const std::vector<Point>& pred, const std::vector<Point>& gt) {
  if (pred.size() != gt.size() || gt.empty()) {
    throw ContractError("landmark_errors: " + std::to_string(pred.size()) + " predicted vs " +
                        std::to_string(gt.size()) + " ground-truth landmarks");
  }
  std::vector<Real> e(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) e[i] = std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
  return e;
}

Real nme(const std::vector<Point>& pred, const LandmarkSet& gt) {
  if (!(gt.norm_distance > 0.0)) throw ContractError("nme: normalization distance must be positive");
  const auto e = landmark_errors(pred, gt.points);
  Real s = 0.0;
  for (Real v : e) s += v / gt.norm_distance;
  return s / static_cast<Real>(e.size()) * 100.0;
}

Real failure_rate(std::span<const Real> nmes, Real threshold) {
  if (nmes.empty()) throw ContractError("failure_rate: no samples");
  if (!(threshold > 0.0)) throw ContractError("failure_rate: threshold must be positive");
  const auto failures = std::count_if(nmes.begin(), nmes.end(), [threshold](Real v) { return v > threshold; });
  return 100.0 * static_cast<Real>(failures) / static_cast<Real>(nmes.size());
}

Real norm_distance(const std::vector<Point>& points, NormKind kind, const LandmarkLayout& layout) {
  auto pair_distance = [&](std::pair<std::size_t, std::size_t> idx) {
    if (idx.first >= points.size() || idx.second >= points.size()) {
      throw ContractError("norm_distance: layout index outside the landmark set");
    }
    return std::hypot(points[idx.first].x - points[idx.second].x, points[idx.first].y - points[idx.second].y);
  };
  Real d = 0.0;
  switch (kind) {
    case NormKind::InterOcular: d = pair_distance(layout.outer_eye_corners); break;
    case NormKind::InterPupil: d = pair_distance(layout.pupils); break;
    case NormKind::Diagonal: {
      if (points.empty()) throw ContractError("norm_distance: no landmarks");
      Real x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
      for (const auto& p : points) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
      }
      d = std::hypot(x1 - x0, y1 - y0);
      break;
    }
  }
  if (!(d > 0.0)) throw ContractError("norm_distance: coincident normalization points");
  return d;
}

std::vector<GateSummary> gate_report(const std::vector<EvalRecord>& records, const std::vector<std::string>& clusters) {
  if (records.empty()) return {};
  std::vector<std::size_t> gates;
  for (const auto& [idx, ratio] : records[0].activation_ratios) gates.push_back(idx);

  // sums[cluster][gate] = {sum, sum of squares, count}
  struct Acc {
    Real sum = 0.0, sq = 0.0;
    std::size_t n = 0;
  };
  std::vector<std::vector<Acc>> acc(clusters.size(), std::vector<Acc>(gates.size()));
  for (const auto& r : records) {
    const auto it = std::find(clusters.begin(), clusters.end(), r.label);
    if (it == clusters.end()) throw ContractError("gate_report: unknown cluster label '" + r.label + "'");
    if (r.activation_ratios.size() != gates.size()) {
      throw ContractError("gate_report: record " + r.sample_id + " carries a different set of gates");
    }
    const auto c = static_cast<std::size_t>(it - clusters.begin());
    for (std::size_t g = 0; g < gates.size(); ++g) {
      if (r.activation_ratios[g].first != gates[g]) {
        throw ContractError("gate_report: record " + r.sample_id + " carries a different set of gates");
      }
      const Real v = r.activation_ratios[g].second;
      acc[c][g].sum += v;
      acc[c][g].sq += v * v;
      ++acc[c][g].n;
    }
  }
  std::vector<GateSummary> out;
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (std::size_t g = 0; g < gates.size(); ++g) {
      const Acc& a = acc[c][g];
      if (a.n == 0) continue;
      const Real n = static_cast<Real>(a.n);
      const Real m = a.sum / n;
      out.push_back({clusters[c], gates[g], m, std::sqrt(std::max(0.0, a.sq / n - m * m)), a.n});
    }
  return out;
}

void write_gate_report_csv(std::ostream& os, const std::vector<GateSummary>& rows) {
  os << "cluster,dsa_index,mean,std,count\n";
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(10);
  for (const auto& r : rows) os << r.cluster << ',' << r.dsa_index << ',' << r.mean << ',' << r.stddev << ',' << r.count << '\n';
  os.flags(flags);
  os.precision(prec);
}

}  // namespace dsat
