#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsat/landmarks.hpp"

namespace dsat {

struct DecodedLandmarks {
  std::vector<Point> points;
  std::vector<bool> degenerate;  // map had no unique maximum (all values equal)
};

/// Argmax per channel of an L×h×w stack; ties go to the lowest row-major
/// index. With `subpixel`, each coordinate moves a quarter pixel toward the
/// larger of its two axis neighbours.
DecodedLandmarks decode_heatmaps(const Tensor& maps, bool subpixel = false);

/// Mean point-to-point distance over gt.norm_distance, in percent.
Real nme(const std::vector<Point>& pred, const LandmarkSet& gt);
/// Per-landmark Euclidean errors.
std::vector<Real> landmark_errors(const std::vector<Point>& pred, const std::vector<Point>& gt);

/// Percentage of entries strictly above `threshold`.
Real failure_rate(std::span<const Real> nmes, Real threshold);

/// Outer-eye-corner distance, pupil distance, or bounding-box diagonal.
Real norm_distance(const std::vector<Point>& points, NormKind kind, const LandmarkLayout& layout);

struct EvalRecord {
  std::string sample_id;
  std::string label;
  Real nme_percent = 0.0;
  Real norm_distance = 1.0;
  std::vector<Real> per_landmark_errors;
  std::vector<std::pair<std::size_t, Real>> activation_ratios;  // (dsa_index, ratio)
};

struct GateSummary {
  std::string cluster;
  std::size_t dsa_index = 0;
  Real mean = 0.0;
  Real stddev = 0.0;  // population standard deviation
  std::size_t count = 0;
};

/// Mean and spread of activation ratios per cluster and gate, in the order
/// of `clusters` then gate index. Clusters with no records are skipped.
/// Throws ContractError on a record whose label is not listed or whose
/// gate indices differ from the first record's.
std::vector<GateSummary> gate_report(const std::vector<EvalRecord>& records, const std::vector<std::string>& clusters);

/// CSV with header `cluster,dsa_index,mean,std,count`.
void write_gate_report_csv(std::ostream& os, const std::vector<GateSummary>& rows);

}  // namespace dsat
