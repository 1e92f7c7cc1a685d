#pragma once

// Brute-force reference implementations, written independently of the
// library code they check.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "dsat/landmarks.hpp"

namespace dsat::oracle {

/// Exhaustive scan: first strictly greater value wins, so the earliest
/// row-major position keeps ties. Returns (x, y) per channel and whether the
/// whole map was constant.
struct ScanResult {
  std::vector<Point> points;
  std::vector<bool> constant;
};

inline ScanResult argmax_scan(const std::vector<Real>& maps, std::size_t L, std::size_t H, std::size_t W) {
  ScanResult r;
  for (std::size_t l = 0; l < L; ++l) {
    Real best = -std::numeric_limits<Real>::infinity();
    std::size_t by = 0, bx = 0;
    bool constant = true;
    const Real first = maps[l * H * W];
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const Real v = maps[(l * H + y) * W + x];
        if (v != first) constant = false;
        if (v > best) {
          best = v;
          by = y;
          bx = x;
        }
      }
    r.points.push_back(constant ? Point{0.0, 0.0} : Point{static_cast<Real>(bx), static_cast<Real>(by)});
    r.constant.push_back(constant);
  }
  return r;
}

inline Real nme_loop(const std::vector<Point>& pred, const std::vector<Point>& gt, Real d) {
  Real total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Real dx = pred[i].x - gt[i].x, dy = pred[i].y - gt[i].y;
    total += std::sqrt(dx * dx + dy * dy);
  }
  return 100.0 * total / (static_cast<Real>(gt.size()) * d);
}

inline Real failure_count(const std::vector<Real>& nmes, Real threshold) {
  std::size_t n = 0;
  for (Real v : nmes)
    if (v > threshold) ++n;
  return 100.0 * static_cast<Real>(n) / static_cast<Real>(nmes.size());
}

inline Real sat_sigmoid(Real v) {
  const Real s = 1.2 / (1.0 + std::exp(-v)) - 0.1;
  return s < 0.0 ? 0.0 : (s > 1.0 ? 1.0 : s);
}

inline Real sat_sigmoid_slope(Real v) {
  const Real sg = 1.0 / (1.0 + std::exp(-v));
  const Real s = 1.2 * sg - 0.1;
  return (s < 0.0 || s > 1.0) ? 0.0 : 1.2 * sg * (1.0 - sg);
}

/// Gradient of L(x) = Σ w·x·g(mean_hw x) with respect to x, where the gate
/// value is binary (d > 0) but its derivative is the saturating sigmoid's:
///   ∂L/∂x[n,c,p] = w[n,c,p]·g[n,c] + sat'(d[n,c]) · Σ_q w[n,c,q]·x[n,c,q] / HW
inline std::vector<Real> straight_through_grad(const std::vector<Real>& x, const std::vector<Real>& w, std::size_t N,
                                               std::size_t C, std::size_t HW) {
  std::vector<Real> g(x.size());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * HW;
      Real d = 0.0, wx = 0.0;
      for (std::size_t p = 0; p < HW; ++p) {
        d += x[base + p];
        wx += w[base + p] * x[base + p];
      }
      d /= static_cast<Real>(HW);
      const Real gate = d > 0.0 ? 1.0 : 0.0;
      const Real through = sat_sigmoid_slope(d) * wx / static_cast<Real>(HW);
      for (std::size_t p = 0; p < HW; ++p) g[base + p] = w[base + p] * gate + through;
    }
  return g;
}

}  // namespace dsat::oracle
