#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsat/landmarks.hpp"
#include "dsat/ops.hpp"

namespace dsat {

enum class Difficulty { Neutral, Occluded, Rotated, Blurred };

std::string to_string(Difficulty d);
Difficulty parse_difficulty(const std::string& text);
const std::vector<Difficulty>& all_difficulties();
std::vector<std::string> difficulty_labels();

/// Grayscale face drawing with its landmarks in image pixel coordinates
/// (pixel centres at integers).
struct SyntheticSample {
  std::string id;
  Tensor image;  // 1×S×S, values in [0, 1]
  std::vector<Point> landmarks;
  Difficulty label = Difficulty::Neutral;
  std::uint64_t seed = 0;
};

/// Twelve points: outer eye corners 0/3, pupils 1/2, nose tip 4, mouth
/// corners 5/6, contour 7..11 from left temple through chin to right
/// temple. Boundaries: left contour, right contour, mouth.
const LandmarkLayout& synthetic_layout();

/// Deterministic in (seed, size). Every difficulty shares the neutral face
/// drawn from the same seed: Occluded pastes a rectangle, Rotated turns the
/// face about the image centre by N(0, 20°), Blurred applies a Gaussian
/// blur with σ in [1, 2] pixels.
SyntheticSample generate_sample(std::uint64_t seed, Difficulty difficulty, std::size_t image_size);

/// `count` samples whose labels follow `mix` (weights per difficulty, in
/// all_difficulties() order) as exact counts, shuffled with `seed`.
std::vector<SyntheticSample> generate_dataset(std::size_t count, const std::vector<Real>& mix, std::uint64_t seed,
                                              std::size_t image_size);
/// Parses "neutral:0.4,occluded:0.2,..."; unlisted labels get weight 0.
std::vector<Real> parse_mix(const std::string& text);

// Individual augmentations. Landmarks move with the pixels.
SyntheticSample flip_horizontal(const SyntheticSample& s, const LandmarkLayout& layout);
SyntheticSample rotate(const SyntheticSample& s, Real degrees);
SyntheticSample adjust_intensity(const SyntheticSample& s, Real gain, Real bias);
SyntheticSample occlude(const SyntheticSample& s, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h,
                        Real value);

struct AugmentOptions {
  Real probability = 0.5;       // per transform
  Real rotation_sigma_deg = 15.0;
  Real max_outside = 0.25;      // rotations moving more landmarks off-frame are redrawn
  std::size_t max_retries = 10;
};

/// Flip, intensity jitter, occlusion and rotation, each applied with
/// `probability`.
SyntheticSample augment(const SyntheticSample& s, Rng& rng, const AugmentOptions& opts = {});

/// Fraction of landmarks outside [-0.5, S-0.5)².
Real fraction_outside(const std::vector<Point>& points, std::size_t image_size);

}  // namespace dsat
