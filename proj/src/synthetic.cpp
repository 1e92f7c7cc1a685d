#include "dsat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dsat/error.hpp"

namespace dsat {

namespace {

constexpr Real kRotatedSigmaDeg = 20.0;

Real smooth_step(Real signed_px) { return 1.0 / (1.0 + std::exp(-signed_px / 0.6)); }

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Geometry and shading of one face; every length is in pixels.
struct Face {
  Real cx, cy, a, b;
  Real background, gradient, skin;
  Real eye_y, pupil_dx, eye_half;
  Real nose_x, nose_y;
  Real mouth_y, mouth_half, mouth_sag;

  std::vector<Point> landmarks() const {
    auto on_ellipse = [&](Real deg) {
      const Real r = deg * std::numbers::pi / 180.0;
      return Point{cx + a * std::cos(r), cy + b * std::sin(r)};
    };
    const Point left_pupil{cx - pupil_dx, eye_y}, right_pupil{cx + pupil_dx, eye_y};
    return {
        {left_pupil.x - eye_half, eye_y},
        left_pupil,
        right_pupil,
        {right_pupil.x + eye_half, eye_y},
        {nose_x, nose_y},
        {cx - mouth_half, mouth_y},
        {cx + mouth_half, mouth_y},
        on_ellipse(200.0),
        on_ellipse(135.0),
        on_ellipse(90.0),
        on_ellipse(45.0),
        on_ellipse(-20.0),
    };
  }

  Real intensity(Real x, Real y, Real size) const {
    Real v = background + gradient * (x / size - 0.5);
    const Real r = std::hypot((x - cx) / a, (y - cy) / b);
    v += (skin - background) * smooth_step((1.0 - r) * std::min(a, b));

    for (Real side : {-1.0, 1.0}) {
      const Real px = cx + side * pupil_dx;
      const Real er = std::hypot((x - px) / eye_half, (y - eye_y) / (0.5 * eye_half));
      v += (0.92 - v) * smooth_step((1.0 - er) * 0.5 * eye_half);
      const Real pr = std::hypot(x - px, y - eye_y);
      v += (0.05 - v) * smooth_step(0.35 * eye_half - pr);
    }

    const Real ns = 0.12 * a;
    v += 0.6 * (1.0 - v) * std::exp(-((x - nose_x) * (x - nose_x) + (y - nose_y) * (y - nose_y)) / (2.0 * ns * ns));

    const Real u = (x - cx) / mouth_half;
    if (std::abs(u) <= 1.15) {
      const Real curve = mouth_y + mouth_sag * (1.0 - std::min(1.0, u * u));
      const Real d = y - curve;
      const Real fade = std::abs(u) <= 1.0 ? 1.0 : (1.15 - std::abs(u)) / 0.15;
      v -= 0.35 * fade * std::exp(-d * d / (2.0 * 0.9 * 0.9));
    }
    return std::clamp(v, 0.0, 1.0);
  }
};

Face draw_face(Rng& rng, Real size) {
  std::uniform_real_distribution<Real> U(0.0, 1.0);
  std::normal_distribution<Real> N(0.0, 1.0);
  auto u = [&](Real lo, Real hi) { return lo + (hi - lo) * U(rng); };
  Face f{};
  f.cx = (0.5 + 0.02 * N(rng)) * size - 0.5;
  f.cy = (0.52 + 0.02 * N(rng)) * size - 0.5;
  f.a = u(0.28, 0.33) * size;
  f.b = f.a * u(1.1, 1.25);
  f.background = u(0.1, 0.3);
  f.gradient = u(-0.1, 0.1);
  f.skin = u(0.55, 0.75);
  f.eye_y = f.cy - u(0.2, 0.3) * f.b;
  f.pupil_dx = u(0.38, 0.45) * f.a;
  f.eye_half = u(0.14, 0.18) * f.a;
  f.nose_x = f.cx + 0.02 * f.a * N(rng);
  f.nose_y = f.cy + u(0.05, 0.15) * f.b;
  f.mouth_y = f.cy + u(0.45, 0.55) * f.b;
  f.mouth_half = u(0.3, 0.4) * f.a;
  f.mouth_sag = u(0.05, 0.12) * f.b;
  return f;
}

template <typename Fn>
Tensor render(std::size_t size, Fn&& value_at) {
  Tensor img = Tensor::zeros({1, size, size});
  auto v = img.data();
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) v[y * size + x] = value_at(static_cast<Real>(x), static_cast<Real>(y));
  return img;
}

Point rotate_point(Point p, Point centre, Real radians) {
  const Real c = std::cos(radians), s = std::sin(radians);
  const Real dx = p.x - centre.x, dy = p.y - centre.y;
  return {centre.x + c * dx - s * dy, centre.y + s * dx + c * dy};
}

Real bilinear(std::span<const Real> img, std::size_t size, Real x, Real y) {
  const Real hi = static_cast<Real>(size - 1);
  x = std::clamp(x, 0.0, hi);
  y = std::clamp(y, 0.0, hi);
  const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, size - 1), y1 = std::min(y0 + 1, size - 1);
  const Real fx = x - static_cast<Real>(x0), fy = y - static_cast<Real>(y0);
  const Real top = img[y0 * size + x0] * (1.0 - fx) + img[y0 * size + x1] * fx;
  const Real bottom = img[y1 * size + x0] * (1.0 - fx) + img[y1 * size + x1] * fx;
  return top * (1.0 - fy) + bottom * fy;
}

void gaussian_blur(std::span<Real> img, std::size_t size, Real sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<Real> kernel(2 * radius + 1);
  Real total = 0.0;
  for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-k * k / (2.0 * sigma * sigma));
  for (auto& k : kernel) k /= total;
  const int n = static_cast<int>(size);
  std::vector<Real> tmp(img.size());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      Real acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img[y * n + std::clamp(x + k, 0, n - 1)];
      tmp[y * n + x] = acc;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      Real acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp[std::clamp(y + k, 0, n - 1) * n + x];
      img[y * n + x] = acc;
    }
}

SyntheticSample copy_of(const SyntheticSample& s) {
  SyntheticSample out = s;
  out.image = Tensor::from(s.image.shape(), std::vector<Real>(s.image.data().begin(), s.image.data().end()));
  return out;
}

std::size_t image_extent(const SyntheticSample& s) {
  if (s.image.rank() != 3 || s.image.dim(0) != 1 || s.image.dim(1) != s.image.dim(2)) {
    throw ShapeError("synthetic sample: expected a 1×S×S image, got " + shape_str(s.image.shape()));
  }
  return s.image.dim(1);
}

}  // namespace

std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Neutral: return "neutral";
    case Difficulty::Occluded: return "occluded";
    case Difficulty::Rotated: return "rotated";
    case Difficulty::Blurred: return "blurred";
  }
  return "?";
}

Difficulty parse_difficulty(const std::string& text) {
  for (auto d : all_difficulties())
    if (to_string(d) == text) return d;
  throw ConfigError("unknown difficulty label: " + text);
}

const std::vector<Difficulty>& all_difficulties() {
  static const std::vector<Difficulty> all{Difficulty::Neutral, Difficulty::Occluded, Difficulty::Rotated,
                                           Difficulty::Blurred};
  return all;
}

std::vector<std::string> difficulty_labels() {
  std::vector<std::string> out;
  for (auto d : all_difficulties()) out.push_back(to_string(d));
  return out;
}

const LandmarkLayout& synthetic_layout() {
  static const LandmarkLayout layout{
      12, {0, 3}, {1, 2}, {3, 2, 1, 0, 4, 6, 5, 11, 10, 9, 8, 7}, {{{7, 8, 9}, {9, 10, 11}, {5, 6}}}};
  return layout;
}

SyntheticSample generate_sample(std::uint64_t seed, Difficulty difficulty, std::size_t image_size) {
  if (image_size < 8) throw ConfigError("generate_sample: image_size must be at least 8");
  Rng rng(splitmix(seed));
  const Real size = static_cast<Real>(image_size);
  const Face face = draw_face(rng, size);

  SyntheticSample s;
  s.id = "s" + std::to_string(seed);
  s.seed = seed;
  s.label = difficulty;
  s.landmarks = face.landmarks();

  std::uniform_real_distribution<Real> U(0.0, 1.0);
  switch (difficulty) {
    case Difficulty::Neutral:
      s.image = render(image_size, [&](Real x, Real y) { return face.intensity(x, y, size); });
      break;
    case Difficulty::Occluded: {
      s.image = render(image_size, [&](Real x, Real y) { return face.intensity(x, y, size); });
      const auto w = static_cast<std::size_t>((0.2 + 0.2 * U(rng)) * size);
      const auto h = static_cast<std::size_t>((0.15 + 0.15 * U(rng)) * size);
      const Point anchor = s.landmarks[static_cast<std::size_t>(U(rng) * 12.0) % 12];
      const Real value = U(rng);
      const auto x0 = static_cast<std::size_t>(std::clamp(anchor.x - 0.5 * w, 0.0, size - static_cast<Real>(w)));
      const auto y0 = static_cast<std::size_t>(std::clamp(anchor.y - 0.5 * h, 0.0, size - static_cast<Real>(h)));
      s = occlude(s, x0, y0, w, h, value);
      break;
    }
    case Difficulty::Rotated: {
      std::normal_distribution<Real> N(0.0, kRotatedSigmaDeg);
      const Real radians = N(rng) * std::numbers::pi / 180.0;
      const Point centre{(size - 1.0) / 2.0, (size - 1.0) / 2.0};
      s.image = render(image_size, [&](Real x, Real y) {
        const Point src = rotate_point({x, y}, centre, -radians);
        return face.intensity(src.x, src.y, size);
      });
      for (auto& p : s.landmarks) p = rotate_point(p, centre, radians);
      break;
    }
    case Difficulty::Blurred: {
      s.image = render(image_size, [&](Real x, Real y) { return face.intensity(x, y, size); });
      gaussian_blur(s.image.data(), image_size, 1.0 + U(rng));
      break;
    }
  }
  return s;
}

std::vector<Real> parse_mix(const std::string& text) {
  std::vector<Real> mix(all_difficulties().size(), 0.0);
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("mix entry '" + item + "' is not label:weight");
    const auto d = parse_difficulty(item.substr(0, colon));
    Real w = 0.0;
    try {
      w = std::stod(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("mix entry '" + item + "' has a malformed weight");
    }
    if (w < 0.0) throw ConfigError("mix weights must be non-negative");
    mix[static_cast<std::size_t>(d)] = w;
  }
  return mix;
}

std::vector<SyntheticSample> generate_dataset(std::size_t count, const std::vector<Real>& mix, std::uint64_t seed,
                                              std::size_t image_size) {
  if (mix.size() != all_difficulties().size()) throw ConfigError("generate_dataset: one weight per difficulty");
  Real total = 0.0;
  for (Real w : mix) total += w;
  if (!(total > 0.0)) throw ConfigError("generate_dataset: mix weights sum to zero");

  // Largest-remainder apportionment so the label counts are exact.
  std::vector<std::size_t> counts(mix.size());
  std::vector<std::pair<Real, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const Real share = mix[i] / total * static_cast<Real>(count);
    counts[i] = static_cast<std::size_t>(std::floor(share));
    assigned += counts[i];
    remainders.emplace_back(share - std::floor(share), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& l, auto& r) { return l.first > r.first; });
  for (std::size_t k = 0; assigned < count; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];

  std::vector<Difficulty> labels;
  for (std::size_t i = 0; i < counts.size(); ++i) labels.insert(labels.end(), counts[i], all_difficulties()[i]);
  Rng rng(splitmix(seed ^ 0x5eedULL));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t sample_seed = splitmix(seed * 1000003ULL + i);
    out.push_back(generate_sample(sample_seed, labels[i], image_size));
    out.back().id = "s" + std::to_string(seed) + "_" + std::to_string(i);
  }
  return out;
}

SyntheticSample flip_horizontal(const SyntheticSample& s, const LandmarkLayout& layout) {
  const std::size_t n = image_extent(s);
  if (layout.flip_partner.size() != s.landmarks.size()) throw ContractError("flip_horizontal: layout size mismatch");
  SyntheticSample out = copy_of(s);
  auto src = s.image.data();
  auto dst = out.image.data();
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) dst[y * n + x] = src[y * n + (n - 1 - x)];
  const Real mirror = static_cast<Real>(n - 1);
  for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
    const Point p = s.landmarks[layout.flip_partner[i]];
    out.landmarks[i] = {mirror - p.x, p.y};
  }
  return out;
}

SyntheticSample rotate(const SyntheticSample& s, Real degrees) {
  const std::size_t n = image_extent(s);
  SyntheticSample out = copy_of(s);
  const Real radians = degrees * std::numbers::pi / 180.0;
  const Point centre{(static_cast<Real>(n) - 1.0) / 2.0, (static_cast<Real>(n) - 1.0) / 2.0};
  auto src = s.image.data();
  auto dst = out.image.data();
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Point from = rotate_point({static_cast<Real>(x), static_cast<Real>(y)}, centre, -radians);
      dst[y * n + x] = bilinear(src, n, from.x, from.y);
    }
  for (auto& p : out.landmarks) p = rotate_point(p, centre, radians);
  return out;
}

SyntheticSample adjust_intensity(const SyntheticSample& s, Real gain, Real bias) {
  image_extent(s);
  SyntheticSample out = copy_of(s);
  for (auto& v : out.image.data()) v = std::clamp(gain * v + bias, 0.0, 1.0);
  return out;
}

SyntheticSample occlude(const SyntheticSample& s, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h,
                        Real value) {
  const std::size_t n = image_extent(s);
  SyntheticSample out = copy_of(s);
  auto v = out.image.data();
  for (std::size_t y = y0; y < std::min(n, y0 + h); ++y)
    for (std::size_t x = x0; x < std::min(n, x0 + w); ++x) v[y * n + x] = value;
  return out;
}

Real fraction_outside(const std::vector<Point>& points, std::size_t image_size) {
  if (points.empty()) return 0.0;
  const Real hi = static_cast<Real>(image_size) - 0.5;
  const auto outside = std::count_if(points.begin(), points.end(), [hi](const Point& p) {
    return p.x < -0.5 || p.y < -0.5 || p.x >= hi || p.y >= hi;
  });
  return static_cast<Real>(outside) / static_cast<Real>(points.size());
}

SyntheticSample augment(const SyntheticSample& s, Rng& rng, const AugmentOptions& opts) {
  const std::size_t n = image_extent(s);
  const Real size = static_cast<Real>(n);
  std::uniform_real_distribution<Real> U(0.0, 1.0);
  auto coin = [&] { return U(rng) < opts.probability; };

  SyntheticSample out = copy_of(s);
  if (coin()) out = flip_horizontal(out, synthetic_layout());
  if (coin()) {
    const Real gain = 0.7 + 0.6 * U(rng);
    out = adjust_intensity(out, gain, -0.15 + 0.3 * U(rng));
  }
  if (coin()) {
    const auto w = static_cast<std::size_t>((0.15 + 0.2 * U(rng)) * size);
    const auto h = static_cast<std::size_t>((0.15 + 0.2 * U(rng)) * size);
    const auto x0 = static_cast<std::size_t>(U(rng) * static_cast<Real>(n - w));
    const auto y0 = static_cast<std::size_t>(U(rng) * static_cast<Real>(n - h));
    out = occlude(out, x0, y0, w, h, U(rng));
  }
  if (coin()) {
    std::normal_distribution<Real> N(0.0, opts.rotation_sigma_deg);
    for (std::size_t attempt = 0; attempt < opts.max_retries; ++attempt) {
      SyntheticSample turned = rotate(out, N(rng));
      if (fraction_outside(turned.landmarks, n) <= opts.max_outside) {
        out = std::move(turned);
        break;
      }
    }
  }
  return out;
}

}  // namespace dsat
