#pragma once

// Synthetic fundus-like images. The class signal lives only in the optic
// disc: label 1 ("referable") iff cup_radius / disc_radius >= 0.7.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "edl/random.hpp"
#include "edl/tensor.hpp"

namespace edl {

inline constexpr double kReferableCupRatio = 0.7;
inline constexpr std::size_t kMinImageSize = 32;

struct SyntheticSample {
  Tensor image;  // 3×H×W in [0, 1]
  int label = 0;
  double disc_row = 0.0;
  double disc_col = 0.0;
  double disc_radius = 0.0;
  double cup_radius = 0.0;
};

namespace detail {

inline double smooth_step_inside(double radius, double dist, double softness = 0.7) {
  return 1.0 / (1.0 + std::exp((dist - radius) / softness));
}

struct Rgb {
  double r, g, b;
};

inline SyntheticSample render_sample(int label, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double s = static_cast<double>(size);
  const double mid = (s - 1.0) / 2.0;

  SyntheticSample out;
  out.label = label;
  out.disc_radius = uniform(s / 8.0, s / 5.0);
  const double ratio = label == 1 ? uniform(0.7, 0.95) : uniform(0.2, 0.5);
  out.cup_radius = ratio * out.disc_radius;

  // Keep the disc off the horizontal midline so a vertically flipped disc
  // mask lands elsewhere.
  const double r = out.disc_radius;
  const double row_lo = r + 2.0;
  const double row_hi = std::max(row_lo, mid - r - 2.0);
  out.disc_row = uniform(row_lo, row_hi);
  if (uniform(0.0, 1.0) < 0.5) out.disc_row = s - 1.0 - out.disc_row;
  out.disc_col = uniform(r + 2.0, s - 1.0 - r - 2.0);

  // Background: reddish, vignetted, with low-frequency texture.
  const Rgb base{uniform(0.70, 0.82), uniform(0.30, 0.40), uniform(0.15, 0.24)};
  const double f1 = uniform(0.1, 0.4), f2 = uniform(0.1, 0.4);
  const double p1 = uniform(0.0, 6.3), p2 = uniform(0.0, 6.3);

  // Vessels: quadratic curves leaving the disc rim towards the border.
  std::vector<double> vessel_dist(size * size, 1e9);
  const int vessels = 4 + static_cast<int>(rng() % 3);
  for (int v = 0; v < vessels; ++v) {
    const double angle = uniform(0.0, 2.0 * std::numbers::pi);
    const double y0 = out.disc_row + r * std::sin(angle), x0 = out.disc_col + r * std::cos(angle);
    const double reach = uniform(0.5, 0.9) * s;
    const double bend = uniform(-0.6, 0.6);
    const double y2 = y0 + reach * std::sin(angle + bend), x2 = x0 + reach * std::cos(angle + bend);
    const double y1 = y0 + 0.5 * reach * std::sin(angle), x1 = x0 + 0.5 * reach * std::cos(angle);
    for (int k = 0; k <= 96; ++k) {
      const double t = k / 96.0;
      const double py = (1 - t) * (1 - t) * y0 + 2 * (1 - t) * t * y1 + t * t * y2;
      const double px = (1 - t) * (1 - t) * x0 + 2 * (1 - t) * t * x1 + t * t * x2;
      const int cy = static_cast<int>(std::lround(py)), cx = static_cast<int>(std::lround(px));
      for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx) {
          const int yy = cy + dy, xx = cx + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<int>(size) || xx >= static_cast<int>(size)) continue;
          const double d = std::hypot(yy - py, xx - px);
          double& best = vessel_dist[static_cast<std::size_t>(yy) * size + static_cast<std::size_t>(xx)];
          best = std::min(best, d);
        }
    }
  }
  const double vessel_width = uniform(0.6, 1.1);

  const Rgb vessel{0.45, 0.12, 0.08};
  const Rgb disc{uniform(0.94, 1.0), uniform(0.84, 0.92), uniform(0.58, 0.68)};
  const Rgb cup{uniform(0.80, 0.86), uniform(0.56, 0.64), uniform(0.36, 0.44)};

  std::normal_distribution<double> noise(0.0, 0.02);
  out.image = Tensor({3, size, size});
  const std::size_t plane = size * size;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - mid, dx = static_cast<double>(x) - mid;
      const double vignette = 1.0 - 0.35 * (dy * dy + dx * dx) / (mid * mid);
      const double texture = 0.04 * std::sin(f1 * x + p1) * std::sin(f2 * y + p2);
      Rgb px{base.r * vignette + texture, base.g * vignette + texture, base.b * vignette + 0.5 * texture};

      const double dv = vessel_dist[y * size + x];
      const double va = 0.85 * std::exp(-dv * dv / (2.0 * vessel_width * vessel_width));
      px = {px.r + va * (vessel.r - px.r), px.g + va * (vessel.g - px.g), px.b + va * (vessel.b - px.b)};

      const double dd = std::hypot(static_cast<double>(y) - out.disc_row, static_cast<double>(x) - out.disc_col);
      const double da = smooth_step_inside(r, dd);
      px = {px.r + da * (disc.r - px.r), px.g + da * (disc.g - px.g), px.b + da * (disc.b - px.b)};
      const double ca = smooth_step_inside(out.cup_radius, dd);
      px = {px.r + ca * (cup.r - px.r), px.g + ca * (cup.g - px.g), px.b + ca * (cup.b - px.b)};

      const std::size_t i = y * size + x;
      out.image[i] = std::clamp(px.r + noise(rng), 0.0, 1.0);
      out.image[plane + i] = std::clamp(px.g + noise(rng), 0.0, 1.0);
      out.image[2 * plane + i] = std::clamp(px.b + noise(rng), 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace detail

/// n images of side `size`; exactly round(n * balance) carry label 1.
inline std::vector<SyntheticSample> generate(std::size_t n, double balance, std::uint64_t seed,
                                             std::size_t size) {
  if (n == 0) throw ArgumentError("generate: n must be positive");
  if (!(balance > 0.0 && balance < 1.0)) throw ArgumentError("generate: balance must lie in (0, 1)");
  if (size < kMinImageSize) {
    throw ArgumentError("generate: image size " + std::to_string(size) + " is below the minimum " +
                        std::to_string(kMinImageSize));
  }
  const auto positives = static_cast<std::size_t>(std::llround(static_cast<double>(n) * balance));
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(positives), 1);
  std::mt19937_64 rng(derive_seed({seed, 0x1abe1}));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<SyntheticSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(detail::render_sample(labels[i], size, derive_seed({seed, i})));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double probability = 0.5;  // chance of applying each transform
  double max_translate = 0.10;  // fraction of image size
  double max_rotate_deg = 20.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_blur_sigma = 1.5;
  double max_brightness = 0.10;  // additive

  static AugmentConfig disabled() {
    AugmentConfig c;
    c.probability = 0.0;
    return c;
  }
};

namespace detail {

inline double sample_clamped(const double* plane, std::size_t h, std::size_t w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx) * (1 - fy) +
         (plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx) * fy;
}

inline void gaussian_blur(Tensor& img, double sigma) {
  if (sigma <= 0.0) return;
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-i * i / (2 * sigma * sigma));
  for (double& v : k) v /= total;
  std::vector<double> tmp(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double* p = img.raw() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const long xx = std::clamp(static_cast<long>(x) + i, 0L, static_cast<long>(w) - 1);
          acc += k[i + radius] * p[y * w + static_cast<std::size_t>(xx)];
        }
        tmp[y * w + x] = acc;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const long yy = std::clamp(static_cast<long>(y) + i, 0L, static_cast<long>(h) - 1);
          acc += k[i + radius] * tmp[static_cast<std::size_t>(yy) * w + x];
        }
        p[y * w + x] = acc;
      }
  }
}

}  // namespace detail

/// Random flips, translation, rotation, scale, Gaussian blur and additive
/// brightness, each applied independently with `probability`. Geometry is
/// resampled bilinearly with edge clamping; output is clamped to [0, 1].
inline Tensor augment(const Tensor& image, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  if (image.ndim() != 3) throw DimensionError("augment expects a C×H×W image");
  std::mt19937_64 rng(seed);
  auto coin = [&] { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.probability; };
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const bool hflip = coin(), vflip = coin();
  double ty = 0.0, tx = 0.0, angle = 0.0, zoom = 1.0, sigma = 0.0, bright = 0.0;
  if (coin()) {
    ty = uniform(-cfg.max_translate, cfg.max_translate) * static_cast<double>(h);
    tx = uniform(-cfg.max_translate, cfg.max_translate) * static_cast<double>(w);
  }
  if (coin()) angle = uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg) * std::numbers::pi / 180.0;
  if (coin()) zoom = uniform(cfg.min_scale, cfg.max_scale);
  if (coin()) sigma = uniform(0.0, cfg.max_blur_sigma);
  if (coin()) bright = uniform(-cfg.max_brightness, cfg.max_brightness);

  Tensor out = image;
  const bool geometric = hflip || vflip || ty != 0.0 || tx != 0.0 || angle != 0.0 || zoom != 1.0;
  if (geometric) {
    const double cy = (static_cast<double>(h) - 1) / 2.0, cx = (static_cast<double>(w) - 1) / 2.0;
    const double cs = std::cos(angle), sn = std::sin(angle);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = image.raw() + ch * h * w;
      double* dst = out.raw() + ch * h * w;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          // Inverse map: undo translation, rotation+scale, then flips.
          const double oy = static_cast<double>(y) - cy - ty, ox = static_cast<double>(x) - cx - tx;
          double sy = (cs * oy - sn * ox) / zoom + cy;
          double sx = (sn * oy + cs * ox) / zoom + cx;
          if (vflip) sy = static_cast<double>(h) - 1 - sy;
          if (hflip) sx = static_cast<double>(w) - 1 - sx;
          dst[y * w + x] = detail::sample_clamped(src, h, w, sy, sx);
        }
    }
  }
  detail::gaussian_blur(out, sigma);
  for (double& v : out.data()) v = std::clamp(v + bright, 0.0, 1.0);
  return out;
}

}  // namespace edl
