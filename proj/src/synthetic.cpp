#include <algorithm>
#include <array>
#include <cmath>

#include "nrt/data.hpp"
#include "nrt/rng.hpp"

namespace nrt {

namespace {

constexpr std::uint64_t kTemplateSeed = 0x7e3a1a7e5eed0001ULL;
constexpr int kStyles = 2;

struct Point {
  double y, x;
};

using Plane = std::vector<float>;

// Gaussian-brush rendering of quadratic Bezier strokes, peak-normalised.
Plane render_strokes(const std::vector<std::array<Point, 3>>& strokes, std::size_t h,
                     std::size_t w, double radius) {
  Plane img(h * w, 0.0f);
  const double inv = 1.0 / (2.0 * radius * radius);
  for (const auto& s : strokes) {
    for (int step = 0; step <= 48; ++step) {
      const double t = step / 48.0;
      const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
      const double py = a * s[0].y + b * s[1].y + c * s[2].y;
      const double px = a * s[0].x + b * s[1].x + c * s[2].x;
      const long y0 = std::max(0L, static_cast<long>(py) - 3);
      const long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(py) + 3);
      const long x0 = std::max(0L, static_cast<long>(px) - 3);
      const long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(px) + 3);
      for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
          const double d2 = (y - py) * (y - py) + (x - px) * (x - px);
          float& dst = img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
          dst = std::max(dst, static_cast<float>(std::exp(-d2 * inv)));
        }
      }
    }
  }
  return img;
}

double plane_distance(const Plane& a, const Plane& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

// templates[k * kStyles + s]; stroke control points stay inside the central
// box so image borders (and the trigger corner) are background.
std::vector<Plane> make_templates(std::size_t num_classes, std::size_t h, std::size_t w) {
  Rng rng = make_rng(kTemplateSeed, num_classes * 1000003ULL + h * 1009ULL + w);
  std::uniform_real_distribution<double> ry(0.22 * h, 0.78 * h), rx(0.25 * w, 0.75 * w);
  std::uniform_real_distribution<double> jitter(-1.6, 1.6);
  std::uniform_int_distribution<int> n_strokes(2, 3);
  const double min_sep = 0.22 * std::sqrt(static_cast<double>(h * w));

  std::vector<Plane> out;
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (int attempt = 0;; ++attempt) {
      std::vector<std::array<Point, 3>> strokes(static_cast<std::size_t>(n_strokes(rng)));
      for (auto& s : strokes) {
        for (auto& p : s) p = {ry(rng), rx(rng)};
      }
      Plane base = render_strokes(strokes, h, w, 1.0);
      bool distinct = true;
      for (std::size_t j = 0; j < k && distinct; ++j) {
        distinct = plane_distance(base, out[j * kStyles]) > min_sep;
      }
      if (!distinct && attempt < 200) continue;
      out.push_back(std::move(base));
      for (int s = 1; s < kStyles; ++s) {
        auto variant = strokes;
        for (auto& st : variant) {
          for (auto& p : st) p = {p.y + jitter(rng), p.x + jitter(rng)};
        }
        out.push_back(render_strokes(variant, h, w, 1.15));
      }
      break;
    }
  }
  return out;
}

float bilinear(const Plane& img, std::size_t h, std::size_t w, double y, double x) {
  if (y < 0 || x < 0 || y > static_cast<double>(h - 1) || x > static_cast<double>(w - 1)) {
    return 0.0f;
  }
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  return static_cast<float>((1 - fy) * ((1 - fx) * img[y0 * w + x0] + fx * img[y0 * w + x1]) +
                            fy * ((1 - fx) * img[y1 * w + x0] + fx * img[y1 * w + x1]));
}

Plane smoothed_noise(Rng& rng, std::size_t h, std::size_t w) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Plane raw(h * w);
  for (float& v : raw) v = normal(rng);
  // Separable 5-tap binomial blur; the taps shrink the std to ~0.30.
  constexpr std::array<float, 5> taps = {1 / 16.f, 4 / 16.f, 6 / 16.f, 4 / 16.f, 1 / 16.f};
  Plane tmp(h * w, 0.0f), out(h * w, 0.0f);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int d = -2; d <= 2; ++d) {
        const long xx = std::clamp(static_cast<long>(x) + d, 0L, static_cast<long>(w) - 1);
        acc += taps[static_cast<std::size_t>(d + 2)] * raw[y * w + static_cast<std::size_t>(xx)];
      }
      tmp[y * w + x] = acc;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int d = -2; d <= 2; ++d) {
        const long yy = std::clamp(static_cast<long>(y) + d, 0L, static_cast<long>(h) - 1);
        acc += taps[static_cast<std::size_t>(d + 2)] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

Dataset synthetic_dataset(std::size_t num_classes, std::size_t n_per_class, const Shape& shape,
                          std::uint64_t seed, Split split) {
  if (num_classes < 2) throw ValidationError("synthetic dataset needs at least two classes");
  if (shape.size() != 3 || shape[1] < 8 || shape[2] < 8) {
    throw ValidationError("synthetic dataset needs a [C,H,W] shape with H,W >= 8");
  }
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  const auto templates = make_templates(num_classes, h, w);

  Dataset d;
  d.num_classes = num_classes;
  d.split = split;
  d.images.reserve(num_classes * n_per_class);
  d.labels.reserve(num_classes * n_per_class);

  std::uniform_real_distribution<double> shift(-2.0, 2.0), scale(0.9, 1.1), angle(-0.15, 0.15);
  std::uniform_real_distribution<float> gain(0.75f, 1.0f), tint(0.85f, 1.0f);
  std::uniform_int_distribution<int> style(0, kStyles - 1);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;

  // Interleave classes so prefixes of the dataset stay balanced.
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t k = 0; k < num_classes; ++k) {
      Rng rng = make_rng(seed, i * num_classes + k);
      const Plane& tpl = templates[k * kStyles + static_cast<std::size_t>(style(rng))];
      const double dy = shift(rng), dx = shift(rng), sc = scale(rng), th = angle(rng);
      const float g = gain(rng);
      const double cs = std::cos(th) / sc, sn = std::sin(th) / sc;
      Plane warped(h * w);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double oy = y - cy - dy, ox = x - cx - dx;
          warped[y * w + x] = bilinear(tpl, h, w, cy + cs * oy - sn * ox, cx + sn * oy + cs * ox);
        }
      }
      Tensor img({c, h, w});
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float t = c == 1 ? 1.0f : tint(rng);
        const Plane noise = smoothed_noise(rng, h, w);
        for (std::size_t j = 0; j < h * w; ++j) {
          const float v = g * t * warped[j] + 0.25f * noise[j];
          img[ch * h * w + j] = std::clamp(v, 0.0f, 1.0f);
        }
      }
      d.images.push_back(std::move(img));
      d.labels.push_back(k);
    }
  }
  return d;
}

}  // namespace nrt
