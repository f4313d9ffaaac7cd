#pragma once

// Procedural video fixtures with exact ground truth.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/image.hpp"
#include "fsnet/rect.hpp"

namespace fsnet {

enum class SyntheticKind {
  bright_square,    // bright square on dark noise
  dark_disc,        // dark disc on bright noise
  textured_square,  // block-textured square on mid-grey noise
};

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "bright_square") return SyntheticKind::bright_square;
  if (s == "dark_disc") return SyntheticKind::dark_disc;
  if (s == "textured_square") return SyntheticKind::textured_square;
  throw Error("unknown synthetic kind '" + s +
              "' (expected bright_square, dark_disc or textured_square)");
}

struct SyntheticConfig {
  SyntheticKind kind = SyntheticKind::textured_square;
  std::size_t width = 128;
  std::size_t height = 128;
  std::size_t frames = 40;
  double object_size = 32;
  double speed = 2.5;        // pixels per frame; the object bounces off the borders
  double noise_sigma = 20;   // per-pixel Gaussian noise, grey levels
  std::uint64_t seed = 1;
};

struct SyntheticSequence {
  std::vector<Image> frames;
  std::vector<Rect> gt;
};

namespace detail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace detail

inline SyntheticSequence make_synthetic(const SyntheticConfig& cfg) {
  const double W = static_cast<double>(cfg.width);
  const double H = static_cast<double>(cfg.height);
  if (cfg.frames == 0) throw Error("synthetic: frame count must be positive");
  if (!(cfg.object_size >= 4 && cfg.object_size < std::min(W, H))) {
    throw Error("synthetic: object size must lie in [4, min(width, height))");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);

  const double s = cfg.object_size;
  double x = (W - s) * (0.25 + 0.5 * unit(rng));
  double y = (H - s) * (0.25 + 0.5 * unit(rng));
  const double angle = 2 * std::acos(-1.0) * unit(rng);
  double vx = cfg.speed * std::cos(angle);
  double vy = cfg.speed * std::sin(angle);

  // Fixed 4 x 4 pixel block texture carried by the textured square.
  const std::size_t blocks = static_cast<std::size_t>(std::ceil(s / 4.0));
  std::vector<std::array<double, 3>> texture(blocks * blocks);
  for (auto& t : texture) {
    const bool light = unit(rng) < 0.5;
    for (double& c : t) c = light ? 180 + 60 * unit(rng) : 20 + 60 * unit(rng);
  }

  double bg = 40, fg = 225;
  if (cfg.kind == SyntheticKind::dark_disc) std::swap(bg, fg);
  if (cfg.kind == SyntheticKind::textured_square) bg = 128;

  SyntheticSequence seq;
  for (std::size_t f = 0; f < cfg.frames; ++f) {
    Image img(cfg.width, cfg.height);
    for (std::size_t py = 0; py < cfg.height; ++py) {
      for (std::size_t px = 0; px < cfg.width; ++px) {
        // Pixel (px, py) covers [px, px + 1); sample its centre.
        const double u = static_cast<double>(px) + 0.5 - x;
        const double v = static_cast<double>(py) + 0.5 - y;
        double rgb[3] = {bg, bg, bg};
        const bool in_box = u >= 0 && u < s && v >= 0 && v < s;
        if (cfg.kind == SyntheticKind::dark_disc) {
          const double du = u - 0.5 * s, dv = v - 0.5 * s;
          if (du * du + dv * dv <= 0.25 * s * s) rgb[0] = rgb[1] = rgb[2] = fg;
        } else if (in_box && cfg.kind == SyntheticKind::bright_square) {
          rgb[0] = rgb[1] = rgb[2] = fg;
        } else if (in_box) {
          const auto& t = texture[static_cast<std::size_t>(v / 4) * blocks +
                                  static_cast<std::size_t>(u / 4)];
          for (int c = 0; c < 3; ++c) rgb[c] = t[c];
        }
        auto* p = img.pixel(px, py);
        for (int c = 0; c < 3; ++c) p[c] = detail::to_byte(rgb[c] + noise(rng));
      }
    }
    seq.frames.push_back(std::move(img));
    seq.gt.push_back(Rect{x, y, s, s});
    x += vx;
    y += vy;
    if (x < 0 || x > W - s) {
      vx = -vx;
      x = std::clamp(x, 0.0, W - s);
    }
    if (y < 0 || y > H - s) {
      vy = -vy;
      y = std::clamp(y, 0.0, H - s);
    }
  }
  return seq;
}

}  // namespace fsnet
