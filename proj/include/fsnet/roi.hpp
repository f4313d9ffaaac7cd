#pragma once

// Fixed-size RoI feature extraction from a single feature map (1 x C x H x W).
//
// Coordinate convention: pixel centers sit at integer coordinates and a RoI
// (x, y, w, h) in feature space spans [x, x + w) x [y, y + h). Image boxes map
// to feature space by plain division by the cumulative stride.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/rect.hpp"
#include "fsnet/tensor.hpp"

namespace fsnet {

/// Where the n x n sample points sit inside each bin.
enum class SamplePlacement {
  cell_center,  // centers of the n x n sub-cells (quadrant centers for n = 2)
  cell_corner,  // top-left corners of the sub-cells
};

struct RoiAlignConfig {
  std::size_t bins = 3;
  std::size_t samples = 2;
  SamplePlacement placement = SamplePlacement::cell_center;
};

inline Rect map_roi_to_feature(const Rect& image_rect, double cumulative_stride) {
  if (!(cumulative_stride > 0)) throw Error("map_roi_to_feature: stride must be positive");
  return Rect{image_rect.x / cumulative_stride, image_rect.y / cumulative_stride,
              image_rect.w / cumulative_stride, image_rect.h / cumulative_stride};
}

/// The four integer neighbours of a (clamped) sample point and their weights.
struct BilinearTaps {
  std::size_t x_left = 0, x_right = 0, y_top = 0, y_bottom = 0;
  double w_tl = 0, w_tr = 0, w_bl = 0, w_br = 0;
};

inline BilinearTaps bilinear_taps(std::size_t height, std::size_t width, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  BilinearTaps t;
  t.x_left = std::min(static_cast<std::size_t>(x), width - 1);
  t.y_top = std::min(static_cast<std::size_t>(y), height - 1);
  t.x_right = std::min(t.x_left + 1, width - 1);
  t.y_bottom = std::min(t.y_top + 1, height - 1);
  // Fractional offsets from the top-left neighbour; zero on the far border.
  const double fx = x - static_cast<double>(t.x_left);
  const double fy = y - static_cast<double>(t.y_top);
  t.w_tl = (1.0 - fx) * (1.0 - fy);
  t.w_tr = fx * (1.0 - fy);
  t.w_bl = (1.0 - fx) * fy;
  t.w_br = fx * fy;
  return t;
}

/// Bilinear value of channel `c` at (x, y); coordinates outside the map are clamped.
template <typename T>
T bilinear_sample(const Tensor<T>& featmap, std::size_t c, double x, double y) {
  const Shape& s = featmap.shape();
  if (c >= s.c) throw ShapeError("bilinear_sample: channel out of range for " + s.str());
  const auto t = bilinear_taps(s.h, s.w, x, y);
  const auto p = featmap.channel(0, c);
  return static_cast<T>(t.w_tl * p[t.y_top * s.w + t.x_left] +
                        t.w_tr * p[t.y_top * s.w + t.x_right] +
                        t.w_bl * p[t.y_bottom * s.w + t.x_left] +
                        t.w_br * p[t.y_bottom * s.w + t.x_right]);
}

/// Winning sample point for one (roi, channel, bin).
struct AlignRecord {
  double x = 0;
  double y = 0;
  std::uint32_t channel = 0;
};

template <typename T>
struct RoiAlignResult {
  Tensor<T> features;                // R x C x bins x bins
  std::vector<AlignRecord> records;  // same flat order as features
  Shape featmap_shape;
};

namespace detail {

inline void check_roi(const Rect& roi, std::size_t index) {
  if (!(roi.w > 0) || !(roi.h > 0)) {
    throw Error("degenerate RoI at index " + std::to_string(index) + ": " + roi.str());
  }
}

inline double sample_offset(std::size_t s, std::size_t n, double bin, SamplePlacement placement) {
  const double step = bin / static_cast<double>(n);
  return placement == SamplePlacement::cell_center ? (static_cast<double>(s) + 0.5) * step
                                                   : static_cast<double>(s) * step;
}

}  // namespace detail

/// Max-RoIAlign: each bin takes the largest of its bilinear samples.
template <typename T>
RoiAlignResult<T> roi_align_forward(const Tensor<T>& featmap, std::span<const Rect> rois,
                                    const RoiAlignConfig& cfg = {}) {
  const Shape& s = featmap.shape();
  if (s.n != 1) throw ShapeError("roi_align: expected a single feature map, got " + s.str());
  if (cfg.bins == 0 || cfg.samples == 0) throw Error("roi_align: bins and samples must be >= 1");
  const std::size_t nb = cfg.bins;
  const std::size_t ns = cfg.samples;

  RoiAlignResult<T> r{Tensor<T>(Shape{rois.size(), s.c, nb, nb}), {}, s};
  r.records.resize(r.features.size());

  std::vector<BilinearTaps> taps(nb * nb * ns * ns);
  std::vector<double> xs(taps.size()), ys(taps.size());
  for (std::size_t ri = 0; ri < rois.size(); ++ri) {
    const Rect& roi = rois[ri];
    detail::check_roi(roi, ri);
    const double bw = roi.w / static_cast<double>(nb);
    const double bh = roi.h / static_cast<double>(nb);
    // Sample geometry is shared by every channel.
    for (std::size_t by = 0; by < nb; ++by) {
      for (std::size_t bx = 0; bx < nb; ++bx) {
        for (std::size_t sy = 0; sy < ns; ++sy) {
          for (std::size_t sx = 0; sx < ns; ++sx) {
            const std::size_t k = ((by * nb + bx) * ns + sy) * ns + sx;
            xs[k] = std::clamp(roi.x + static_cast<double>(bx) * bw +
                                   detail::sample_offset(sx, ns, bw, cfg.placement),
                               0.0, static_cast<double>(s.w - 1));
            ys[k] = std::clamp(roi.y + static_cast<double>(by) * bh +
                                   detail::sample_offset(sy, ns, bh, cfg.placement),
                               0.0, static_cast<double>(s.h - 1));
            taps[k] = bilinear_taps(s.h, s.w, xs[k], ys[k]);
          }
        }
      }
    }
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto p = featmap.channel(0, c);
      for (std::size_t bin = 0; bin < nb * nb; ++bin) {
        T best = T(0);
        std::size_t best_k = 0;
        for (std::size_t q = 0; q < ns * ns; ++q) {
          const std::size_t k = bin * ns * ns + q;
          const auto& t = taps[k];
          const T v = static_cast<T>(t.w_tl * p[t.y_top * s.w + t.x_left] +
                                     t.w_tr * p[t.y_top * s.w + t.x_right] +
                                     t.w_bl * p[t.y_bottom * s.w + t.x_left] +
                                     t.w_br * p[t.y_bottom * s.w + t.x_right]);
          if (q == 0 || v > best) {
            best = v;
            best_k = k;
          }
        }
        const std::size_t out = (ri * s.c + c) * nb * nb + bin;
        r.features.data()[out] = best;
        r.records[out] = AlignRecord{xs[best_k], ys[best_k], static_cast<std::uint32_t>(c)};
      }
    }
  }
  return r;
}

/// Routes each bin's gradient to the four neighbours of its winning sample.
template <typename T>
Tensor<T> roi_align_backward(const Tensor<T>& grad_out, std::span<const AlignRecord> records,
                             const Shape& featmap_shape) {
  if (grad_out.size() != records.size()) {
    throw ShapeError("roi_align backward: grad " + grad_out.shape().str() + " vs " +
                     std::to_string(records.size()) + " records");
  }
  if (featmap_shape.n != 1 || (grad_out.size() > 0 && grad_out.shape().c != featmap_shape.c)) {
    throw ShapeError("roi_align backward: grad " + grad_out.shape().str() +
                     " incompatible with feature map " + featmap_shape.str());
  }
  Tensor<T> g(featmap_shape);
  const std::size_t w = featmap_shape.w;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const T d = grad_out.data()[i];
    if (d == T(0)) continue;
    const AlignRecord& rec = records[i];
    if (rec.channel >= featmap_shape.c || rec.x > static_cast<double>(featmap_shape.w - 1) ||
        rec.y > static_cast<double>(featmap_shape.h - 1)) {
      throw ShapeError("roi_align backward: record outside feature map " + featmap_shape.str());
    }
    const auto t = bilinear_taps(featmap_shape.h, featmap_shape.w, rec.x, rec.y);
    auto p = g.channel(0, rec.channel);
    p[t.y_top * w + t.x_left] += static_cast<T>(t.w_tl) * d;
    p[t.y_top * w + t.x_right] += static_cast<T>(t.w_tr) * d;
    p[t.y_bottom * w + t.x_left] += static_cast<T>(t.w_bl) * d;
    p[t.y_bottom * w + t.x_right] += static_cast<T>(t.w_br) * d;
  }
  return g;
}

template <typename T>
Tensor<T> roi_align_backward(const Tensor<T>& grad_out, const RoiAlignResult<T>& fwd) {
  return roi_align_backward(grad_out, std::span<const AlignRecord>(fwd.records),
                            fwd.featmap_shape);
}

// ---------------------------------------------------------------------------
// RoIPool: boundaries rounded to integers before max pooling.

template <typename T>
struct RoiPoolResult {
  Tensor<T> features;               // R x C x bins x bins
  std::vector<std::size_t> argmax;  // flat feature-map index per output
  Shape featmap_shape;
};

/// Integer cell range [begin, end) of bin `j` along one axis of a rounded RoI.
struct PoolSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline PoolSpan roi_pool_span(double start, double extent, std::size_t j, std::size_t bins,
                              std::size_t limit) {
  const auto lo = static_cast<long long>(std::llround(start));
  const auto hi = static_cast<long long>(std::llround(start + extent));
  const long long len = std::max(hi - lo, 1LL);
  const double bin = static_cast<double>(len) / static_cast<double>(bins);
  long long b = lo + static_cast<long long>(std::floor(static_cast<double>(j) * bin));
  long long e = lo + static_cast<long long>(std::ceil(static_cast<double>(j + 1) * bin));
  const long long lim = static_cast<long long>(limit);
  const long long cb = std::clamp(b, 0LL, lim);
  const long long ce = std::clamp(e, 0LL, lim);
  if (ce <= cb) {
    // Empty after clipping: fall back to the nearest single cell.
    const long long cell = std::clamp(b, 0LL, lim - 1);
    return PoolSpan{static_cast<std::size_t>(cell), static_cast<std::size_t>(cell + 1)};
  }
  return PoolSpan{static_cast<std::size_t>(cb), static_cast<std::size_t>(ce)};
}

template <typename T>
RoiPoolResult<T> roi_pool_forward(const Tensor<T>& featmap, std::span<const Rect> rois,
                                  std::size_t bins = 3) {
  const Shape& s = featmap.shape();
  if (s.n != 1) throw ShapeError("roi_pool: expected a single feature map, got " + s.str());
  RoiPoolResult<T> r{Tensor<T>(Shape{rois.size(), s.c, bins, bins}), {}, s};
  r.argmax.resize(r.features.size());
  for (std::size_t ri = 0; ri < rois.size(); ++ri) {
    detail::check_roi(rois[ri], ri);
    for (std::size_t by = 0; by < bins; ++by) {
      const PoolSpan ys = roi_pool_span(rois[ri].y, rois[ri].h, by, bins, s.h);
      for (std::size_t bx = 0; bx < bins; ++bx) {
        const PoolSpan xs = roi_pool_span(rois[ri].x, rois[ri].w, bx, bins, s.w);
        for (std::size_t c = 0; c < s.c; ++c) {
          std::size_t best = featmap.index(0, c, ys.begin, xs.begin);
          for (std::size_t y = ys.begin; y < ys.end; ++y) {
            for (std::size_t x = xs.begin; x < xs.end; ++x) {
              const std::size_t i = featmap.index(0, c, y, x);
              if (featmap.data()[i] > featmap.data()[best]) best = i;
            }
          }
          const std::size_t out = ((ri * s.c + c) * bins + by) * bins + bx;
          r.features.data()[out] = featmap.data()[best];
          r.argmax[out] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> roi_pool_backward(const Tensor<T>& grad_out, std::span<const std::size_t> argmax,
                            const Shape& featmap_shape) {
  if (grad_out.size() != argmax.size()) {
    throw ShapeError("roi_pool backward: grad " + grad_out.shape().str() + " vs " +
                     std::to_string(argmax.size()) + " records");
  }
  Tensor<T> g(featmap_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= g.size()) {
      throw ShapeError("roi_pool backward: record outside feature map " + featmap_shape.str());
    }
    g.data()[argmax[i]] += grad_out.data()[i];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Continuity sweep: how each extractor reacts to sub-cell RoI translations.

struct SweepRow {
  double offset = 0;       // x shift of the RoI relative to the base box
  double align_delta = 0;  // max |change| of RoIAlign output vs the previous offset
  double pool_delta = 0;   // same for RoIPool
  bool pool_boundary = false;  // a rounded RoI edge moved since the previous offset
};

/// Slides `base` right by k * step for k = 0 .. steps-1. Row 0 carries zero deltas.
template <typename T>
std::vector<SweepRow> continuity_sweep(const Tensor<T>& featmap, const Rect& base, double step,
                                       std::size_t steps, const RoiAlignConfig& cfg = {}) {
  std::vector<SweepRow> rows;
  Tensor<T> prev_align, prev_pool;
  long long prev_lo = 0, prev_hi = 0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double off = static_cast<double>(k) * step;
    const std::vector<Rect> roi{Rect{base.x + off, base.y, base.w, base.h}};
    auto a = roi_align_forward(featmap, std::span<const Rect>(roi), cfg).features;
    auto p = roi_pool_forward(featmap, std::span<const Rect>(roi), cfg.bins).features;
    const long long lo = std::llround(roi[0].x), hi = std::llround(roi[0].x + roi[0].w);
    SweepRow row{off, 0.0, 0.0, false};
    if (k > 0) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        row.align_delta = std::max(row.align_delta,
                                   static_cast<double>(std::abs(a.data()[i] - prev_align.data()[i])));
        row.pool_delta = std::max(row.pool_delta,
                                  static_cast<double>(std::abs(p.data()[i] - prev_pool.data()[i])));
      }
      row.pool_boundary = lo != prev_lo || hi != prev_hi;
    }
    rows.push_back(row);
    prev_align = std::move(a);
    prev_pool = std::move(p);
    prev_lo = lo;
    prev_hi = hi;
  }
  return rows;
}

}  // namespace fsnet
