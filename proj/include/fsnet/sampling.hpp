#pragma once

// Box samplers: labelled training samples around a ground-truth box and
// tracking candidates around the previous estimate.

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/layers.hpp"
#include "fsnet/rect.hpp"

namespace fsnet {

struct LabeledSample {
  Rect rect;
  Label label = Label::target;
  double iou_with_gt = 0;
};

struct SamplingConfig {
  double t1 = 0.7;  // positives need IoU >= t1
  double t2 = 0.5;  // negatives need IoU <= t2
  double pos_trans_sigma = 0.1;  // per axis, times the box side
  double pos_scale_sigma = 0.0;  // log-1.05 units; 0 keeps the gt size
  double neg_scale_sigma = 1.0;
  // Share of negatives whose centre is drawn uniformly within +-neg_near_range box sizes
  // of the gt centre instead of over the whole frame.
  double neg_near_fraction = 0.5;
  double neg_near_range = 1.0;
  double scale_base = 1.05;
  std::size_t attempts_per_sample = 200;

  void validate() const {
    if (!(t2 <= t1)) throw Error("sampling: t2 must not exceed t1");
    if (!(t1 > 0 && t1 <= 1) || !(t2 >= 0 && t2 < 1)) throw Error("sampling: IoU thresholds out of range");
    if (attempts_per_sample == 0) throw Error("sampling: attempt budget must be positive");
    if (!(neg_near_fraction >= 0 && neg_near_fraction <= 1)) {
      throw Error("sampling: neg_near_fraction must lie in [0, 1]");
    }
  }
};

namespace detail {

inline Rect box_around(double cx, double cy, double w, double h) {
  return Rect{cx - 0.5 * w, cy - 0.5 * h, w, h};
}

inline std::string frame_label(std::optional<std::size_t> frame) {
  return frame ? "frame " + std::to_string(*frame) : std::string("frame ?");
}

}  // namespace detail

/// Exactly `n_pos` positives followed by `n_neg` negatives, all clipped to the image.
/// Positives jitter the gt centre with a Gaussian. Negatives get a log-normal size jitter
/// and a centre drawn uniformly, either near the gt or over the whole frame.
/// Draws outside the IoU contract are discarded.
inline std::vector<LabeledSample> sample_rois(const Rect& gt, ImageSize image, std::size_t n_pos,
                                              std::size_t n_neg, std::mt19937_64& rng,
                                              const SamplingConfig& cfg = {},
                                              std::optional<std::size_t> frame = std::nullopt) {
  cfg.validate();
  if (!gt.valid() || !inside_image(gt, image)) {
    throw Error(detail::frame_label(frame) + ": ground-truth box " + gt.str() +
                " is not inside the " + std::to_string(image.width) + "x" +
                std::to_string(image.height) + " image");
  }
  std::vector<LabeledSample> out;
  out.reserve(n_pos + n_neg);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double log_base = std::log(cfg.scale_base);

  std::size_t budget = cfg.attempts_per_sample * n_pos;
  std::size_t found = 0;
  while (found < n_pos) {
    if (budget-- == 0) {
      throw InfeasibleError(detail::frame_label(frame) + ": found only " + std::to_string(found) +
                            " of " + std::to_string(n_pos) + " positives with IoU >= " +
                            std::to_string(cfg.t1) + " within the attempt budget");
    }
    const double s = std::exp(log_base * cfg.pos_scale_sigma * normal(rng));
    const double cx = gt.cx() + cfg.pos_trans_sigma * gt.w * normal(rng);
    const double cy = gt.cy() + cfg.pos_trans_sigma * gt.h * normal(rng);
    const Rect r = clip_to_image(detail::box_around(cx, cy, gt.w * s, gt.h * s), image);
    const double o = iou(r, gt);
    if (o >= cfg.t1) {
      out.push_back({r, Label::target, o});
      ++found;
    }
  }

  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(image.width));
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(image.height));
  std::uniform_real_distribution<double> near(-cfg.neg_near_range, cfg.neg_near_range);
  const std::size_t n_near =
      static_cast<std::size_t>(std::llround(cfg.neg_near_fraction * static_cast<double>(n_neg)));
  budget = cfg.attempts_per_sample * n_neg;
  found = 0;
  while (found < n_neg) {
    if (budget-- == 0) {
      throw InfeasibleError(detail::frame_label(frame) + ": found only " + std::to_string(found) +
                            " of " + std::to_string(n_neg) + " negatives with IoU <= " +
                            std::to_string(cfg.t2) + " within the attempt budget");
    }
    const double s = std::exp(log_base * cfg.neg_scale_sigma * normal(rng));
    const bool close = found < n_near;
    const double cx = close ? gt.cx() + near(rng) * gt.w : ux(rng);
    const double cy = close ? gt.cy() + near(rng) * gt.h : uy(rng);
    const Rect r = clip_to_image(detail::box_around(cx, cy, gt.w * s, gt.h * s), image);
    const double o = iou(r, gt);
    if (o <= cfg.t2) {
      out.push_back({r, Label::background, o});
      ++found;
    }
  }
  return out;
}

struct CandidateConfig {
  double trans_sigma = 0.25;  // times mean(w, h)
  double scale_sigma = 0.5;   // log-1.05 units
  double scale_base = 1.05;
};

/// Tracking candidates around `prev`: Gaussian centre shift, log-normal scale, clipped.
inline std::vector<Rect> generate_candidates(const Rect& prev, ImageSize image, std::size_t n,
                                             std::mt19937_64& rng,
                                             const CandidateConfig& cfg = {}) {
  if (!prev.valid()) throw Error("generate_candidates: previous box " + prev.str() + " is empty");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = cfg.trans_sigma * 0.5 * (prev.w + prev.h);
  const double log_base = std::log(cfg.scale_base);
  std::vector<Rect> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = sigma * normal(rng);
    const double dy = sigma * normal(rng);
    const double s = std::exp(log_base * cfg.scale_sigma * normal(rng));
    out.push_back(clip_to_image(
        detail::box_around(prev.cx() + dx, prev.cy() + dy, prev.w * s, prev.h * s), image));
  }
  return out;
}

}  // namespace fsnet
