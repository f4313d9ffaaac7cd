#pragma once

// One-pass evaluation: center-error precision curve and overlap success curve.

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/rect.hpp"

namespace fsnet {

inline constexpr std::size_t kPrecisionPoints = 51;  // 0..50 px
inline constexpr std::size_t kSuccessPoints = 21;    // 0..1 step 0.05

inline double precision_threshold(std::size_t i) { return static_cast<double>(i); }
inline double success_threshold(std::size_t i) { return static_cast<double>(i) / 20.0; }

struct EvalCurves {
  std::vector<double> precision;  // fraction with center error <= threshold
  std::vector<double> success;    // fraction with IoU >= threshold
  double auc = 0;                 // mean of `success`
  double precision_at_20 = 0;
  double mean_iou = 0;
};

namespace detail {

inline void check_lengths(std::span<const Rect> pred, std::span<const Rect> gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("evaluation: " + std::to_string(pred.size()) + " predicted boxes but " +
                     std::to_string(gt.size()) + " ground-truth boxes");
  }
  if (gt.empty()) throw Error("evaluation: no frames");
}

}  // namespace detail

inline std::vector<double> precision_curve(std::span<const Rect> pred, std::span<const Rect> gt) {
  detail::check_lengths(pred, gt);
  std::vector<double> curve(kPrecisionPoints, 0.0);
  for (std::size_t f = 0; f < gt.size(); ++f) {
    const double d = center_distance(pred[f], gt[f]);
    for (std::size_t i = 0; i < kPrecisionPoints; ++i)
      if (d <= precision_threshold(i)) curve[i] += 1;
  }
  for (double& v : curve) v /= static_cast<double>(gt.size());
  return curve;
}

struct SuccessCurve {
  std::vector<double> curve;
  double auc = 0;
};

inline SuccessCurve success_curve(std::span<const Rect> pred, std::span<const Rect> gt) {
  detail::check_lengths(pred, gt);
  SuccessCurve out{std::vector<double>(kSuccessPoints, 0.0), 0.0};
  for (std::size_t f = 0; f < gt.size(); ++f) {
    const double o = iou(pred[f], gt[f]);
    for (std::size_t i = 0; i < kSuccessPoints; ++i)
      if (o >= success_threshold(i)) out.curve[i] += 1;
  }
  for (double& v : out.curve) {
    v /= static_cast<double>(gt.size());
    out.auc += v;
  }
  out.auc /= static_cast<double>(kSuccessPoints);
  return out;
}

inline EvalCurves evaluate(std::span<const Rect> pred, std::span<const Rect> gt) {
  EvalCurves e;
  e.precision = precision_curve(pred, gt);
  auto s = success_curve(pred, gt);
  e.success = std::move(s.curve);
  e.auc = s.auc;
  e.precision_at_20 = e.precision[20];
  for (std::size_t f = 0; f < gt.size(); ++f) e.mean_iou += iou(pred[f], gt[f]);
  e.mean_iou /= static_cast<double>(gt.size());
  return e;
}

/// `threshold,value` lines with a header row.
inline void write_curve_csv(std::ostream& out, const std::vector<double>& curve, bool success) {
  out << "threshold," << (success ? "success" : "precision") << '\n';
  for (std::size_t i = 0; i < curve.size(); ++i)
    out << (success ? success_threshold(i) : precision_threshold(i)) << ',' << curve[i] << '\n';
}

}  // namespace fsnet
