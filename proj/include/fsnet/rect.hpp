#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

namespace fsnet {

/// Axis-aligned box: (x, y) is the top-left corner, sizes in pixels.
struct Rect {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  bool valid() const { return w > 0 && h > 0; }

  friend bool operator==(const Rect&, const Rect&) = default;

  std::string str() const {
    return "(" + std::to_string(x) + ", " + std::to_string(y) + ", " + std::to_string(w) + ", " +
           std::to_string(h) + ")";
  }
};

inline std::ostream& operator<<(std::ostream& os, const Rect& r) { return os << r.str(); }

struct ImageSize {
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Intersection over union, in [0, 1]. Areas are taken from the same edge differences
/// as the intersection, so a box compared with itself scores exactly 1.
inline double iou(const Rect& a, const Rect& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (a.right() - a.x) * (a.bottom() - a.y);
  const double area_b = (b.right() - b.x) * (b.bottom() - b.y);
  const double uni = area_a + area_b - inter;
  return uni > 0 ? std::min(1.0, inter / uni) : 0.0;
}

inline double center_distance(const Rect& a, const Rect& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

/// Shrinks the box to at most the image size, then shifts it fully inside.
inline Rect clip_to_image(Rect r, ImageSize size) {
  const double iw = static_cast<double>(size.width);
  const double ih = static_cast<double>(size.height);
  r.w = std::clamp(r.w, 1.0, iw);
  r.h = std::clamp(r.h, 1.0, ih);
  r.x = std::clamp(r.x, 0.0, iw - r.w);
  r.y = std::clamp(r.y, 0.0, ih - r.h);
  return r;
}

inline bool inside_image(const Rect& r, ImageSize size) {
  return r.x >= 0 && r.y >= 0 && r.right() <= static_cast<double>(size.width) &&
         r.bottom() <= static_cast<double>(size.height);
}

}  // namespace fsnet
