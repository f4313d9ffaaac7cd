#pragma once

// Ridge regression from RoI features to box offsets (dx, dy, dw, dh):
// dx, dy are centre shifts in units of the box width/height; dw, dh are log size ratios.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fsnet/error.hpp"
#include "fsnet/rect.hpp"
#include "fsnet/tensor.hpp"

namespace fsnet {

using BoxOffsets = std::array<double, 4>;

/// Offsets that move `from` onto `to`.
inline BoxOffsets offsets_between(const Rect& from, const Rect& to) {
  return {(to.cx() - from.cx()) / from.w, (to.cy() - from.cy()) / from.h,
          std::log(to.w / from.w), std::log(to.h / from.h)};
}

inline Rect apply_offsets(const Rect& r, const BoxOffsets& d) {
  const double cx = r.cx() + d[0] * r.w;
  const double cy = r.cy() + d[1] * r.h;
  const double w = r.w * std::exp(d[2]);
  const double h = r.h * std::exp(d[3]);
  return Rect{cx - 0.5 * w, cy - 0.5 * h, w, h};
}

struct BBoxRegressor {
  Matrix<double> weight;     // 4 x D
  std::vector<double> bias;  // 4
  double ridge_lambda = 1000;

  bool trained() const { return bias.size() == 4; }

  BoxOffsets predict(std::span<const double> feature) const {
    if (!trained()) throw Error("bbox regressor used before training");
    if (feature.size() != weight.cols()) {
      throw ShapeError("bbox regressor expects " + std::to_string(weight.cols()) +
                       " features, got " + std::to_string(feature.size()));
    }
    BoxOffsets d{};
    for (std::size_t k = 0; k < 4; ++k) {
      double s = bias[k];
      const auto w = weight.row(k);
      for (std::size_t i = 0; i < feature.size(); ++i) s += w[i] * feature[i];
      d[k] = s;
    }
    return d;
  }
};

/// Fits offsets from each row of `features` (box rects[i]) to `gt`. The bias is fitted
/// on centred data and left unpenalized. Solves the dual system when N < D.
inline BBoxRegressor bbox_regress_train(const Matrix<double>& features, std::span<const Rect> rects,
                                        const Rect& gt, double lambda = 1000) {
  const std::size_t n = features.rows();
  const std::size_t dim = features.cols();
  if (n != rects.size()) {
    throw ShapeError("bbox regression: " + std::to_string(n) + " feature rows for " +
                     std::to_string(rects.size()) + " boxes");
  }
  if (n < 2) throw Error("bbox regression needs at least 2 samples, got " + std::to_string(n));
  if (!(lambda > 0)) throw Error("bbox regression: ridge lambda must be > 0");

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat X = Eigen::Map<const Mat>(features.data(), static_cast<Eigen::Index>(n),
                                static_cast<Eigen::Index>(dim));
  Mat Y(static_cast<Eigen::Index>(n), 4);
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = offsets_between(rects[i], gt);
    for (int k = 0; k < 4; ++k) Y(static_cast<Eigen::Index>(i), k) = d[k];
  }
  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const Eigen::RowVectorXd y_mean = Y.colwise().mean();
  X.rowwise() -= x_mean;
  Y.rowwise() -= y_mean;

  Mat W;  // D x 4
  if (n < dim) {
    Mat K = X * X.transpose();
    K.diagonal().array() += lambda;
    W = X.transpose() * K.ldlt().solve(Y);
  } else {
    Mat G = X.transpose() * X;
    G.diagonal().array() += lambda;
    W = G.ldlt().solve(X.transpose() * Y);
  }
  const Eigen::RowVectorXd b = y_mean - x_mean * W;

  BBoxRegressor reg;
  reg.ridge_lambda = lambda;
  reg.weight = Matrix<double>(4, dim);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < dim; ++i)
      reg.weight(k, i) = W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  reg.bias.assign(b.data(), b.data() + 4);
  return reg;
}

inline Rect bbox_regress_apply(const BBoxRegressor& reg, std::span<const double> feature,
                               const Rect& rect) {
  return apply_offsets(rect, reg.predict(feature));
}

}  // namespace fsnet
