#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fsnet/roi.hpp"
#include "support/oracles.hpp"

namespace fsnet {
namespace {

using testing::bilinear_formula;
using testing::random_tensor;

Tensor<double> two_by_two() { return Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}); }

// Max over every sample point of each bin, evaluated with the four-term formula.
Tensor<double> brute_force_align(const Tensor<double>& m, const std::vector<Rect>& rois,
                                 const RoiAlignConfig& cfg) {
  const std::size_t nb = cfg.bins, ns = cfg.samples, C = m.shape().c;
  Tensor<double> out(Shape{rois.size(), C, nb, nb});
  for (std::size_t r = 0; r < rois.size(); ++r)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t by = 0; by < nb; ++by)
        for (std::size_t bx = 0; bx < nb; ++bx) {
          double best = -1e300;
          for (std::size_t sy = 0; sy < ns; ++sy)
            for (std::size_t sx = 0; sx < ns; ++sx) {
              const double off = cfg.placement == SamplePlacement::cell_center ? 0.5 : 0.0;
              const double bw = rois[r].w / nb, bh = rois[r].h / nb;
              const double x = rois[r].x + bx * bw + (sx + off) * bw / ns;
              const double y = rois[r].y + by * bh + (sy + off) * bh / ns;
              best = std::max(best, bilinear_formula(m, c, x, y));
            }
          out(r, c, by, bx) = best;
        }
  return out;
}

TEST(MapRoi, DividesByStride) {
  const Rect r{3.5, 2.25, 10, 7};
  EXPECT_EQ(map_roi_to_feature(r, 1.0), r);
  EXPECT_EQ(map_roi_to_feature(Rect{8, 8, 16, 16}, 8.0), (Rect{1, 1, 2, 2}));
  EXPECT_EQ(map_roi_to_feature(Rect{10, 10, 10, 10}, 8.0), (Rect{1.25, 1.25, 1.25, 1.25}));
  EXPECT_THROW(map_roi_to_feature(r, 0.0), Error);
}

TEST(Bilinear, LatticeCentroidAndInterior) {
  const auto m = two_by_two();
  EXPECT_EQ(bilinear_sample(m, 0, 0.0, 0.0), 1.0);
  EXPECT_EQ(bilinear_sample(m, 0, 1.0, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(bilinear_sample(m, 0, 0.5, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(bilinear_sample(m, 0, 0.25, 0.75), 2.75);
}

TEST(Bilinear, ClampsOutOfBounds) {
  const auto m = two_by_two();
  EXPECT_EQ(bilinear_sample(m, 0, -3.0, -1.0), 1.0);
  EXPECT_EQ(bilinear_sample(m, 0, 5.0, 0.0), 2.0);
  EXPECT_EQ(bilinear_sample(m, 0, 9.0, 9.0), 4.0);
}

TEST(Bilinear, MatchesFourTermFormulaOnRandomMaps) {
  std::mt19937_64 rng(1);
  auto m = random_tensor(Shape{1, 2, 7, 9}, rng);
  std::uniform_real_distribution<double> ux(0, 8), uy(0, 6);
  for (int i = 0; i < 500; ++i) {
    const double x = ux(rng), y = uy(rng);
    EXPECT_NEAR(bilinear_sample(m, 1, x, y), bilinear_formula(m, 1, x, y), 1e-12);
  }
}

TEST(Bilinear, LipschitzContinuity) {
  std::mt19937_64 rng(2);
  auto m = random_tensor(Shape{1, 1, 8, 8}, rng);
  double lip = 0;  // max adjacent-pixel difference
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      if (x + 1 < 8) lip = std::max(lip, std::abs(m(0, 0, y, x + 1) - m(0, 0, y, x)));
      if (y + 1 < 8) lip = std::max(lip, std::abs(m(0, 0, y + 1, x) - m(0, 0, y, x)));
    }
  std::uniform_real_distribution<double> u(0, 7 - 1e-6);
  const double d = 1e-6;
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng), y = u(rng);
    const double f = bilinear_sample(m, 0, x, y);
    EXPECT_LE(std::abs(bilinear_sample(m, 0, x + d, y) - f), lip * d + 1e-15);
    EXPECT_LE(std::abs(bilinear_sample(m, 0, x, y + d) - f), lip * d + 1e-15);
  }
}

TEST(RoiAlign, ConstantMap) {
  Tensor<double> m(Shape{1, 3, 6, 6}, 1.25);
  std::vector<Rect> rois{{0.3, 0.1, 4.2, 2.7}, {-1, -1, 9, 9}};
  auto r = roi_align_forward(m, std::span<const Rect>(rois));
  for (double v : r.features.values()) EXPECT_DOUBLE_EQ(v, 1.25);
}

TEST(RoiAlign, MatchesBruteForceSampling) {
  std::mt19937_64 rng(3);
  auto m = random_tensor(Shape{1, 4, 10, 12}, rng);
  std::vector<Rect> rois{{1, 1, 3, 3}, {2.3, 1.7, 5.1, 4.4}, {0, 0, 11, 9}, {7.9, 6.2, 2.05, 1.3}};
  for (std::size_t ns : {1u, 2u, 3u}) {
    for (auto placement : {SamplePlacement::cell_center, SamplePlacement::cell_corner}) {
      RoiAlignConfig cfg{3, ns, placement};
      auto got = roi_align_forward(m, std::span<const Rect>(rois), cfg);
      auto want = brute_force_align(m, rois, cfg);
      ASSERT_EQ(got.features.shape(), want.shape());
      for (std::size_t i = 0; i < want.size(); ++i)
        EXPECT_NEAR(got.features.data()[i], want.data()[i], 1e-12);
    }
  }
}

TEST(RoiAlign, IdenticalRoisGiveIdenticalSlices) {
  std::mt19937_64 rng(4);
  auto m = random_tensor(Shape{1, 5, 8, 8}, rng);
  std::vector<Rect> rois{{1.2, 2.1, 4.4, 3.3}, {1.2, 2.1, 4.4, 3.3}};
  auto r = roi_align_forward(m, std::span<const Rect>(rois));
  const std::size_t slice = 5 * 9;
  for (std::size_t i = 0; i < slice; ++i) EXPECT_EQ(r.features.data()[i], r.features.data()[slice + i]);
}

TEST(RoiAlign, DegenerateRoiNamesIndex) {
  Tensor<double> m(Shape{1, 1, 4, 4});
  std::vector<Rect> rois{{0, 0, 2, 2}, {1, 1, 0, 2}};
  try {
    roi_align_forward(m, std::span<const Rect>(rois));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos);
  }
}

TEST(RoiAlignBackward, ZeroGradient) {
  std::mt19937_64 rng(5);
  auto m = random_tensor(Shape{1, 2, 6, 6}, rng);
  std::vector<Rect> rois{{0.5, 0.5, 4, 4}};
  auto fwd = roi_align_forward(m, std::span<const Rect>(rois));
  Tensor<double> zero(fwd.features.shape());
  auto g = roi_align_backward(zero, fwd);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(RoiAlignBackward, IntegerWinnerTakesWholeGradient) {
  std::vector<AlignRecord> rec{{2.0, 1.0, 0}};
  Tensor<double> grad(Shape{1, 1, 1, 1}, 3.5);
  auto g = roi_align_backward(grad, std::span<const AlignRecord>(rec), Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g.data()[i], i == 1 * 4 + 2 ? 3.5 : 0.0);
}

TEST(RoiAlignBackward, ShapeMismatch) {
  std::vector<AlignRecord> rec{{2.0, 1.0, 0}};
  Tensor<double> grad(Shape{1, 1, 1, 1}, 1.0);
  EXPECT_THROW(roi_align_backward(grad, std::span<const AlignRecord>(rec), Shape{1, 2, 4, 4}), ShapeError);
  EXPECT_THROW(roi_align_backward(grad, std::span<const AlignRecord>(rec), Shape{1, 1, 2, 2}), ShapeError);
}

TEST(RoiAlignBackward, MatchesFiniteDifferencesOn8x8) {
  std::mt19937_64 rng(6);
  auto m = random_tensor(Shape{1, 1, 8, 8}, rng);
  std::vector<Rect> rois{{0.3, 0.6, 5.2, 4.9}, {2.7, 1.1, 4.6, 6.3}};
  auto fwd = roi_align_forward(m, std::span<const Rect>(rois));
  auto probe = random_tensor(fwd.features.shape(), rng);
  auto loss = [&] {
    auto f = roi_align_forward(m, std::span<const Rect>(rois)).features;
    return std::inner_product(f.data(), f.data() + f.size(), probe.data(), 0.0);
  };
  auto g = roi_align_backward(probe, fwd);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double num = testing::central_difference(loss, m.data()[i], 1e-4);
    EXPECT_LT(testing::relative_error(g.data()[i], num), 1e-4) << i;
  }
}

TEST(RoiAlignBackward, GradientMassIsConserved) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_tensor(Shape{1, 3, 9, 7}, rng);
    std::uniform_real_distribution<double> u(-1, 6);
    std::vector<Rect> rois{{u(rng), u(rng), 3.3, 4.1}, {u(rng), u(rng), 5.0, 2.2}};
    auto fwd = roi_align_forward(m, std::span<const Rect>(rois));
    auto grad = random_tensor(fwd.features.shape(), rng);
    auto g = roi_align_backward(grad, fwd);
    const double in = std::accumulate(grad.data(), grad.data() + grad.size(), 0.0);
    const double out = std::accumulate(g.data(), g.data() + g.size(), 0.0);
    EXPECT_NEAR(in, out, 1e-10);
  }
}

TEST(RoiPool, IntegerAlignedMatchesCornerSampledAlign) {
  std::mt19937_64 rng(8);
  auto m = random_tensor(Shape{1, 3, 8, 8}, rng);
  std::vector<Rect> rois{{1, 2, 3, 3}, {4, 0, 3, 3}};
  auto pool = roi_pool_forward(m, std::span<const Rect>(rois), 3);
  auto align = roi_align_forward(m, std::span<const Rect>(rois), RoiAlignConfig{3, 1, SamplePlacement::cell_corner});
  auto oracle = brute_force_align(m, rois, RoiAlignConfig{3, 1, SamplePlacement::cell_corner});
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    EXPECT_EQ(pool.features.data()[i], oracle.data()[i]);
    EXPECT_EQ(align.features.data()[i], oracle.data()[i]);
  }
}

TEST(RoiPool, ConstantMap) {
  Tensor<double> m(Shape{1, 2, 6, 6}, -0.5);
  std::vector<Rect> rois{{0.2, 0.4, 1.0, 0.6}, {1, 1, 5, 5}};
  auto r = roi_pool_forward(m, std::span<const Rect>(rois), 3);
  for (double v : r.features.values()) EXPECT_EQ(v, -0.5);
}

TEST(RoiPool, SubPixelShiftIsInvisibleToPoolButNotAlign) {
  std::mt19937_64 rng(9);
  auto m = random_tensor(Shape{1, 4, 12, 12}, rng);
  std::vector<Rect> a{{2.0, 3.0, 6.0, 6.0}}, b{{2.3, 3.0, 6.0, 6.0}};
  EXPECT_EQ(roi_pool_forward(m, std::span<const Rect>(a)).features,
            roi_pool_forward(m, std::span<const Rect>(b)).features);
  EXPECT_NE(roi_align_forward(m, std::span<const Rect>(a)).features,
            roi_align_forward(m, std::span<const Rect>(b)).features);
}

TEST(ContinuitySweep, AlignMovesEveryStepPoolOnlyAtRoundingBoundaries) {
  std::mt19937_64 rng(12);
  auto m = random_tensor(Shape{1, 3, 16, 16}, rng);
  const auto rows = continuity_sweep(m, Rect{3.1, 4.0, 7.3, 6.0}, 0.05, 20);
  ASSERT_EQ(rows.size(), 20u);
  EXPECT_EQ(rows[0].align_delta, 0.0);
  std::size_t crossings = 0, pool_changes = 0;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    EXPECT_DOUBLE_EQ(rows[k].offset, 0.05 * static_cast<double>(k));
    EXPECT_GT(rows[k].align_delta, 0.0) << "step " << k;
    // Independent count: did either rounded edge move?
    const double x0 = 3.1 + 0.05 * static_cast<double>(k - 1), x1 = 3.1 + 0.05 * static_cast<double>(k);
    const bool moved = std::llround(x0) != std::llround(x1) ||
                       std::llround(x0 + 7.3) != std::llround(x1 + 7.3);
    EXPECT_EQ(rows[k].pool_boundary, moved) << "step " << k;
    crossings += moved;
    pool_changes += rows[k].pool_delta > 0;
    if (!moved) EXPECT_EQ(rows[k].pool_delta, 0.0) << "step " << k;
  }
  EXPECT_GE(crossings, 1u);
  EXPECT_LE(pool_changes, crossings);
}

TEST(RoiPool, TinyRoiFallsBackToNearestCell) {
  Tensor<double> m(Shape{1, 1, 4, 4});
  std::iota(m.storage().begin(), m.storage().end(), 0.0);
  std::vector<Rect> rois{{3.8, 3.9, 0.1, 0.05}};
  auto r = roi_pool_forward(m, std::span<const Rect>(rois), 3);
  for (double v : r.features.values()) EXPECT_EQ(v, 15.0);
}

TEST(RoiPool, BackwardRoutesToArgmax) {
  std::mt19937_64 rng(10);
  auto m = random_tensor(Shape{1, 2, 7, 7}, rng);
  std::vector<Rect> rois{{0.4, 1.2, 5.3, 4.7}};
  auto fwd = roi_pool_forward(m, std::span<const Rect>(rois));
  auto probe = random_tensor(fwd.features.shape(), rng);
  auto g = roi_pool_backward(probe, std::span<const std::size_t>(fwd.argmax), fwd.featmap_shape);
  auto loss = [&] {
    auto f = roi_pool_forward(m, std::span<const Rect>(rois)).features;
    return std::inner_product(f.data(), f.data() + f.size(), probe.data(), 0.0);
  };
  for (std::size_t i = 0; i < m.size(); ++i)
    EXPECT_NEAR(g.data()[i], testing::central_difference(loss, m.data()[i], 1e-6), 1e-8);
}

}  // namespace
}  // namespace fsnet
