#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "fsnet/feature_select.hpp"
#include "fsnet/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fsnet;
using fsnet::testing::random_tensor;

namespace {

std::vector<double> random_map(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 3.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Direct loop binning, written independently of bin_indices.
std::vector<std::size_t> loop_counts(const std::vector<double>& v, std::size_t bins) {
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi == lo) hi = lo + 1e-12;
  std::vector<std::size_t> counts(bins, 0);
  for (double x : v) {
    std::size_t b = 0;
    while (b + 1 < bins && x >= lo + (hi - lo) * static_cast<double>(b + 1) / bins) ++b;
    ++counts[b];
  }
  return counts;
}

std::size_t loop_bin(double x, double lo, double hi, std::size_t bins) {
  if (hi == lo) hi = lo + 1e-12;
  std::size_t b = 0;
  while (b + 1 < bins && x >= lo + (hi - lo) * static_cast<double>(b + 1) / bins) ++b;
  return b;
}

// Builds the joint table explicitly and sums p log(p / (px py)) term by term.
double joint_table_mi(const std::vector<double>& a, const std::vector<double>& b,
                      std::size_t bins) {
  const auto [alo, ahi] = std::minmax_element(a.begin(), a.end());
  const auto [blo, bhi] = std::minmax_element(b.begin(), b.end());
  std::vector<std::vector<double>> p(bins, std::vector<double>(bins, 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    p[loop_bin(a[i], *alo, *ahi, bins)][loop_bin(b[i], *blo, *bhi, bins)] += 1.0 / a.size();
  }
  std::vector<double> px(bins, 0.0), py(bins, 0.0);
  for (std::size_t x = 0; x < bins; ++x)
    for (std::size_t y = 0; y < bins; ++y) {
      px[x] += p[x][y];
      py[y] += p[x][y];
    }
  double mi = 0;
  for (std::size_t x = 0; x < bins; ++x)
    for (std::size_t y = 0; y < bins; ++y)
      if (p[x][y] > 0) mi += p[x][y] * std::log(p[x][y] / (px[x] * py[y]));
  return mi;
}

MIMatrix matrix_from_representatives(const std::vector<double>& rep) {
  // Channel i's largest off-diagonal entry is rep[i] when entries are min(rep_i, rep_j)
  // and at least one other channel has a representative >= rep[i].
  const std::size_t C = rep.size();
  MIMatrix m{C, std::vector<double>(C * C, 0.0)};
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j)
      if (i != j) m(i, j) = std::min(rep[i], rep[j]);
  return m;
}

}  // namespace

TEST(Histogram, ConstantMapLandsInFirstBin) {
  std::vector<double> v(50, 3.5);
  auto h = activation_histogram<double>(v);
  ASSERT_EQ(h.counts.size(), 20u);
  ASSERT_EQ(h.bin_edges.size(), 21u);
  EXPECT_EQ(h.counts[0], 50u);
  EXPECT_EQ(h.total, 50u);
  EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), 50u);
}

TEST(Histogram, UniformLatticeOnePerBin) {
  std::vector<double> v(20);
  std::iota(v.begin(), v.end(), 0.0);
  auto h = activation_histogram<double>(v);
  for (auto c : h.counts) EXPECT_EQ(c, 1u);
  EXPECT_DOUBLE_EQ(h.bin_edges.front(), 0.0);
  EXPECT_DOUBLE_EQ(h.bin_edges.back(), 19.0);
}

TEST(Histogram, MatchesLoopOracle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto v = random_map(257, seed);
    auto h = activation_histogram<double>(v);
    EXPECT_EQ(h.counts, loop_counts(v, 20)) << "seed " << seed;
    for (std::size_t i = 0; i + 1 < h.bin_edges.size(); ++i)
      EXPECT_LT(h.bin_edges[i], h.bin_edges[i + 1]);
  }
}

TEST(Histogram, EmptyMapRejected) {
  std::vector<double> v;
  EXPECT_THROW(activation_histogram<double>(v), Error);
}

TEST(MutualInformation, ConstantPartnerIsZero) {
  auto a = random_map(256, 3);
  std::vector<double> b(256, -2.0);
  EXPECT_EQ(mutual_information<double>(a, b), 0.0);
  EXPECT_EQ(mutual_information<double>(b, a), 0.0);
}

TEST(MutualInformation, SelfEqualsEntropy) {
  std::vector<double> v(400);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>((i * 37) % 20);
  const double h = histogram_entropy(activation_histogram<double>(v));
  EXPECT_NEAR(mutual_information<double>(v, v), h, 1e-12);
  EXPECT_NEAR(h, std::log(20.0), 1e-12);
  auto r = random_map(300, 9);
  EXPECT_NEAR(mutual_information<double>(r, r), histogram_entropy(activation_histogram<double>(r)),
              1e-12);
}

TEST(MutualInformation, MatchesJointTableOracle) {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    auto a = random_map(256, seed);
    auto b = random_map(256, seed + 100);
    // Correlate half the pairs so the values are not all near zero.
    if (seed % 2 == 0)
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.5 * b[i] + a[i];
    EXPECT_NEAR(mutual_information<double>(a, b), joint_table_mi(a, b, 20), 1e-10);
  }
}

TEST(MutualInformation, SymmetricAndNonNegative) {
  for (std::uint64_t seed = 30; seed < 40; ++seed) {
    auto a = random_map(64, seed);
    auto b = random_map(64, seed * 7);
    const double ab = mutual_information<double>(a, b);
    EXPECT_GE(ab, 0.0);
    EXPECT_NEAR(ab, mutual_information<double>(b, a), 1e-12);
  }
}

TEST(MutualInformation, SizeMismatchThrows) {
  std::vector<double> a(10, 1.0), b(11, 1.0);
  EXPECT_THROW(mutual_information<double>(a, b), ShapeError);
}

TEST(MiMatrix, IdenticalPairGivesEntropy) {
  Tensor<double> t(Shape{1, 2, 4, 5});
  for (std::size_t i = 0; i < 20; ++i) {
    t(0, 0, i / 5, i % 5) = static_cast<double>(i);
    t(0, 1, i / 5, i % 5) = static_cast<double>(i);
  }
  auto m = mi_matrix(t);
  const double h = histogram_entropy(activation_histogram<double>(t.channel(0, 0)));
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_EQ(m(1, 1), 0.0);
  EXPECT_NEAR(m(0, 1), h, 1e-12);
  EXPECT_EQ(m(0, 1), m(1, 0));
}

TEST(MiMatrix, SymmetricAndMatchesPairwise) {
  std::mt19937_64 rng(5);
  auto t = random_tensor(Shape{1, 4, 8, 8}, rng);
  auto m = mi_matrix(t);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(m(i, i), 0.0);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(m(i, j), m(j, i));
      EXPECT_GE(m(i, j), -1e-12);
      if (i != j) {
        std::vector<double> a(t.channel(0, i).begin(), t.channel(0, i).end());
        std::vector<double> b(t.channel(0, j).begin(), t.channel(0, j).end());
        EXPECT_NEAR(m(i, j), joint_table_mi(a, b, 20), 1e-10);
      }
    }
  }
}

TEST(MiMatrix, NeedsTwoChannels) {
  Tensor<double> t(Shape{1, 1, 3, 3});
  EXPECT_THROW(mi_matrix(t), Error);
}

TEST(SelectChannels, KeepsSmallestRepresentatives) {
  auto m = matrix_from_representatives({0.1, 0.9, 0.2, 0.8});
  auto mask = select_channels(m, {}, 2);
  EXPECT_EQ(mask.kept_indices(), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(mask.kept_count, 2u);
  EXPECT_EQ(mask.provenance[1], ChannelFate::high_redundancy);
  EXPECT_DOUBLE_EQ(mask.representative[0], 0.1);
}

TEST(SelectChannels, ZeroChannelExcludedFirst) {
  auto m = matrix_from_representatives({0.5, 0.0, 0.6, 0.7});
  const std::vector<std::size_t> zero{1};
  auto mask = select_channels(m, zero, 3);
  EXPECT_FALSE(mask.keep[1]);
  EXPECT_EQ(mask.provenance[1], ChannelFate::zero_map);
  EXPECT_EQ(mask.kept_count, 3u);
}

TEST(SelectChannels, KeepAllIsIdentity) {
  std::mt19937_64 rng(2);
  auto m = mi_matrix(random_tensor(Shape{1, 6, 5, 5}, rng));
  auto mask = select_channels(m, {}, 6);
  EXPECT_EQ(mask.kept_count, 6u);
  EXPECT_TRUE(std::all_of(mask.keep.begin(), mask.keep.end(), [](bool b) { return b; }));
}

TEST(SelectChannels, KeepZeroRejected) {
  EXPECT_THROW(select_channels(matrix_from_representatives({0.1, 0.2}), {}, 0), Error);
}

TEST(SelectChannels, InfeasibleNamesAvailableCount) {
  auto m = matrix_from_representatives({0.1, 0.2, 0.3});
  const std::vector<std::size_t> zero{0};
  try {
    select_channels(m, zero, 3);
    FAIL();
  } catch (const InfeasibleError& e) {
    EXPECT_NE(std::string(e.what()).find("only 2"), std::string::npos) << e.what();
  }
}

TEST(SelectChannels, TiesGoToLowerIndex) {
  auto m = matrix_from_representatives({0.3, 0.3, 0.3, 0.3});
  auto mask = select_channels(m, {}, 2);
  EXPECT_EQ(mask.kept_indices(), (std::vector<std::size_t>{0, 1}));
}

TEST(SelectChannels, PermutationEquivariant) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 9;
    std::vector<double> rep(C);
    // Coarse values force ties so the index rule is exercised.
    std::uniform_int_distribution<int> d(0, 3);
    for (auto& r : rep) r = 0.1 * d(rng);
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> permuted(C);
    for (std::size_t i = 0; i < C; ++i) permuted[perm[i]] = rep[i];

    const std::size_t keep = 4;
    auto a = select_channels(matrix_from_representatives(rep), {}, keep);
    auto b = select_channels(matrix_from_representatives(permuted), {}, keep);

    for (std::size_t i = 0; i < C; ++i)
      EXPECT_EQ(a.representative[i], b.representative[perm[i]]);
    // Oracle: sort permuted labels by (representative, new index).
    std::vector<std::size_t> order(C);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return std::make_pair(b.representative[x], x) < std::make_pair(b.representative[y], y);
    });
    std::vector<bool> expect(C, false);
    for (std::size_t k = 0; k < keep; ++k) expect[order[k]] = true;
    EXPECT_EQ(b.keep, expect);

    // Without ties the kept set is the relabelled original.
    std::vector<double> sorted = a.representative;
    std::sort(sorted.begin(), sorted.end());
    if (sorted[keep - 1] != sorted[keep]) {
      for (std::size_t i = 0; i < C; ++i) EXPECT_EQ(a.keep[i], b.keep[perm[i]]);
    }
  }
}

namespace {

NetworkParams<double> small_net(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto p = make_network<double>(gradcheck_config(), rng);
  randomize_biases(p, rng);
  return p;
}

}  // namespace

TEST(PruneNetwork, AllTrueMaskIsIdentity) {
  auto p = small_net(1);
  auto q = prune_network(p, ChannelMask::all(p.feature_channels()));
  EXPECT_TRUE(p == q);
}

TEST(PruneNetwork, DropsFiltersAndColumns) {
  auto p = small_net(2);
  ChannelMask mask = ChannelMask::all(8);
  for (std::size_t c : {1u, 4u, 5u, 7u}) mask.keep[c] = false;
  mask.kept_count = 4;
  auto q = prune_network(p, mask);
  EXPECT_EQ(q.feature_channels(), 4u);
  EXPECT_EQ(q.fcs[0].weight.cols(), 36u);
  EXPECT_EQ(q.fcs[0].weight.size() * 2, p.fcs[0].weight.size());
  const std::vector<std::size_t> kept{0, 2, 3, 6};
  for (std::size_t k = 0; k < kept.size(); ++k) {
    EXPECT_EQ(q.convs[2].bias[k], p.convs[2].bias[kept[k]]);
    EXPECT_EQ(q.convs[2].weight(k, 3, 1, 2), p.convs[2].weight(kept[k], 3, 1, 2));
    for (std::size_t r = 0; r < q.fcs[0].weight.rows(); ++r)
      for (std::size_t cell = 0; cell < 9; ++cell)
        EXPECT_EQ(q.fcs[0].weight(r, k * 9 + cell), p.fcs[0].weight(r, kept[k] * 9 + cell));
  }
  EXPECT_TRUE(q.fcs[1].weight == p.fcs[1].weight);
  EXPECT_TRUE(q.convs[1].weight == p.convs[1].weight);
}

TEST(PruneNetwork, DefaultArchitectureHalvesFc1) {
  std::mt19937_64 rng(3);
  auto p = make_network<double>(NetworkConfig{}, rng);
  ChannelMask mask = ChannelMask::all(512);
  for (std::size_t c = 0; c < 512; c += 2) mask.keep[c] = false;
  mask.kept_count = 256;
  auto q = prune_network(p, mask);
  EXPECT_EQ(p.fcs[0].weight.cols(), 4608u);
  EXPECT_EQ(q.fcs[0].weight.cols(), 2304u);
  EXPECT_EQ(q.fcs[0].weight.size() * 2, p.fcs[0].weight.size());
}

TEST(PruneNetwork, MaskSizeMismatchThrows) {
  auto p = small_net(4);
  EXPECT_THROW(prune_network(p, ChannelMask::all(7)), ShapeError);
}

TEST(PruneNetwork, ZeroChannelsPreserveLogits) {
  auto p = small_net(5);
  // Silence channels 1, 3, 6 by a large negative bias and zero filters.
  for (std::size_t c : {1u, 3u, 6u}) {
    for (std::size_t i = 0; i < 6 * 9; ++i) p.convs[2].weight.data()[c * 54 + i] = 0.0;
    p.convs[2].bias[c] = -1.0;
  }
  std::mt19937_64 rng(6);
  auto image = random_tensor(Shape{1, 3, 32, 32}, rng);
  auto maps = conv_forward(p, image);
  auto zero = zero_channels(maps);
  ASSERT_EQ(zero, (std::vector<std::size_t>{1, 3, 6}));
  ChannelMask mask = ChannelMask::all(8);
  for (auto c : zero) mask.keep[c] = false;
  mask.kept_count = 5;
  auto q = prune_network(p, mask);
  const std::vector<Rect> rois{{2, 3, 12, 14}, {10, 8, 9, 20}, {0, 0, 32, 32}};
  std::mt19937_64 r1(0), r2(0);
  auto a = forward(p, image, rois, 0, Mode::eval, r1);
  auto b = forward(q, image, rois, 0, Mode::eval, r2);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_NEAR(a.values()[i], b.values()[i], 1e-12);
}

TEST(SelectForSequence, KeepsOnlyActiveChannels) {
  auto p = small_net(8);
  // Only channels 0..3 can fire; the rest are forced to zero.
  for (std::size_t c = 4; c < 8; ++c) {
    for (std::size_t i = 0; i < 54; ++i) p.convs[2].weight.data()[c * 54 + i] = 0.0;
    p.convs[2].bias[c] = -0.5;
  }
  for (std::size_t c = 0; c < 4; ++c) p.convs[2].bias[c] = 0.5;
  std::mt19937_64 rng(9);
  auto frame = random_tensor(Shape{1, 3, 32, 32}, rng);
  SelectionConfig cfg;
  cfg.keep_count = 2;
  auto mask = select_for_sequence(p, frame, cfg);
  EXPECT_EQ(mask.kept_count, 2u);
  for (auto c : mask.kept_indices()) EXPECT_LT(c, 4u);
  for (std::size_t c = 4; c < 8; ++c) EXPECT_EQ(mask.provenance[c], ChannelFate::zero_map);
  auto again = select_for_sequence(p, frame, cfg);
  EXPECT_EQ(mask.keep, again.keep);
  cfg.keep_count = 8;
  auto all = select_for_sequence(p, frame, cfg);
  EXPECT_EQ(all.kept_count, 8u);
}
