#pragma once

// Mutual-information feature-map selection for the last conv layer.
//
// Each map is binned on its own 20-bin equal-width grid over [min, max]; the
// joint distribution of two maps is the 20 x 20 product grid over co-located
// activations. A channel is summarized by its largest MI with any other
// surviving channel, and the channels with the smallest summaries are kept.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/network.hpp"
#include "fsnet/tensor.hpp"

namespace fsnet {

inline constexpr std::size_t kDefaultHistogramBins = 20;
// Width given to the range of a constant map so that every value lands in bin 0.
inline constexpr double kDegenerateRange = 1e-12;

struct ActivationHistogram {
  std::vector<double> bin_edges;     // bins + 1, ascending
  std::vector<std::size_t> counts;   // bins
  std::size_t total = 0;
};

/// Bin index of every element; the maximum lands in the last bin.
template <typename T>
std::vector<std::uint16_t> bin_indices(std::span<const T> map, std::size_t bins,
                                       double* lo_out = nullptr, double* hi_out = nullptr) {
  if (map.empty()) throw Error("histogram of an empty map");
  if (bins == 0 || bins > 0xFFFF) throw Error("histogram bin count out of range");
  const auto [mn, mx] = std::minmax_element(map.begin(), map.end());
  const double lo = static_cast<double>(*mn);
  double hi = static_cast<double>(*mx);
  if (!(hi > lo)) hi = lo + kDegenerateRange;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::uint16_t> idx(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double pos = (static_cast<double>(map[i]) - lo) / width;
    idx[i] = static_cast<std::uint16_t>(
        std::min(static_cast<std::size_t>(std::max(pos, 0.0)), bins - 1));
  }
  if (lo_out) *lo_out = lo;
  if (hi_out) *hi_out = hi;
  return idx;
}

template <typename T>
ActivationHistogram activation_histogram(std::span<const T> map,
                                         std::size_t bins = kDefaultHistogramBins) {
  double lo = 0, hi = 0;
  const auto idx = bin_indices(map, bins, &lo, &hi);
  ActivationHistogram h;
  h.bin_edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.bin_edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  h.bin_edges.back() = hi;
  h.counts.assign(bins, 0);
  for (auto b : idx) ++h.counts[b];
  h.total = map.size();
  return h;
}

/// Shannon entropy (nats) of a histogram.
inline double histogram_entropy(const ActivationHistogram& h) {
  double e = 0;
  for (auto c : h.counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(h.total);
    e -= p * std::log(p);
  }
  return e;
}

namespace detail {

// MI (nats) of two pre-binned maps; `joint` is scratch space of bins * bins.
inline double binned_mutual_information(std::span<const std::uint16_t> a,
                                        std::span<const std::uint16_t> b, std::size_t bins,
                                        std::vector<std::size_t>& joint) {
  joint.assign(bins * bins, 0);
  for (std::size_t i = 0; i < a.size(); ++i) ++joint[a[i] * bins + b[i]];
  std::vector<std::size_t> pa(bins, 0), pb(bins, 0);
  for (std::size_t x = 0; x < bins; ++x) {
    for (std::size_t y = 0; y < bins; ++y) {
      pa[x] += joint[x * bins + y];
      pb[y] += joint[x * bins + y];
    }
  }
  const double n = static_cast<double>(a.size());
  double mi = 0;
  for (std::size_t x = 0; x < bins; ++x) {
    for (std::size_t y = 0; y < bins; ++y) {
      const auto c = joint[x * bins + y];
      if (c == 0) continue;
      // p(x,y) / (p(x) p(y)) = c * n / (pa * pb)
      const double pxy = static_cast<double>(c) / n;
      mi += pxy * std::log(static_cast<double>(c) * n /
                           (static_cast<double>(pa[x]) * static_cast<double>(pb[y])));
    }
  }
  return std::max(mi, 0.0);
}

}  // namespace detail

template <typename T>
double mutual_information(std::span<const T> a, std::span<const T> b,
                          std::size_t bins = kDefaultHistogramBins) {
  if (a.size() != b.size()) {
    throw ShapeError("mutual_information: maps have " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " elements");
  }
  const auto ia = bin_indices(a, bins);
  const auto ib = bin_indices(b, bins);
  std::vector<std::size_t> joint;
  return detail::binned_mutual_information(ia, ib, bins, joint);
}

/// Symmetric C x C matrix of pairwise MI with a zero diagonal.
struct MIMatrix {
  std::size_t size = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * size + j]; }
};

/// Pairwise MI between the channels of a 1 x C x H x W tensor.
template <typename T>
MIMatrix mi_matrix(const Tensor<T>& maps, std::size_t bins = kDefaultHistogramBins) {
  const Shape& s = maps.shape();
  if (s.n != 1) throw ShapeError("mi_matrix: expected 1 x C x H x W, got " + s.str());
  if (s.c < 2) throw Error("mi_matrix: need at least two channels");
  std::vector<std::vector<std::uint16_t>> binned(s.c);
  for (std::size_t c = 0; c < s.c; ++c) binned[c] = bin_indices(maps.channel(0, c), bins);
  MIMatrix m{s.c, std::vector<double>(s.c * s.c, 0.0)};
  std::vector<std::size_t> joint;
  for (std::size_t i = 0; i < s.c; ++i) {
    for (std::size_t j = i + 1; j < s.c; ++j) {
      const double v = detail::binned_mutual_information(binned[i], binned[j], bins, joint);
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

/// Channels whose activations are all within `epsilon` of zero (exactly zero by default).
template <typename T>
std::vector<std::size_t> zero_channels(const Tensor<T>& maps, double epsilon = 0.0) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < maps.shape().c; ++c) {
    const auto p = maps.channel(0, c);
    if (std::all_of(p.begin(), p.end(),
                    [&](T v) { return std::abs(static_cast<double>(v)) <= epsilon; })) {
      out.push_back(c);
    }
  }
  return out;
}

enum class ChannelFate { kept, zero_map, high_redundancy };

inline const char* to_string(ChannelFate f) {
  switch (f) {
    case ChannelFate::kept:
      return "kept";
    case ChannelFate::zero_map:
      return "zero_map";
    case ChannelFate::high_redundancy:
      return "high_redundancy";
  }
  return "?";
}

struct ChannelMask {
  std::vector<bool> keep;
  std::size_t kept_count = 0;
  std::vector<ChannelFate> provenance;
  std::vector<double> representative;  // max MI vs surviving channels; 0 for zero maps

  std::vector<std::size_t> kept_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) out.push_back(i);
    return out;
  }

  static ChannelMask all(std::size_t channels) {
    return ChannelMask{std::vector<bool>(channels, true), channels,
                       std::vector<ChannelFate>(channels, ChannelFate::kept),
                       std::vector<double>(channels, 0.0)};
  }
};

/// Drops zero maps, then keeps the `keep_count` channels whose largest MI against the
/// other survivors is smallest. Ties go to the lower channel index.
inline ChannelMask select_channels(const MIMatrix& m, std::span<const std::size_t> zero,
                                   std::size_t keep_count) {
  const std::size_t C = m.size;
  std::vector<bool> is_zero(C, false);
  for (auto z : zero) {
    if (z >= C) throw Error("zero channel index " + std::to_string(z) + " out of range");
    is_zero[z] = true;
  }
  const std::size_t available =
      static_cast<std::size_t>(std::count(is_zero.begin(), is_zero.end(), false));
  if (keep_count == 0) throw Error("cannot keep 0 channels");
  if (keep_count > available) {
    throw InfeasibleError("cannot keep " + std::to_string(keep_count) + " channels: only " +
                          std::to_string(available) + " non-zero channels available");
  }
  ChannelMask mask{std::vector<bool>(C, false), keep_count,
                   std::vector<ChannelFate>(C, ChannelFate::high_redundancy),
                   std::vector<double>(C, 0.0)};
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < C; ++i) {
    if (is_zero[i]) {
      mask.provenance[i] = ChannelFate::zero_map;
      continue;
    }
    survivors.push_back(i);
  }
  for (auto i : survivors) {
    double best = 0;
    for (auto j : survivors)
      if (j != i) best = std::max(best, m(i, j));
    mask.representative[i] = best;
  }
  std::stable_sort(survivors.begin(), survivors.end(), [&](std::size_t a, std::size_t b) {
    return mask.representative[a] < mask.representative[b];
  });
  for (std::size_t k = 0; k < keep_count; ++k) {
    mask.keep[survivors[k]] = true;
    mask.provenance[survivors[k]] = ChannelFate::kept;
  }
  return mask;
}

/// Restricts the last conv layer to the kept channels and drops the matching input
/// columns of the first fully-connected layer. Everything else is copied unchanged.
template <typename T>
NetworkParams<T> prune_network(const NetworkParams<T>& params, const ChannelMask& mask) {
  if (params.convs.empty()) throw Error("prune_network: network has no conv layers");
  const std::size_t C = params.feature_channels();
  if (mask.keep.size() != C) {
    throw ShapeError("prune_network: mask covers " + std::to_string(mask.keep.size()) +
                     " channels but the last conv layer has " + std::to_string(C));
  }
  const auto kept = mask.kept_indices();
  NetworkParams<T> out = params;
  const auto& src = params.convs.back();
  const Shape ws = src.weight.shape();
  const std::size_t filter = ws.c * ws.h * ws.w;
  auto& conv = out.convs.back();
  conv.weight = Tensor<T>(Shape{kept.size(), ws.c, ws.h, ws.w});
  conv.bias.resize(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    std::copy_n(src.weight.data() + kept[k] * filter, filter, conv.weight.data() + k * filter);
    conv.bias[k] = src.bias[kept[k]];
  }
  if (!params.fcs.empty()) {
    const std::size_t cells = params.roi.bins * params.roi.bins;
    const auto& w = params.fcs.front().weight;
    if (w.cols() != C * cells) {
      throw ShapeError("prune_network: fc1 has " + std::to_string(w.cols()) +
                       " inputs, expected " + std::to_string(C * cells));
    }
    Matrix<T> pruned(w.rows(), kept.size() * cells);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t k = 0; k < kept.size(); ++k) {
        std::copy_n(&w(r, kept[k] * cells), cells, &pruned(r, k * cells));
      }
    }
    out.fcs.front().weight = std::move(pruned);
  }
  return out;
}

struct SelectionConfig {
  std::size_t keep_count = 256;
  std::size_t bins = kDefaultHistogramBins;
  double zero_epsilon = 0.0;
};

/// Runs the conv stack on the first frame and selects channels from its post-ReLU maps.
template <typename T>
ChannelMask select_for_sequence(const NetworkParams<T>& params, const Tensor<T>& first_frame,
                                const SelectionConfig& cfg = {}) {
  const Tensor<T> maps = conv_forward(params, first_frame);
  const std::size_t C = maps.shape().c;
  if (cfg.keep_count == C) return ChannelMask::all(C);
  const auto zero = zero_channels(maps, cfg.zero_epsilon);
  return select_channels(mi_matrix(maps, cfg.bins), zero, cfg.keep_count);
}

}  // namespace fsnet
