#pragma once

// Finite-difference audit of the full conv -> RoIAlign -> fc -> softmax chain.
// The numeric side only calls the forward pass.
//
// The chain is piecewise smooth: ReLU signs, max-pool winners and max-RoIAlign winners
// select the active piece. When a +/- epsilon probe lands on a different piece than the
// unperturbed point, the central difference averages two slopes and says nothing about
// either, so such elements are counted as kinks and left out of the error statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsnet/network.hpp"

namespace fsnet {

struct GradcheckOptions {
  double epsilon = 1e-4;
  double error_floor = 1e-6;     // denominator floor for the relative error
  std::size_t max_per_tensor = 0;  // 0 checks every element
  std::uint64_t dropout_seed = 7;  // fixed so every evaluation sees the same masks
  Mode mode = Mode::train;
};

struct GradcheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradcheckReport {
  std::size_t checked = 0;
  std::size_t kinks = 0;  // probes that crossed a piece boundary; excluded from the errors
  double max_rel_error = 0;
  GradcheckEntry worst;
  std::vector<std::pair<std::string, double>> per_tensor;  // max relative error per tensor
};

/// Small architecture for audits: 32 x 32 input maps to an 8 x 8 feature grid.
inline NetworkConfig gradcheck_config() {
  NetworkConfig c;
  c.convs = {{4, 3, 1, 1}, {6, 3, 1, 1}, {8, 3, 1, 1}};
  c.pool = PoolConfig{2, 2};
  c.lrn = LrnConfig{2, 2.0, 1e-2, 0.75};
  c.fc_widths = {16, 16};
  c.branches = 2;
  c.fc_init_std = 0.3;
  return c;
}

/// Draws every bias uniformly from [-scale, scale]. Audits use this so that no
/// pre-activation sits exactly on a ReLU kink, as it would with zero biases.
template <typename T>
void randomize_biases(NetworkParams<T>& p, std::mt19937_64& rng, double scale = 0.1) {
  std::uniform_real_distribution<double> d(-scale, scale);
  for (auto& c : p.convs)
    for (T& v : c.bias) v = static_cast<T>(d(rng));
  for (auto& f : p.fcs)
    for (T& v : f.bias) v = static_cast<T>(d(rng));
  for (auto& f : p.heads)
    for (T& v : f.bias) v = static_cast<T>(d(rng));
}

namespace detail {

// Everything that picks the active linear piece of the chain for one input.
struct ActivePiece {
  std::vector<bool> relu_on;
  std::vector<std::size_t> pool_winners;
  std::vector<double> align_winners;

  friend bool operator==(const ActivePiece&, const ActivePiece&) = default;
};

inline ActivePiece active_piece(const ForwardCache<double>& c) {
  ActivePiece p;
  for (const auto& st : c.conv.stages) {
    for (double v : st.pre_relu.values()) p.relu_on.push_back(v > 0);
    p.pool_winners.insert(p.pool_winners.end(), st.pool_argmax.begin(), st.pool_argmax.end());
  }
  for (const auto& m : c.fc.pre_relu)
    for (double v : m.values()) p.relu_on.push_back(v > 0);
  for (const auto& r : c.align.records) {
    p.align_winners.push_back(r.x);
    p.align_winners.push_back(r.y);
  }
  return p;
}

}  // namespace detail

inline GradcheckReport gradcheck(NetworkParams<double> params, Tensor<double> image,
                                 std::span<const Rect> rois, std::span<const Label> labels,
                                 std::size_t branch, const GradcheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.dropout_seed);
  ForwardCache<double> cache;
  auto logits = forward(params, image, rois, branch, opt.mode, rng, &cache);
  auto grad_logits = batch_xent(logits, labels).second;
  auto grads = backward(params, cache, grad_logits, Scope::all_layers, true);
  const auto base_piece = detail::active_piece(cache);

  bool same_piece = true;
  auto loss = [&] {
    std::mt19937_64 r(opt.dropout_seed);
    ForwardCache<double> c;
    auto out = forward(params, image, rois, branch, opt.mode, r, &c);
    same_piece = same_piece && detail::active_piece(c) == base_piece;
    return batch_xent(out, labels).first;
  };

  GradcheckReport report;
  auto audit = [&](const std::string& name, std::span<double> values,
                   std::span<const double> analytic) {
    const std::size_t n = values.size();
    const std::size_t count = opt.max_per_tensor ? std::min(n, opt.max_per_tensor) : n;
    double worst = 0;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = count == n ? k : k * n / count;
      const double saved = values[i];
      same_piece = true;
      values[i] = saved + opt.epsilon;
      const double up = loss();
      values[i] = saved - opt.epsilon;
      const double down = loss();
      values[i] = saved;
      if (!same_piece) {
        ++report.kinks;
        continue;
      }
      const double numeric = (up - down) / (2 * opt.epsilon);
      const double rel = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), opt.error_floor});
      ++report.checked;
      worst = std::max(worst, rel);
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = GradcheckEntry{name, i, analytic[i], numeric, rel};
      }
    }
    report.per_tensor.emplace_back(name, worst);
  };

  for (std::size_t i = 0; i < params.convs.size(); ++i) {
    const std::string base = "conv" + std::to_string(i + 1);
    audit(base + ".weight", params.convs[i].weight.values(), grads.convs[i].weight.values());
    audit(base + ".bias", params.convs[i].bias, grads.convs[i].bias);
  }
  for (std::size_t i = 0; i < params.fcs.size(); ++i) {
    const std::string base = "fc" + std::to_string(i + 1);
    audit(base + ".weight", params.fcs[i].weight.values(), grads.fcs[i].weight.values());
    audit(base + ".bias", params.fcs[i].bias, grads.fcs[i].bias);
  }
  const std::string head = "head" + std::to_string(branch);
  audit(head + ".weight", params.heads[branch].weight.values(), grads.head.weight.values());
  audit(head + ".bias", params.heads[branch].bias, grads.head.bias);
  audit("input", image.values(), grads.input.values());
  return report;
}

/// Standard audit: the small architecture on a seeded 1 x 3 x 32 x 32 input with four
/// RoIs of both labels, random biases, every element of every tensor checked.
inline GradcheckReport full_chain_audit(std::uint64_t seed, const GradcheckOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  auto params = make_network<double>(gradcheck_config(), rng);
  randomize_biases(params, rng);
  Tensor<double> image(Shape{1, 3, 32, 32});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : image.values()) v = u(rng);
  const std::vector<Rect> rois{{1.5, 2.25, 14, 12}, {9.3, 4.7, 17.2, 20.1},
                               {0.2, 16.4, 30.5, 15}, {20.6, 21.1, 9.4, 8.8}};
  const std::vector<Label> labels{Label::target, Label::background, Label::target,
                                  Label::background};
  return gradcheck(std::move(params), std::move(image), std::span<const Rect>(rois),
                   std::span<const Label>(labels), 0, opt);
}

}  // namespace fsnet
