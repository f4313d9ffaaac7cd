#pragma once

// Multi-domain offline training. Every video owns one 2-way head branch; the
// conv and fc layers are shared. Iterations cycle over the videos and each one
// updates the shared layers plus the branch of the video it drew from.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/network.hpp"
#include "fsnet/sampling.hpp"
#include "fsnet/sgd.hpp"

namespace fsnet {

struct VideoDomain {
  std::size_t id = 0;
  std::vector<Tensor<double>> frames;  // 1 x 3 x H x W each
  std::vector<Rect> gt_rects;

  void validate() const {
    if (frames.empty()) throw Error("video domain " + std::to_string(id) + " has no frames");
    if (frames.size() != gt_rects.size()) {
      throw Error("video domain " + std::to_string(id) + " has " + std::to_string(frames.size()) +
                  " frames but " + std::to_string(gt_rects.size()) + " ground-truth boxes");
    }
  }
};

inline ImageSize image_size_of(const Tensor<double>& frame) {
  return ImageSize{frame.shape().w, frame.shape().h};
}

struct TrainConfig {
  std::size_t iterations = 100;
  SgdConfig sgd{1e-4, 5e-4, 0.9};
  std::size_t frames_per_batch = 2;
  std::size_t pos_per_frame = 16;  // 2 frames x (16 + 48) = 32 positives + 96 negatives
  std::size_t neg_per_frame = 48;
  SamplingConfig sampling;
  Scope scope = Scope::all_layers;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (iterations == 0) throw Error("train: iterations must be >= 1");
    if (frames_per_batch == 0) throw Error("train: frames_per_batch must be >= 1");
    if (pos_per_frame + neg_per_frame == 0) throw Error("train: empty minibatch");
    sgd.validate();
    sampling.validate();
  }
};

struct TrainReport {
  std::vector<double> losses;       // minibatch loss per iteration
  std::vector<std::size_t> domains; // domain trained at each iteration
};

using TrainProgress = std::function<void(std::size_t iteration, std::size_t domain, double loss)>;

/// One optimizer step on a minibatch drawn from `video` through head branch `branch`.
/// Returns the minibatch loss measured before the step.
inline double train_step(NetworkParams<double>& params, Velocity<double>& vel,
                         const VideoDomain& video, std::size_t branch, const TrainConfig& cfg,
                         std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, video.frames.size() - 1);
  Gradients<double> total;
  bool first = true;
  double loss = 0;
  const double share = 1.0 / static_cast<double>(cfg.frames_per_batch);
  for (std::size_t f = 0; f < cfg.frames_per_batch; ++f) {
    const std::size_t idx = pick(rng);
    const auto& frame = video.frames[idx];
    const auto samples = sample_rois(video.gt_rects[idx], image_size_of(frame), cfg.pos_per_frame,
                                     cfg.neg_per_frame, rng, cfg.sampling, idx);
    std::vector<Rect> rois;
    std::vector<Label> labels;
    for (const auto& s : samples) {
      rois.push_back(s.rect);
      labels.push_back(s.label);
    }
    ForwardCache<double> cache;
    const auto logits = forward(params, frame, std::span<const Rect>(rois), branch, Mode::train,
                                rng, &cache);
    auto [l, grad] = batch_xent(logits, std::span<const Label>(labels));
    for (double& g : grad.values()) g *= share;
    loss += share * l;
    auto g = backward(params, cache, grad, cfg.scope);
    if (first) {
      total = std::move(g);
      first = false;
    } else {
      total.accumulate(g);
    }
  }
  sgd_step(params, total, cfg.sgd, vel);
  return loss;
}

/// Trains `params` in place. Head branch i belongs to videos[i].
inline TrainReport train_multidomain(const std::vector<VideoDomain>& videos,
                                     NetworkParams<double>& params, const TrainConfig& cfg,
                                     const TrainProgress& progress = {}) {
  cfg.validate();
  if (videos.empty()) throw Error("train: no videos");
  if (params.branch_count() != videos.size()) {
    throw Error("train: network has " + std::to_string(params.branch_count()) +
                " head branches but there are " + std::to_string(videos.size()) + " videos");
  }
  for (const auto& v : videos) v.validate();
  std::mt19937_64 rng(cfg.rng_seed);
  auto vel = Velocity<double>::zeros_like(params);
  TrainReport report;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const std::size_t d = it % videos.size();
    const double loss = train_step(params, vel, videos[d], d, cfg, rng);
    report.losses.push_back(loss);
    report.domains.push_back(d);
    if (progress) progress(it, d, loss);
  }
  return report;
}

}  // namespace fsnet
