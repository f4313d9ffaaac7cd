#pragma once

// Online tracking with a pruned network and a fresh single-branch head.
//
// The conv stack is frozen during tracking, so every frame runs it once and
// all boxes of that frame share the feature map. Stored training samples keep
// their RoI features, and online updates only touch the fc layers and head.
// A frame whose best candidate scores at or below the threshold triggers an
// update that stops at the first iteration with loss below the loss threshold.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsnet/bbox_regressor.hpp"
#include "fsnet/error.hpp"
#include "fsnet/feature_select.hpp"
#include "fsnet/network.hpp"
#include "fsnet/sampling.hpp"
#include "fsnet/sgd.hpp"

namespace fsnet {

struct TrackerConfig {
  double score_threshold_m = 0.0;
  double loss_threshold_l = 0.01;
  std::size_t max_finetune_iters = 10;
  std::size_t candidates_per_frame = 256;
  double t1 = 0.7;
  double t2 = 0.5;
  double first_frame_lr = 0.0005;
  double online_lr = 0.0015;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t sample_buffer_frames = 20;
  std::uint64_t rng_seed = 0;

  std::size_t init_iters = 30;
  // Extra copies of the first frame, translated by random whole pixels within half the
  // feature stride, that contribute first-frame samples at other sampling phases.
  std::size_t init_shift_copies = 4;
  std::size_t init_pos = 128;
  std::size_t init_neg = 512;
  std::size_t online_pos = 16;
  std::size_t online_neg = 48;
  std::size_t batch_pos = 32;
  std::size_t batch_neg = 96;
  std::size_t hard_neg_pool = 1024;
  double head_init_std = 0.01;

  bool bbox_regression = true;
  std::size_t bbox_samples = 128;
  double bbox_lambda = 1000;

  CandidateConfig candidates;
  SamplingConfig sampling;  // t1 and t2 above take precedence

  void validate() const {
    if (!(loss_threshold_l > 0)) throw Error("tracker: loss_threshold_l must be > 0");
    if (max_finetune_iters == 0) throw Error("tracker: max_finetune_iters must be >= 1");
    if (candidates_per_frame == 0) throw Error("tracker: candidates_per_frame must be >= 1");
    if (sample_buffer_frames == 0) throw Error("tracker: sample_buffer_frames must be >= 1");
    if (batch_pos + batch_neg == 0) throw Error("tracker: empty update minibatch");
    if (batch_neg > hard_neg_pool) throw Error("tracker: batch_neg exceeds hard_neg_pool");
    if (bbox_regression && bbox_samples < 2) throw Error("tracker: bbox_samples must be >= 2");
    sample_config().validate();
  }

  SamplingConfig sample_config() const {
    SamplingConfig s = sampling;
    s.t1 = t1;
    s.t2 = t2;
    return s;
  }

  SgdConfig sgd(double lr) const { return SgdConfig{lr, weight_decay, momentum}; }
};

/// Samples collected on one frame, with their RoI features.
struct SampleBank {
  std::size_t frame = 0;
  std::vector<Rect> rects;
  Matrix<double> features;
};

struct FinetuneRecord {
  std::size_t frame = 0;
  double best_score = 0;
  double final_loss = 0;
  std::size_t iterations = 0;
};

struct TrackerState {
  TrackerConfig config;
  NetworkParams<double> net;  // pruned copy with a single head
  ImageSize image_size;
  Rect current_rect;
  std::size_t frame_index = 0;
  std::deque<SampleBank> pos_buffer;
  std::deque<SampleBank> neg_buffer;
  BBoxRegressor bbox;
  std::vector<FinetuneRecord> finetune_log;
  std::vector<double> init_losses;
  std::mt19937_64 rng;
};

// ---------------------------------------------------------------------------
// Update controller

/// An online update is needed when the best candidate does not clear the threshold.
inline bool should_update(double best_score, double m) { return best_score <= m; }

struct FinetuneOutcome {
  std::size_t iterations = 0;
  double final_loss = 0;
  std::vector<double> losses;
};

/// Calls `step(i)` for i = 1, 2, ... and stops after the first loss below `threshold`
/// or after `max_iters` calls.
inline FinetuneOutcome finetune_until(std::size_t max_iters, double threshold,
                                      const std::function<double(std::size_t)>& step) {
  if (max_iters == 0) throw Error("finetune_until: max_iters must be >= 1");
  FinetuneOutcome out;
  for (std::size_t i = 1; i <= max_iters; ++i) {
    const double loss = step(i);
    out.losses.push_back(loss);
    out.iterations = i;
    out.final_loss = loss;
    if (loss < threshold) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

/// RoIAlign features (R x C*bins*bins) of image-space boxes on a conv feature map.
inline Matrix<double> roi_features(const NetworkParams<double>& net, const Tensor<double>& featmap,
                                   std::span<const Rect> rects) {
  std::vector<Rect> mapped;
  mapped.reserve(rects.size());
  for (const Rect& r : rects) mapped.push_back(map_roi_to_feature(r, net.cumulative_stride()));
  auto al = roi_align_forward(featmap, std::span<const Rect>(mapped), net.roi);
  return Matrix<double>(rects.size(), net.roi_feature_width(), std::move(al.features.storage()));
}

/// Target-minus-background score of each feature row, dropout disabled.
inline std::vector<double> score_features(const NetworkParams<double>& net,
                                          const Matrix<double>& features) {
  std::mt19937_64 unused(0);
  return target_scores(fc_stack_forward(net, features, 0, Mode::eval, unused));
}

inline std::vector<double> score_candidates(const TrackerState& state, const Tensor<double>& featmap,
                                            std::span<const Rect> candidates) {
  return score_features(state.net, roi_features(state.net, featmap, candidates));
}

/// Highest-scoring candidate; ties go to the lowest index.
inline std::pair<Rect, double> estimate_target(std::span<const Rect> candidates,
                                               std::span<const double> scores) {
  if (candidates.empty()) throw Error("estimate_target: no candidates");
  if (candidates.size() != scores.size()) {
    throw ShapeError("estimate_target: " + std::to_string(candidates.size()) + " candidates but " +
                     std::to_string(scores.size()) + " scores");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return {candidates[best], scores[best]};
}

/// Indices of the `top_k` highest-scoring rows, best first (ties: lower index first).
inline std::vector<std::size_t> hard_negative_mining(const NetworkParams<double>& net,
                                                     const Matrix<double>& neg_features,
                                                     std::size_t top_k) {
  if (top_k > neg_features.rows()) {
    throw Error("hard_negative_mining: top_k " + std::to_string(top_k) + " exceeds " +
                std::to_string(neg_features.rows()) + " negatives");
  }
  const auto scores = score_features(net, neg_features);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(top_k);
  return order;
}

/// Box-level variant: the `top_k` negatives of one frame that the network scores highest.
inline std::vector<Rect> hard_negative_mining(const NetworkParams<double>& net,
                                              const Tensor<double>& featmap,
                                              std::span<const Rect> negatives, std::size_t top_k) {
  const auto idx = hard_negative_mining(net, roi_features(net, featmap, negatives), top_k);
  std::vector<Rect> out;
  for (auto i : idx) out.push_back(negatives[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning

namespace detail {

inline Matrix<double> stack_banks(const std::deque<SampleBank>& banks, std::size_t width) {
  std::size_t rows = 0;
  for (const auto& b : banks) rows += b.features.rows();
  Matrix<double> out(rows, width);
  std::size_t at = 0;
  for (const auto& b : banks) {
    std::copy(b.features.values().begin(), b.features.values().end(), out.data() + at);
    at += b.features.size();
  }
  return out;
}

// `k` distinct indices from [0, n), or all of them when k >= n.
inline std::vector<std::size_t> choose(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, n - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  idx.resize(k);
  return idx;
}

inline void append_rows(Matrix<double>& dst, std::size_t& row, const Matrix<double>& src,
                        std::span<const std::size_t> rows) {
  for (auto r : rows) {
    std::copy(src.row(r).begin(), src.row(r).end(), dst.data() + row * dst.cols());
    ++row;
  }
}

}  // namespace detail

/// One fc-only SGD step: random positives plus the hardest negatives of a random pool.
/// Returns the minibatch loss of this step.
inline double fc_update_step(TrackerState& state, const Matrix<double>& pos,
                             const Matrix<double>& neg, const SgdConfig& sgd,
                             Velocity<double>& vel) {
  const auto& cfg = state.config;
  const auto pos_idx = detail::choose(pos.rows(), cfg.batch_pos, state.rng);
  const auto pool_idx = detail::choose(neg.rows(), cfg.hard_neg_pool, state.rng);
  Matrix<double> pool(pool_idx.size(), neg.cols());
  std::size_t row = 0;
  detail::append_rows(pool, row, neg, pool_idx);
  const auto hard = hard_negative_mining(state.net, pool, std::min(cfg.batch_neg, pool.rows()));

  Matrix<double> batch(pos_idx.size() + hard.size(), pos.cols());
  row = 0;
  detail::append_rows(batch, row, pos, pos_idx);
  detail::append_rows(batch, row, pool, hard);
  std::vector<Label> labels(pos_idx.size(), Label::target);
  labels.resize(batch.rows(), Label::background);

  FcCache<double> cache;
  const auto logits = fc_stack_forward(state.net, batch, 0, Mode::train, state.rng, &cache);
  auto [loss, grad] = batch_xent(logits, std::span<const Label>(labels));
  auto g = fc_stack_backward(state.net, cache, grad);
  Gradients<double> grads;
  grads.fcs = std::move(g.fcs);
  grads.head = std::move(g.head);
  grads.branch = 0;
  sgd_step(state.net, grads, sgd, vel);
  return loss;
}

/// Online update on the buffered samples. Logs the outcome against the current frame.
inline FinetuneOutcome finetune_fc(TrackerState& state, double best_score) {
  const auto& cfg = state.config;
  if (state.pos_buffer.empty() || state.neg_buffer.empty()) {
    throw Error("finetune_fc: sample buffers are empty, cannot update");
  }
  const std::size_t width = state.net.roi_feature_width();
  const Matrix<double> pos = detail::stack_banks(state.pos_buffer, width);
  const Matrix<double> neg = detail::stack_banks(state.neg_buffer, width);
  auto vel = Velocity<double>::zeros_like(state.net);
  const SgdConfig sgd = cfg.sgd(cfg.online_lr);
  auto out = finetune_until(cfg.max_finetune_iters, cfg.loss_threshold_l, [&](std::size_t) {
    return fc_update_step(state, pos, neg, sgd, vel);
  });
  state.finetune_log.push_back({state.frame_index, best_score, out.final_loss, out.iterations});
  return out;
}

// ---------------------------------------------------------------------------
// Sequence

namespace detail {

/// Content moved by (dx, dy) pixels; uncovered pixels repeat the nearest edge.
inline Tensor<double> translate_image(const Tensor<double>& img, long dx, long dy) {
  const Shape s = img.shape();
  Tensor<double> out(s);
  const long W = static_cast<long>(s.w), H = static_cast<long>(s.h);
  for (std::size_t c = 0; c < s.c; ++c)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        const long sx = std::clamp(x - dx, 0L, W - 1), sy = std::clamp(y - dy, 0L, H - 1);
        out(0, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            img(0, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
  return out;
}

// Positive and negative banks of fresh samples around `target` on one feature map.
inline std::pair<SampleBank, SampleBank> draw_banks(TrackerState& state,
                                                    const Tensor<double>& featmap,
                                                    const Rect& target, std::size_t n_pos,
                                                    std::size_t n_neg) {
  const auto samples = sample_rois(target, state.image_size, n_pos, n_neg, state.rng,
                                   state.config.sample_config(), state.frame_index);
  SampleBank pos{state.frame_index, {}, {}}, neg{state.frame_index, {}, {}};
  for (const auto& s : samples) (s.label == Label::target ? pos : neg).rects.push_back(s.rect);
  pos.features = roi_features(state.net, featmap, pos.rects);
  neg.features = roi_features(state.net, featmap, neg.rects);
  return {std::move(pos), std::move(neg)};
}

inline void store_banks(TrackerState& state, std::pair<SampleBank, SampleBank> banks) {
  state.pos_buffer.push_back(std::move(banks.first));
  state.neg_buffer.push_back(std::move(banks.second));
  while (state.pos_buffer.size() > state.config.sample_buffer_frames) state.pos_buffer.pop_front();
  while (state.neg_buffer.size() > state.config.sample_buffer_frames) state.neg_buffer.pop_front();
}

inline SampleBank merge_banks(const std::vector<SampleBank>& banks, std::size_t width) {
  std::size_t rows = 0;
  for (const auto& b : banks) rows += b.rects.size();
  SampleBank out{banks.empty() ? 0 : banks.front().frame, {}, Matrix<double>(rows, width)};
  std::size_t at = 0;
  for (const auto& b : banks) {
    out.rects.insert(out.rects.end(), b.rects.begin(), b.rects.end());
    std::copy(b.features.values().begin(), b.features.values().end(), out.features.data() + at);
    at += b.features.size();
  }
  return out;
}

}  // namespace detail

/// Prunes `params` with `mask`, installs a fresh single head, fine-tunes the fc layers on
/// first-frame samples and fits the bbox regressor on first-frame positives.
inline TrackerState init_tracker(const NetworkParams<double>& params, const ChannelMask& mask,
                                 const Tensor<double>& first_frame, const Rect& gt,
                                 const TrackerConfig& config) {
  config.validate();
  TrackerState st;
  st.config = config;
  st.rng.seed(config.rng_seed);
  st.net = prune_network(params, mask);
  st.net.heads = {gaussian_fc<double>(2, st.net.fcs.empty() ? st.net.roi_feature_width()
                                                            : st.net.fcs.back().weight.rows(),
                                      config.head_init_std, st.rng)};
  st.image_size = ImageSize{first_frame.shape().w, first_frame.shape().h};
  st.current_rect = gt;
  st.frame_index = 0;

  const Tensor<double> featmap = conv_forward(st.net, first_frame);
  std::vector<SampleBank> pos_banks, neg_banks;
  auto add = [&](std::pair<SampleBank, SampleBank> b) {
    pos_banks.push_back(std::move(b.first));
    neg_banks.push_back(std::move(b.second));
  };
  add(detail::draw_banks(st, featmap, gt, config.init_pos, config.init_neg));
  const long half = static_cast<long>(st.net.cumulative_stride() / 2);
  std::uniform_int_distribution<long> jitter(-half, half);
  for (std::size_t k = 0; k < config.init_shift_copies; ++k) {
    const long dx = jitter(st.rng), dy = jitter(st.rng);
    const Rect moved{gt.x + static_cast<double>(dx), gt.y + static_cast<double>(dy), gt.w, gt.h};
    if (!inside_image(moved, st.image_size)) continue;
    const auto fm = conv_forward(st.net, detail::translate_image(first_frame, dx, dy));
    add(detail::draw_banks(st, fm, moved, config.init_pos, config.init_neg));
  }
  const std::size_t width = st.net.roi_feature_width();
  detail::store_banks(st, {detail::merge_banks(pos_banks, width),
                           detail::merge_banks(neg_banks, width)});

  const Matrix<double>& pos = st.pos_buffer.back().features;
  const Matrix<double>& neg = st.neg_buffer.back().features;
  auto vel = Velocity<double>::zeros_like(st.net);
  const SgdConfig sgd = config.sgd(config.first_frame_lr);
  for (std::size_t i = 0; i < config.init_iters; ++i) {
    st.init_losses.push_back(fc_update_step(st, pos, neg, sgd, vel));
  }

  if (config.bbox_regression) {
    SamplingConfig bs = config.sample_config();
    bs.pos_trans_sigma = 0.3;
    bs.pos_scale_sigma = 2.0;
    const auto samples = sample_rois(gt, st.image_size, config.bbox_samples, 0, st.rng, bs, 0);
    std::vector<Rect> rects;
    for (const auto& s : samples) rects.push_back(s.rect);
    st.bbox = bbox_regress_train(roi_features(st.net, featmap, rects), rects, gt,
                                 config.bbox_lambda);
  }
  return st;
}

struct FrameResult {
  Rect rect;          // reported box
  double best_score = 0;
  bool updated = false;
};

/// Processes the next frame and advances the state.
inline FrameResult track_frame(TrackerState& state, const Tensor<double>& frame) {
  const auto& cfg = state.config;
  ++state.frame_index;
  const Tensor<double> featmap = conv_forward(state.net, frame);
  const auto cands =
      generate_candidates(state.current_rect, state.image_size, cfg.candidates_per_frame, state.rng,
                          cfg.candidates);
  auto scores = score_candidates(state, featmap, cands);
  auto [rect, best] = estimate_target(cands, scores);
  FrameResult res{rect, best, false};

  if (!should_update(best, cfg.score_threshold_m)) {
    if (cfg.bbox_regression && state.bbox.trained()) {
      const std::vector<Rect> one{rect};
      const auto f = roi_features(state.net, featmap, one);
      res.rect = clip_to_image(bbox_regress_apply(state.bbox, f.row(0), rect), state.image_size);
    }
    state.current_rect = res.rect;
    detail::store_banks(state,
                        detail::draw_banks(state, featmap, res.rect, cfg.online_pos, cfg.online_neg));
    return res;
  }

  finetune_fc(state, best);
  res.updated = true;
  scores = score_candidates(state, featmap, cands);
  std::tie(rect, std::ignore) = estimate_target(cands, scores);
  state.current_rect = rect;
  res.rect = rect;
  return res;
}

struct TrackResult {
  std::vector<Rect> rects;  // one per frame; the first is the given box
  std::vector<double> best_scores;
  std::vector<FinetuneRecord> finetune_log;
};

using FrameSource = std::function<Tensor<double>(std::size_t)>;

inline TrackResult track_sequence(const NetworkParams<double>& params, const ChannelMask& mask,
                                  std::size_t frame_count, const FrameSource& frames,
                                  const Rect& gt_first, const TrackerConfig& config) {
  if (frame_count == 0) throw Error("track_sequence: no frames");
  TrackResult out;
  auto state = init_tracker(params, mask, frames(0), gt_first, config);
  out.rects.push_back(gt_first);
  out.best_scores.push_back(0.0);
  for (std::size_t t = 1; t < frame_count; ++t) {
    const auto r = track_frame(state, frames(t));
    out.rects.push_back(r.rect);
    out.best_scores.push_back(r.best_score);
  }
  out.finetune_log = state.finetune_log;
  return out;
}

inline TrackResult track_sequence(const NetworkParams<double>& params, const ChannelMask& mask,
                                  const std::vector<Tensor<double>>& frames, const Rect& gt_first,
                                  const TrackerConfig& config) {
  return track_sequence(
      params, mask, frames.size(), [&](std::size_t i) { return frames[i]; }, gt_first, config);
}

}  // namespace fsnet
