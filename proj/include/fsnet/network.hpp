#pragma once

// Whole-image tracking network: a conv stack run once per frame, RoIAlign to
// a fixed 3 x 3 x C grid per box, then fully-connected layers ending in one
// 2-way head per training domain.

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/layers.hpp"
#include "fsnet/rect.hpp"
#include "fsnet/roi.hpp"
#include "fsnet/tensor.hpp"

namespace fsnet {

struct ConvSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

enum class LayerKind { conv, relu, lrn, maxpool, roi_align, fc, dropout, softmax_head };

struct LayerSpec {
  LayerKind kind;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 0;
  std::size_t padding = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  double dropout_rate = 0;
};

/// Architecture and initialization hyper-parameters.
struct NetworkConfig {
  std::size_t in_channels = 3;
  std::vector<ConvSpec> convs{{96, 7, 2, 0}, {256, 5, 2, 1}, {512, 3, 1, 1}};
  LrnConfig lrn;
  PoolConfig pool;
  RoiAlignConfig roi;
  std::vector<std::size_t> fc_widths{512, 512};
  bool fc_relu = false;
  double dropout_rate = 0.5;
  std::size_t branches = 1;
  double fc_init_std = 0.01;

  /// The layer stack this config builds, in execution order.
  std::vector<LayerSpec> layer_specs() const {
    std::vector<LayerSpec> out;
    std::size_t ch = in_channels;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      const auto& c = convs[i];
      out.push_back({LayerKind::conv, c.kernel, c.kernel, c.stride, c.pad, ch, c.out_channels});
      out.push_back({LayerKind::relu});
      ch = c.out_channels;
      if (i + 1 < convs.size()) {
        out.push_back({LayerKind::lrn});
        out.push_back({LayerKind::maxpool, pool.kernel, pool.kernel, pool.stride});
      }
    }
    out.push_back({LayerKind::roi_align, roi.bins, roi.bins, 0, 0, ch, ch});
    std::size_t width = ch * roi.bins * roi.bins;
    for (std::size_t w : fc_widths) {
      out.push_back({LayerKind::fc, 0, 0, 0, 0, width, w});
      if (fc_relu) out.push_back({LayerKind::relu});
      out.push_back({LayerKind::dropout, 0, 0, 0, 0, w, w, dropout_rate});
      width = w;
    }
    out.push_back({LayerKind::softmax_head, 0, 0, 0, 0, width, 2});
    return out;
  }
};

template <typename T = double>
struct ConvLayer {
  Tensor<T> weight;  // out x in x k x k
  std::vector<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

template <typename T = double>
struct FcLayer {
  Matrix<T> weight;  // out x in
  std::vector<T> bias;

  friend bool operator==(const FcLayer&, const FcLayer&) = default;
};

/// Every learnable tensor plus the geometry needed to run them.
template <typename T = double>
struct NetworkParams {
  LrnConfig lrn;
  PoolConfig pool;
  RoiAlignConfig roi;
  bool fc_relu = false;
  double dropout_rate = 0.5;
  std::vector<ConvLayer<T>> convs;
  std::vector<FcLayer<T>> fcs;
  std::vector<FcLayer<T>> heads;  // k during offline training, 1 while tracking

  std::size_t branch_count() const { return heads.size(); }
  std::size_t feature_channels() const { return convs.empty() ? 0 : convs.back().weight.shape().n; }
  std::size_t roi_feature_width() const { return feature_channels() * roi.bins * roi.bins; }

  /// Image pixels per feature-map cell.
  double cumulative_stride() const {
    double s = 1;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      s *= static_cast<double>(convs[i].stride);
      if (i + 1 < convs.size()) s *= static_cast<double>(pool.stride);
    }
    return s;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& c : convs) n += c.weight.size() + c.bias.size();
    for (const auto& f : fcs) n += f.weight.size() + f.bias.size();
    for (const auto& f : heads) n += f.weight.size() + f.bias.size();
    return n;
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    return a.convs == b.convs && a.fcs == b.fcs && a.heads == b.heads &&
           a.fc_relu == b.fc_relu && a.dropout_rate == b.dropout_rate;
  }
};

template <typename T>
FcLayer<T> gaussian_fc(std::size_t out, std::size_t in, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  FcLayer<T> f{Matrix<T>(out, in), std::vector<T>(out, T(0))};
  for (T& v : f.weight.values()) v = static_cast<T>(dist(rng));
  return f;
}

/// Random initialization: He-scaled Gaussian convs, N(0, fc_init_std) fully-connected layers,
/// zero biases.
template <typename T = double>
NetworkParams<T> make_network(const NetworkConfig& cfg, std::mt19937_64& rng) {
  if (cfg.convs.empty()) throw Error("network needs at least one conv layer");
  if (cfg.branches == 0) throw Error("network needs at least one head branch");
  NetworkParams<T> p;
  p.lrn = cfg.lrn;
  p.pool = cfg.pool;
  p.roi = cfg.roi;
  p.fc_relu = cfg.fc_relu;
  p.dropout_rate = cfg.dropout_rate;
  std::size_t ch = cfg.in_channels;
  for (const auto& c : cfg.convs) {
    ConvLayer<T> layer{Tensor<T>(Shape{c.out_channels, ch, c.kernel, c.kernel}),
                       std::vector<T>(c.out_channels, T(0)), c.stride, c.pad};
    std::normal_distribution<double> dist(
        0.0, std::sqrt(2.0 / static_cast<double>(ch * c.kernel * c.kernel)));
    for (T& v : layer.weight.values()) v = static_cast<T>(dist(rng));
    p.convs.push_back(std::move(layer));
    ch = c.out_channels;
  }
  std::size_t width = ch * cfg.roi.bins * cfg.roi.bins;
  for (std::size_t w : cfg.fc_widths) {
    p.fcs.push_back(gaussian_fc<T>(w, width, cfg.fc_init_std, rng));
    width = w;
  }
  for (std::size_t b = 0; b < cfg.branches; ++b) {
    p.heads.push_back(gaussian_fc<T>(2, width, cfg.fc_init_std, rng));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Conv stack

template <typename T = double>
struct ConvStageCache {
  Tensor<T> input;
  Tensor<T> pre_relu;
  Tensor<T> post_relu;
  Tensor<T> post_lrn;  // empty on the last stage
  std::vector<std::size_t> pool_argmax;
};

template <typename T = double>
struct ConvCache {
  std::vector<ConvStageCache<T>> stages;
};

/// Runs the conv stack on a 1 x C x H x W image; returns the last post-ReLU feature map.
template <typename T>
Tensor<T> conv_forward(const NetworkParams<T>& params, const Tensor<T>& image,
                       ConvCache<T>* cache = nullptr) {
  if (cache) cache->stages.assign(params.convs.size(), {});
  Tensor<T> x = image;
  for (std::size_t i = 0; i < params.convs.size(); ++i) {
    const auto& layer = params.convs[i];
    Tensor<T> a = conv2d_forward(x, layer.weight, std::span<const T>(layer.bias), layer.stride,
                                 layer.pad);
    Tensor<T> r = relu_forward(a);
    const bool last = i + 1 == params.convs.size();
    if (cache) {
      auto& st = cache->stages[i];
      st.input = std::move(x);
      st.pre_relu = std::move(a);
      st.post_relu = r;
    }
    if (last) {
      x = std::move(r);
      break;
    }
    Tensor<T> l = lrn_forward(r, params.lrn);
    auto pooled = maxpool_forward(l, params.pool);
    if (cache) {
      cache->stages[i].post_lrn = std::move(l);
      cache->stages[i].pool_argmax = std::move(pooled.argmax);
    }
    x = std::move(pooled.output);
  }
  return x;
}

/// Backpropagates `grad_featmap` through the conv stack, accumulating into `grads`
/// (sized like params.convs). Returns the gradient w.r.t. the image when requested.
template <typename T>
Tensor<T> conv_backward(const NetworkParams<T>& params, const ConvCache<T>& cache,
                        Tensor<T> grad, std::vector<ConvLayer<T>>& grads, bool want_input_grad) {
  if (cache.stages.size() != params.convs.size()) {
    throw Error("conv backward called without cached activations");
  }
  for (std::size_t ii = params.convs.size(); ii-- > 0;) {
    const auto& st = cache.stages[ii];
    const bool last = ii + 1 == params.convs.size();
    if (!last) {
      grad = maxpool_backward(grad, std::span<const std::size_t>(st.pool_argmax),
                              st.post_lrn.shape());
      grad = lrn_backward(st.post_relu, grad, params.lrn);
    }
    grad = relu_backward(st.pre_relu, grad);
    const auto& layer = params.convs[ii];
    auto g = conv2d_backward(st.input, layer.weight, grad, layer.stride, layer.pad,
                             ii > 0 || want_input_grad);
    auto& dst = grads[ii];
    for (std::size_t k = 0; k < g.weight.size(); ++k) dst.weight.data()[k] += g.weight.data()[k];
    for (std::size_t k = 0; k < g.bias.size(); ++k) dst.bias[k] += g.bias[k];
    grad = std::move(g.input);
  }
  return want_input_grad ? grad : Tensor<T>{};
}

// ---------------------------------------------------------------------------
// Fully-connected stack

template <typename T = double>
struct FcCache {
  std::vector<Matrix<T>> inputs;     // input of each fc layer, then of the head
  std::vector<Matrix<T>> pre_relu;   // only with fc_relu
  std::vector<std::vector<T>> masks; // dropout mask per hidden layer
  std::size_t branch = 0;
};

/// Rows of `features` are flattened C x bins x bins RoI features; returns R x 2 logits.
template <typename T>
Matrix<T> fc_stack_forward(const NetworkParams<T>& params, const Matrix<T>& features,
                           std::size_t branch, Mode mode, std::mt19937_64& rng,
                           FcCache<T>* cache = nullptr) {
  if (branch >= params.heads.size()) {
    throw Error("head branch " + std::to_string(branch) + " out of range (" +
                std::to_string(params.heads.size()) + " branches)");
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre_relu.clear();
    cache->masks.clear();
    cache->branch = branch;
  }
  Matrix<T> x = features;
  for (const auto& layer : params.fcs) {
    if (cache) cache->inputs.push_back(x);
    x = fc_forward(x, layer.weight, std::span<const T>(layer.bias));
    if (params.fc_relu) {
      if (cache) cache->pre_relu.push_back(x);
      for (T& v : x.values()) v = std::max(v, T(0));
    }
    auto d = dropout_forward(std::span<const T>(x.values()), params.dropout_rate, mode, rng);
    x = Matrix<T>(x.rows(), x.cols(), std::move(d.output));
    if (cache) cache->masks.push_back(std::move(d.mask));
  }
  if (cache) cache->inputs.push_back(x);
  const auto& head = params.heads[branch];
  return fc_forward(x, head.weight, std::span<const T>(head.bias));
}

template <typename T = double>
struct FcStackGrads {
  std::vector<FcLayer<T>> fcs;
  FcLayer<T> head;
  Matrix<T> features;
};

template <typename T>
FcStackGrads<T> fc_stack_backward(const NetworkParams<T>& params, const FcCache<T>& cache,
                                  const Matrix<T>& grad_logits) {
  if (cache.inputs.size() != params.fcs.size() + 1) {
    throw Error("fc backward called without cached activations");
  }
  FcStackGrads<T> out;
  out.fcs.resize(params.fcs.size());
  const auto& head = params.heads[cache.branch];
  auto hg = fc_backward(cache.inputs.back(), head.weight, grad_logits);
  out.head = FcLayer<T>{std::move(hg.weight), std::move(hg.bias)};
  Matrix<T> grad = std::move(hg.input);
  for (std::size_t ii = params.fcs.size(); ii-- > 0;) {
    const auto& mask = cache.masks[ii];
    for (std::size_t k = 0; k < grad.size(); ++k) grad.data()[k] *= mask[k];
    if (params.fc_relu) {
      const auto& pre = cache.pre_relu[ii];
      for (std::size_t k = 0; k < grad.size(); ++k) {
        if (!(pre.data()[k] > T(0))) grad.data()[k] = T(0);
      }
    }
    auto g = fc_backward(cache.inputs[ii], params.fcs[ii].weight, grad);
    out.fcs[ii] = FcLayer<T>{std::move(g.weight), std::move(g.bias)};
    grad = std::move(g.input);
  }
  out.features = std::move(grad);
  return out;
}

// ---------------------------------------------------------------------------
// Whole network

enum class Scope { fc_only, all_layers };

template <typename T = double>
struct ForwardCache {
  ConvCache<T> conv;
  Tensor<T> featmap;
  RoiAlignResult<T> align;
  FcCache<T> fc;
  bool ready = false;
};

/// Parameter gradients. `convs` is empty for fc-only scope; `head` belongs to `branch`.
template <typename T = double>
struct Gradients {
  std::vector<ConvLayer<T>> convs;
  std::vector<FcLayer<T>> fcs;
  FcLayer<T> head;
  std::size_t branch = 0;
  Tensor<T> input;  // d loss / d image, when requested

  void accumulate(const Gradients& o) {
    if (o.branch != branch || o.convs.size() != convs.size() || o.fcs.size() != fcs.size()) {
      throw Error("cannot accumulate gradients from a different scope or branch");
    }
    auto add = [](std::span<T> dst, std::span<const T> src) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    for (std::size_t i = 0; i < convs.size(); ++i) {
      add(convs[i].weight.values(), o.convs[i].weight.values());
      add(convs[i].bias, o.convs[i].bias);
    }
    for (std::size_t i = 0; i < fcs.size(); ++i) {
      add(fcs[i].weight.values(), o.fcs[i].weight.values());
      add(fcs[i].bias, o.fcs[i].bias);
    }
    add(head.weight.values(), o.head.weight.values());
    add(head.bias, o.head.bias);
  }
};

/// Logits (R x 2) for boxes given in image coordinates.
template <typename T>
Matrix<T> forward(const NetworkParams<T>& params, const Tensor<T>& image,
                  std::span<const Rect> image_rois, std::size_t branch, Mode mode,
                  std::mt19937_64& rng, ForwardCache<T>* cache = nullptr) {
  std::vector<Rect> rois;
  rois.reserve(image_rois.size());
  const double stride = params.cumulative_stride();
  for (const Rect& r : image_rois) rois.push_back(map_roi_to_feature(r, stride));

  Tensor<T> fm = conv_forward(params, image, cache ? &cache->conv : nullptr);
  auto align = roi_align_forward(fm, std::span<const Rect>(rois), params.roi);
  Matrix<T> feats(rois.size(), params.roi_feature_width(), align.features.storage());
  Matrix<T> logits =
      fc_stack_forward(params, feats, branch, mode, rng, cache ? &cache->fc : nullptr);
  if (cache) {
    cache->featmap = std::move(fm);
    cache->align = std::move(align);
    cache->ready = true;
  }
  return logits;
}

template <typename T>
Gradients<T> backward(const NetworkParams<T>& params, const ForwardCache<T>& cache,
                      const Matrix<T>& grad_logits, Scope scope, bool want_input_grad = false) {
  if (!cache.ready) throw Error("backward called without cached activations");
  auto fcg = fc_stack_backward(params, cache.fc, grad_logits);
  Gradients<T> g;
  g.fcs = std::move(fcg.fcs);
  g.head = std::move(fcg.head);
  g.branch = cache.fc.branch;
  if (scope == Scope::fc_only) return g;

  const auto& al = cache.align;
  Tensor<T> grad_roi(al.features.shape(), std::move(fcg.features.storage()));
  Tensor<T> grad_fm = roi_align_backward(grad_roi, al);
  g.convs.reserve(params.convs.size());
  for (const auto& c : params.convs) {
    g.convs.push_back(ConvLayer<T>{Tensor<T>(c.weight.shape()), std::vector<T>(c.bias.size()),
                                   c.stride, c.pad});
  }
  g.input = conv_backward(params, cache.conv, std::move(grad_fm), g.convs, want_input_grad);
  return g;
}

/// Mean softmax cross-entropy over a batch and its gradient w.r.t. the logits.
template <typename T>
std::pair<T, Matrix<T>> batch_xent(const Matrix<T>& logits, std::span<const Label> labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("batch_xent: " + std::to_string(labels.size()) + " labels for logits " +
                     logits.shape_str());
  }
  Matrix<T> grad(logits.rows(), logits.cols());
  T total = 0;
  const T inv = logits.rows() ? T(1) / static_cast<T>(logits.rows()) : T(0);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto x = softmax_xent(logits.row(r), labels[r]);
    total += x.loss;
    for (std::size_t c = 0; c < logits.cols(); ++c) grad(r, c) = x.grad[c] * inv;
  }
  return {total * inv, std::move(grad)};
}

/// Target logit minus background logit, one score per row.
template <typename T>
std::vector<T> target_scores(const Matrix<T>& logits) {
  std::vector<T> s(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) s[r] = logits(r, 0) - logits(r, 1);
  return s;
}

}  // namespace fsnet
