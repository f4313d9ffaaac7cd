#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/linalg.hpp"
#include "fsnet/tensor.hpp"

namespace fsnet {

enum class Mode { train, eval };

/// Class index of a head output. Every head emits (target, background) in that order.
enum class Label : std::size_t { target = 0, background = 1 };

namespace detail {

inline std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride,
                                std::size_t pad) {
  if (in + 2 * pad < kernel) {
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

// cols is (C*kh*kw) x (ho*wo); out-of-image taps read as zero.
template <typename T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* cols) {
  const std::size_t spatial = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = cols + ((ch * kh + ky) * kw + kx) * spatial;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            row[oy * wo + ox] = inside ? img[(ch * h + iy) * w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho,
                std::size_t wo, T* img) {
  const std::size_t spatial = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((ch * kh + ky) * kw + kx) * spatial;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            img[(ch * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

/// Cross-correlation of `input` (N x C x H x W) with `weights` (O x C x kh x kw).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         std::span<const T> bias, std::size_t stride, std::size_t pad) {
  const Shape& is = input.shape();
  const Shape& ws = weights.shape();
  if (is.c != ws.c) {
    throw ShapeError("conv2d: input " + is.str() + " incompatible with weights " + ws.str());
  }
  if (bias.size() != ws.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) +
                     " does not match weights " + ws.str());
  }
  if (stride == 0) throw Error("conv2d: stride must be >= 1");
  const std::size_t ho = detail::conv_out_dim(is.h, ws.h, stride, pad);
  const std::size_t wo = detail::conv_out_dim(is.w, ws.w, stride, pad);
  const std::size_t patch = ws.c * ws.h * ws.w;
  const std::size_t spatial = ho * wo;

  Tensor<T> out(Shape{is.n, ws.n, ho, wo});
  std::vector<T> cols(patch * spatial);
  for (std::size_t n = 0; n < is.n; ++n) {
    detail::im2col(input.data() + input.index(n, 0, 0, 0), is.c, is.h, is.w, ws.h, ws.w, stride,
                   pad, ho, wo, cols.data());
    T* dst = out.data() + out.index(n, 0, 0, 0);
    for (std::size_t o = 0; o < ws.n; ++o) std::fill_n(dst + o * spatial, spatial, bias[o]);
    linalg::gemm(false, false, ws.n, spatial, patch, weights.data(), cols.data(), dst, true);
  }
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> weight;
  std::vector<T> bias;
  Tensor<T> input;  // empty unless requested
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& grad_out, std::size_t stride, std::size_t pad,
                             bool want_input_grad) {
  const Shape& is = input.shape();
  const Shape& ws = weights.shape();
  const Shape& gs = grad_out.shape();
  const std::size_t ho = detail::conv_out_dim(is.h, ws.h, stride, pad);
  const std::size_t wo = detail::conv_out_dim(is.w, ws.w, stride, pad);
  if (gs != Shape{is.n, ws.n, ho, wo}) {
    throw ShapeError("conv2d backward: grad " + gs.str() + " does not match output " +
                     Shape{is.n, ws.n, ho, wo}.str());
  }
  const std::size_t patch = ws.c * ws.h * ws.w;
  const std::size_t spatial = ho * wo;

  ConvGrads<T> g{Tensor<T>(ws), std::vector<T>(ws.n, T(0)), {}};
  if (want_input_grad) g.input = Tensor<T>(is);
  std::vector<T> cols(patch * spatial);
  std::vector<T> grad_cols(want_input_grad ? patch * spatial : 0);
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* go = grad_out.data() + grad_out.index(n, 0, 0, 0);
    detail::im2col(input.data() + input.index(n, 0, 0, 0), is.c, is.h, is.w, ws.h, ws.w, stride,
                   pad, ho, wo, cols.data());
    linalg::gemm(false, true, ws.n, patch, spatial, go, cols.data(), g.weight.data(), true);
    for (std::size_t o = 0; o < ws.n; ++o) {
      T s = 0;
      for (std::size_t i = 0; i < spatial; ++i) s += go[o * spatial + i];
      g.bias[o] += s;
    }
    if (want_input_grad) {
      linalg::gemm(true, false, patch, spatial, ws.n, weights.data(), go, grad_cols.data(),
                   false);
      detail::col2im_add(grad_cols.data(), is.c, is.h, is.w, ws.h, ws.w, stride, pad, ho, wo,
                         g.input.data() + g.input.index(n, 0, 0, 0));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (T& v : out.values()) v = std::max(v, T(0));
  return out;
}

/// Gradient through ReLU given the layer's input.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (input.shape() != grad_out.shape()) {
    throw ShapeError("relu backward: " + input.shape().str() + " vs " + grad_out.shape().str());
  }
  Tensor<T> g = grad_out;
  auto in = input.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (!(in[i] > T(0))) gv[i] = T(0);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Local response normalization across channels:
//   y_c = x_c / (k + alpha * sum_{|j-c| <= radius} x_j^2)^beta

struct LrnConfig {
  std::size_t depth_radius = 2;  // window of 5 channels
  double bias_k = 2.0;
  double alpha = 1e-4;
  double beta = 0.75;
};

namespace detail {

template <typename T>
std::vector<T> lrn_denominators(const Tensor<T>& input, const LrnConfig& cfg) {
  const Shape& s = input.shape();
  std::vector<T> den(input.size());
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t lo = c >= cfg.depth_radius ? c - cfg.depth_radius : 0;
      const std::size_t hi = std::min(s.c - 1, c + cfg.depth_radius);
      T* d = den.data() + input.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        T sum = 0;
        for (std::size_t j = lo; j <= hi; ++j) {
          const T v = input.data()[input.index(n, j, 0, 0) + i];
          sum += v * v;
        }
        d[i] = static_cast<T>(cfg.bias_k) + static_cast<T>(cfg.alpha) * sum;
      }
    }
  }
  return den;
}

}  // namespace detail

template <typename T>
Tensor<T> lrn_forward(const Tensor<T>& input, const LrnConfig& cfg) {
  const auto den = detail::lrn_denominators(input, cfg);
  Tensor<T> out = input;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] /= std::pow(den[i], static_cast<T>(cfg.beta));
  return out;
}

template <typename T>
Tensor<T> lrn_backward(const Tensor<T>& input, const Tensor<T>& grad_out, const LrnConfig& cfg) {
  if (input.shape() != grad_out.shape()) {
    throw ShapeError("lrn backward: " + input.shape().str() + " vs " + grad_out.shape().str());
  }
  const Shape& s = input.shape();
  const auto den = detail::lrn_denominators(input, cfg);
  const T beta = static_cast<T>(cfg.beta);
  // ratio_i = g_i * x_i * den_i^(-beta-1)
  std::vector<T> ratio(input.size());
  Tensor<T> g(s);
  for (std::size_t i = 0; i < ratio.size(); ++i) {
    const T x = input.data()[i];
    const T go = grad_out.data()[i];
    g.data()[i] = go * std::pow(den[i], -beta);
    ratio[i] = go * x * std::pow(den[i], -beta - T(1));
  }
  const T coeff = T(2) * static_cast<T>(cfg.alpha) * beta;
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t lo = c >= cfg.depth_radius ? c - cfg.depth_radius : 0;
      const std::size_t hi = std::min(s.c - 1, c + cfg.depth_radius);
      const std::size_t base = input.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        T acc = 0;
        for (std::size_t j = lo; j <= hi; ++j) acc += ratio[input.index(n, j, 0, 0) + i];
        g.data()[base + i] -= coeff * input.data()[base + i] * acc;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Max pooling

struct PoolConfig {
  std::size_t kernel = 3;
  std::size_t stride = 2;
};

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
MaxPoolResult<T> maxpool_forward(const Tensor<T>& input, const PoolConfig& cfg) {
  const Shape& s = input.shape();
  if (cfg.stride == 0) throw Error("maxpool: stride must be >= 1");
  if (cfg.kernel == 0 || cfg.kernel > s.h || cfg.kernel > s.w) {
    throw ShapeError("maxpool: kernel " + std::to_string(cfg.kernel) + " exceeds input " +
                     s.str());
  }
  const std::size_t ho = (s.h - cfg.kernel) / cfg.stride + 1;
  const std::size_t wo = (s.w - cfg.kernel) / cfg.stride + 1;
  MaxPoolResult<T> r{Tensor<T>(Shape{s.n, s.c, ho, wo}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
          std::size_t best = input.index(n, c, oy * cfg.stride, ox * cfg.stride);
          for (std::size_t ky = 0; ky < cfg.kernel; ++ky) {
            for (std::size_t kx = 0; kx < cfg.kernel; ++kx) {
              const std::size_t i = input.index(n, c, oy * cfg.stride + ky, ox * cfg.stride + kx);
              if (input.data()[i] > input.data()[best]) best = i;
            }
          }
          r.output.data()[o] = input.data()[best];
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, std::span<const std::size_t> argmax,
                           const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool backward: " + std::to_string(argmax.size()) +
                     " records for grad " + grad_out.shape().str());
  }
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g.data()[argmax[i]] += grad_out.data()[i];
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected: y = W x + b, W stored out x in.

template <typename T>
std::vector<T> fc_forward(std::span<const T> input, const Matrix<T>& weights,
                          std::span<const T> bias) {
  if (input.size() != weights.cols() || bias.size() != weights.rows()) {
    throw ShapeError("fc: input " + std::to_string(input.size()) + " / bias " +
                     std::to_string(bias.size()) + " incompatible with weights " +
                     weights.shape_str());
  }
  std::vector<T> y(bias.begin(), bias.end());
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    const auto w = weights.row(r);
    T acc = 0;
    for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * input[c];
    y[r] += acc;
  }
  return y;
}

/// Batched form: each row of `input` is one sample.
template <typename T>
Matrix<T> fc_forward(const Matrix<T>& input, const Matrix<T>& weights, std::span<const T> bias) {
  if (input.cols() != weights.cols() || bias.size() != weights.rows()) {
    throw ShapeError("fc: input " + input.shape_str() + " incompatible with weights " +
                     weights.shape_str());
  }
  Matrix<T> out(input.rows(), weights.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) std::copy(bias.begin(), bias.end(), out.row(r).begin());
  linalg::gemm(false, true, input.rows(), weights.rows(), weights.cols(), input.data(),
               weights.data(), out.data(), true);
  return out;
}

template <typename T>
struct FcGrads {
  Matrix<T> weight;
  std::vector<T> bias;
  Matrix<T> input;
};

template <typename T>
FcGrads<T> fc_backward(const Matrix<T>& input, const Matrix<T>& weights,
                       const Matrix<T>& grad_out) {
  if (grad_out.rows() != input.rows() || grad_out.cols() != weights.rows()) {
    throw ShapeError("fc backward: grad " + grad_out.shape_str() + " vs input " +
                     input.shape_str() + " and weights " + weights.shape_str());
  }
  FcGrads<T> g{Matrix<T>(weights.rows(), weights.cols()), std::vector<T>(weights.rows(), T(0)),
               Matrix<T>(input.rows(), input.cols())};
  linalg::gemm(true, false, weights.rows(), weights.cols(), input.rows(), grad_out.data(),
               input.data(), g.weight.data(), false);
  for (std::size_t r = 0; r < grad_out.rows(); ++r) {
    for (std::size_t c = 0; c < grad_out.cols(); ++c) g.bias[c] += grad_out(r, c);
  }
  linalg::gemm(false, false, input.rows(), weights.cols(), weights.rows(), grad_out.data(),
               weights.data(), g.input.data(), false);
  return g;
}

// ---------------------------------------------------------------------------
// Inverted dropout

template <typename T>
struct DropoutResult {
  std::vector<T> output;
  std::vector<T> mask;  // 0 or 1/(1-rate) per element; all ones in eval mode
};

template <typename T>
DropoutResult<T> dropout_forward(std::span<const T> input, double rate, Mode mode,
                                 std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout: rate must lie in [0, 1)");
  DropoutResult<T> r{std::vector<T>(input.begin(), input.end()),
                     std::vector<T>(input.size(), T(1))};
  if (mode == Mode::eval || rate == 0.0) return r;
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.mask[i] = keep(rng) ? scale : T(0);
    r.output[i] *= r.mask[i];
  }
  return r;
}

template <typename T>
DropoutResult<T> dropout_forward(std::span<const T> input, double rate, Mode mode,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return dropout_forward(input, rate, mode, rng);
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

template <typename T>
struct XentResult {
  T loss;
  std::vector<T> grad;  // d loss / d logits = softmax - onehot
};

template <typename T>
XentResult<T> softmax_xent(std::span<const T> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ShapeError("softmax_xent: label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " logits");
  }
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  std::vector<T> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  XentResult<T> r{std::log(sum) - (logits[label] - mx), std::move(p)};
  for (T& v : r.grad) v /= sum;
  r.grad[label] -= T(1);
  return r;
}

template <typename T>
XentResult<T> softmax_xent(std::span<const T> logits, Label label) {
  return softmax_xent(logits, static_cast<std::size_t>(label));
}

}  // namespace fsnet
