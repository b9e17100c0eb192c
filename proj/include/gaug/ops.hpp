#pragma once

// Differentiable primitives. Every op computes its value eagerly and, when
// an input requires a gradient, records a closure holding what backward
// needs. Ops never mutate their inputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gaug/conv.hpp"
#include "gaug/tensor.hpp"

namespace gaug {

enum class Activation { Identity, Relu, Tanh };
enum class Reduction { Mean, Sum, L1 };

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D dfdx) {
  std::vector<double> y(x.size());
  const auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
  Tensor out(x.shape(), std::move(y));
  return Tape::record(op, {&x}, out, [x, out, dfdx](std::span<const double> g, GradSink& sink) {
    std::vector<double> gx(g.size());
    const auto xs = x.data();
    const auto ys = out.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * dfdx(xs[i], ys[i]);
    sink.add(0, gx);
  });
}

inline double log_sigmoid_value(double v) {
  // log(1 / (1 + e^-v)) without overflow on either tail.
  return v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
}

inline double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  return Tape::record("add", {&a, &b}, Tensor(a.shape(), std::move(y)), [](std::span<const double> g, GradSink& sink) {
    sink.add(0, g);
    sink.add(1, g);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  return Tape::record("sub", {&a, &b}, Tensor(a.shape(), std::move(y)), [](std::span<const double> g, GradSink& sink) {
    sink.add(0, g);
    if (sink.wants(1)) {
      std::vector<double> neg(g.begin(), g.end());
      for (double& v : neg) v = -v;
      sink.add(1, neg);
    }
  });
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return Tape::record("mul", {&a, &b}, Tensor(a.shape(), std::move(y)),
                      [a, b](std::span<const double> g, GradSink& sink) {
                        std::vector<double> tmp(g.size());
                        if (sink.wants(0)) {
                          for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * b[i];
                          sink.add(0, tmp);
                        }
                        if (sink.wants(1)) {
                          for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * a[i];
                          sink.add(1, tmp);
                        }
                      });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary("scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary("add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// |x| with subgradient 0 at exactly 0.
inline Tensor absolute(const Tensor& x) {
  return detail::unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary("sigmoid", x, detail::sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

/// log(sigmoid(x)), stable for large |x|.
inline Tensor log_sigmoid(const Tensor& x) {
  return detail::unary("log_sigmoid", x, detail::log_sigmoid_value,
                       [](double v, double) { return detail::sigmoid_value(-v); });
}

inline Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::Relu:
      return detail::unary(
          "relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
    case Activation::Tanh:
      return detail::unary(
          "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
    case Activation::Identity:
      break;
  }
  return x;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return Tape::record("reshape", {&x}, Tensor(std::move(shape), x.to_vector()),
                      [](std::span<const double> g, GradSink& sink) { sink.add(0, g); });
}

/// Reduces all elements to a scalar of shape [1].
inline Tensor reduce(const Tensor& x, Reduction kind) {
  const auto xs = x.data();
  double acc = 0.0;
  for (double v : xs) acc += kind == Reduction::L1 ? std::abs(v) : v;
  if (kind == Reduction::Mean) acc /= static_cast<double>(xs.size());
  const char* op = kind == Reduction::Mean ? "mean" : (kind == Reduction::Sum ? "sum" : "l1");
  return Tape::record(op, {&x}, Tensor::scalar(acc), [x, kind](std::span<const double> g, GradSink& sink) {
    const auto xs = x.data();
    std::vector<double> gx(xs.size());
    const double base = kind == Reduction::Mean ? g[0] / static_cast<double>(xs.size()) : g[0];
    for (std::size_t i = 0; i < xs.size(); ++i) {
      gx[i] = kind == Reduction::L1 ? base * (xs[i] > 0 ? 1.0 : (xs[i] < 0 ? -1.0 : 0.0)) : base;
    }
    sink.add(0, gx);
  });
}

inline Tensor sum(const Tensor& x) { return reduce(x, Reduction::Sum); }
inline Tensor mean(const Tensor& x) { return reduce(x, Reduction::Mean); }

/// a [m x k] times b [k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> y(m * n);
  detail::MapMatrix(y.data(), m, n).noalias() =
      detail::ConstMapMatrix(a.data().data(), m, k) * detail::ConstMapMatrix(b.data().data(), k, n);
  return Tape::record("matmul", {&a, &b}, Tensor({m, n}, std::move(y)),
                      [a, b, m, k, n](std::span<const double> g, GradSink& sink) {
                        detail::ConstMapMatrix gm(g.data(), m, n);
                        if (sink.wants(0)) {
                          std::vector<double> ga(m * k);
                          detail::MapMatrix(ga.data(), m, k).noalias() =
                              gm * detail::ConstMapMatrix(b.data().data(), k, n).transpose();
                          sink.add(0, ga);
                        }
                        if (sink.wants(1)) {
                          std::vector<double> gb(k * n);
                          detail::MapMatrix(gb.data(), k, n).noalias() =
                              detail::ConstMapMatrix(a.data().data(), m, k).transpose() * gm;
                          sink.add(1, gb);
                        }
                      });
}

/// Adds a per-channel bias along the last axis.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t c = x.shape().back();
  if (bias.size() != c) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match channels of " +
                         to_string(x.shape()));
  }
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + bias[i % c];
  return Tape::record("add_bias", {&x, &bias}, Tensor(x.shape(), std::move(y)),
                      [c](std::span<const double> g, GradSink& sink) {
                        sink.add(0, g);
                        if (sink.wants(1)) {
                          std::vector<double> gb(c, 0.0);
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
                          sink.add(1, gb);
                        }
                      });
}

/// Mean over the spatial axes of an NHWC tensor: [N,H,W,C] -> [N,C].
inline Tensor spatial_mean(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("spatial_mean expects NHWC, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  std::vector<double> y(n * c, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) y[b * c + ch] += x[(b * hw + p) * c + ch];
  for (double& v : y) v /= static_cast<double>(hw);
  return Tape::record("spatial_mean", {&x}, Tensor({n, c}, std::move(y)),
                      [n, hw, c](std::span<const double> g, GradSink& sink) {
                        std::vector<double> gx(n * hw * c);
                        const double inv = 1.0 / static_cast<double>(hw);
                        for (std::size_t b = 0; b < n; ++b)
                          for (std::size_t p = 0; p < hw; ++p)
                            for (std::size_t ch = 0; ch < c; ++ch) gx[(b * hw + p) * c + ch] = g[b * c + ch] * inv;
                        sink.add(0, gx);
                      });
}

namespace detail {

// Accepts HWC (treated as a batch of one) or NHWC.
inline Shape as_nhwc(const char* op, const Tensor& x) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return x.shape();
  throw DimensionError(std::string(op) + " expects HWC or NHWC input, got " + to_string(x.shape()));
}

inline Shape restore_rank(const Tensor& x, std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
  if (x.rank() == 3) return {h, w, c};
  return {n, h, w, c};
}

}  // namespace detail

/// Cross-correlation of x [N,H,W,Cin] (or [H,W,Cin]) with kernel
/// [kh,kw,Cin,Cout]. Output extent per axis is floor((H + 2p - kh)/stride) + 1
/// for zero padding, ceil(H/stride) for same padding.
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, Padding padding) {
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  const Shape in = detail::as_nhwc("conv2d", x);
  if (kernel.rank() != 4 || kernel.dim(2) != in[3]) {
    throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) + " incompatible with input " +
                         to_string(x.shape()));
  }
  const auto geo = detail::make_geometry(in[0], in[1], in[2], in[3], kernel.dim(0), kernel.dim(1), kernel.dim(3),
                                         static_cast<std::size_t>(stride), padding);
  auto y = detail::conv_forward(geo, x.data(), kernel.data());
  Tensor out(detail::restore_rank(x, geo.batch, geo.out_h, geo.out_w, geo.out_c), std::move(y));
  return Tape::record("conv2d", {&x, &kernel}, out, [x, kernel, geo](std::span<const double> g, GradSink& sink) {
    if (sink.wants(0)) sink.add(0, detail::conv_backward_input(geo, g, kernel.data()));
    if (sink.wants(1)) sink.add(1, detail::conv_backward_kernel(geo, x.data(), g));
  });
}

/// Transposed convolution: the exact adjoint of a same-padded conv2d with
/// stride `up_factor`, so spatial extents grow by `up_factor`. The kernel is
/// laid out as for that conv: [kh, kw, Cout, Cin].
inline Tensor deconv2d(const Tensor& x, const Tensor& kernel, int up_factor) {
  if (up_factor < 1) throw ParameterError("deconv2d: up_factor must be >= 1, got " + std::to_string(up_factor));
  const Shape in = detail::as_nhwc("deconv2d", x);
  if (kernel.rank() != 4 || kernel.dim(3) != in[3]) {
    throw DimensionError("deconv2d: kernel " + to_string(kernel.shape()) + " incompatible with input " +
                         to_string(x.shape()));
  }
  const std::size_t up = static_cast<std::size_t>(up_factor);
  const auto geo = detail::make_geometry(in[0], in[1] * up, in[2] * up, kernel.dim(2), kernel.dim(0), kernel.dim(1),
                                         kernel.dim(3), up, Padding::same());
  auto y = detail::conv_backward_input(geo, x.data(), kernel.data());
  Tensor out(detail::restore_rank(x, geo.batch, geo.in_h, geo.in_w, geo.in_c), std::move(y));
  return Tape::record("deconv2d", {&x, &kernel}, out, [x, kernel, geo](std::span<const double> g, GradSink& sink) {
    if (sink.wants(0)) sink.add(0, detail::conv_forward(geo, g, kernel.data()));
    if (sink.wants(1)) sink.add(1, detail::conv_backward_kernel(geo, g, x.data()));
  });
}

/// Max pooling over k x k windows with same padding (padded cells never win).
inline Tensor max_pool2d(const Tensor& x, int k, int stride) {
  if (k < 1 || stride < 1) throw ParameterError("max_pool2d: window and stride must be >= 1");
  const Shape in = detail::as_nhwc("max_pool2d", x);
  const auto geo = detail::make_geometry(in[0], in[1], in[2], in[3], static_cast<std::size_t>(k),
                                         static_cast<std::size_t>(k), in[3], static_cast<std::size_t>(stride),
                                         Padding::same());
  std::vector<double> y(geo.batch * geo.out_h * geo.out_w * geo.in_c);
  std::vector<std::size_t> argmax(y.size());
  const auto xs = x.data();
  for (std::size_t n = 0; n < geo.batch; ++n)
    for (std::size_t oy = 0; oy < geo.out_h; ++oy)
      for (std::size_t ox = 0; ox < geo.out_w; ++ox)
        for (std::size_t c = 0; c < geo.in_c; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_at = 0;
          for (std::size_t ky = 0; ky < geo.k_h; ++ky) {
            const long iy = static_cast<long>(oy * geo.stride + ky) - geo.pad_top;
            if (iy < 0 || iy >= static_cast<long>(geo.in_h)) continue;
            for (std::size_t kx = 0; kx < geo.k_w; ++kx) {
              const long ix = static_cast<long>(ox * geo.stride + kx) - geo.pad_left;
              if (ix < 0 || ix >= static_cast<long>(geo.in_w)) continue;
              const std::size_t at =
                  ((n * geo.in_h + static_cast<std::size_t>(iy)) * geo.in_w + static_cast<std::size_t>(ix)) *
                      geo.in_c + c;
              if (xs[at] > best) {
                best = xs[at];
                best_at = at;
              }
            }
          }
          const std::size_t o = ((n * geo.out_h + oy) * geo.out_w + ox) * geo.in_c + c;
          y[o] = best;
          argmax[o] = best_at;
        }
  Tensor out(detail::restore_rank(x, geo.batch, geo.out_h, geo.out_w, geo.in_c), std::move(y));
  const std::size_t in_size = x.size();
  return Tape::record("max_pool2d", {&x}, out,
                      [argmax = std::move(argmax), in_size](std::span<const double> g, GradSink& sink) {
                        std::vector<double> gx(in_size, 0.0);
                        for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                        sink.add(0, gx);
                      });
}

enum class BatchNormMode { Train, Eval };

/// Running per-channel statistics for evaluation mode.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
  double decay = 0.9;

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t channels) : mean(channels, 0.0), var(channels, 1.0) {}
};

/// Per-channel normalization over every axis except the last. In Train mode
/// batch statistics are used (biased variance) and, when `stats` is given,
/// folded into its running averages. Eval mode uses `stats` directly.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, BatchNormMode mode,
                         BatchNormStats* stats = nullptr) {
  if (!(eps > 0)) throw ParameterError("batch_norm: eps must be > 0");
  const std::size_t c = x.shape().back();
  if (gamma.size() != c || beta.size() != c) {
    throw DimensionError("batch_norm: gamma " + to_string(gamma.shape()) + " / beta " + to_string(beta.shape()) +
                         " do not match channels of " + to_string(x.shape()));
  }
  if (stats && (stats->mean.size() != c || stats->var.size() != c)) {
    throw DimensionError("batch_norm: running statistics have wrong channel count");
  }
  if (mode == BatchNormMode::Eval && !stats) throw ContractError("batch_norm: eval mode needs running statistics");

  const std::size_t rows = x.size() / c;
  const auto xs = x.data();
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (mode == BatchNormMode::Train) {
    for (std::size_t i = 0; i < x.size(); ++i) mu[i % c] += xs[i];
    for (double& m : mu) m /= static_cast<double>(rows);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = xs[i] - mu[i % c];
      var[i % c] += d * d;
    }
    for (double& v : var) v /= static_cast<double>(rows);
    if (stats) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        stats->mean[ch] = stats->decay * stats->mean[ch] + (1.0 - stats->decay) * mu[ch];
        stats->var[ch] = stats->decay * stats->var[ch] + (1.0 - stats->decay) * var[ch];
      }
    }
  } else {
    mu = stats->mean;
    var = stats->var;
  }
  std::vector<double> inv_std(c), xhat(x.size()), y(x.size());
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t ch = i % c;
    xhat[i] = (xs[i] - mu[ch]) * inv_std[ch];
    y[i] = gamma[ch] * xhat[i] + beta[ch];
  }
  Tensor out(x.shape(), std::move(y));
  const bool train = mode == BatchNormMode::Train;
  return Tape::record(
      "batch_norm", {&x, &gamma, &beta}, out,
      [gamma, c, rows, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](std::span<const double> g,
                                                                                   GradSink& sink) {
        std::vector<double> g_gamma(c, 0.0), g_beta(c, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          g_gamma[i % c] += g[i] * xhat[i];
          g_beta[i % c] += g[i];
        }
        if (sink.wants(0)) {
          std::vector<double> gx(g.size());
          const double inv_rows = 1.0 / static_cast<double>(rows);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t ch = i % c;
            const double scale_ch = gamma[ch] * inv_std[ch];
            gx[i] = train ? scale_ch * (g[i] - g_beta[ch] * inv_rows - xhat[i] * g_gamma[ch] * inv_rows)
                          : scale_ch * g[i];
          }
          sink.add(0, gx);
        }
        sink.add(1, g_gamma);
        sink.add(2, g_beta);
      });
}

/// Mean softmax cross-entropy of logits [N,K] against integer labels.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) +
                      ")");
    }
    const double* row = logits.data().data() + r * k;
    const double top = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - top);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - top) / z;
    loss += std::log(z) + top - row[label];
  }
  loss /= static_cast<double>(n);
  std::vector<int> owned(labels.begin(), labels.end());
  return Tape::record("softmax_xent", {&logits}, Tensor::scalar(loss),
                      [probs = std::move(probs), owned = std::move(owned), n, k](std::span<const double> g,
                                                                                 GradSink& sink) {
                        std::vector<double> gx(probs);
                        for (std::size_t r = 0; r < n; ++r) gx[r * k + static_cast<std::size_t>(owned[r])] -= 1.0;
                        for (double& v : gx) v *= g[0] / static_cast<double>(n);
                        sink.add(0, gx);
                      });
}

/// Row-wise softmax; not recorded on any tape.
inline std::vector<double> softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows expects a matrix, got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> p(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = logits.data().data() + r * k;
    const double top = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (p[r * k + j] = std::exp(row[j] - top));
    for (std::size_t j = 0; j < k; ++j) p[r * k + j] /= z;
  }
  return p;
}

}  // namespace gaug
