#pragma once

// Convolution geometry and the im2col/GEMM kernels shared by conv2d,
// deconv2d and their gradients. Layout is NHWC; kernels are
// [kh, kw, Cin, Cout], which is exactly a (kh*kw*Cin) x Cout matrix.

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gaug/error.hpp"

namespace gaug {

struct Padding {
  enum class Kind { Same, Zero };
  Kind kind = Kind::Same;
  int amount = 0;  // only for Kind::Zero

  static Padding same() { return {Kind::Same, 0}; }
  static Padding zero(int p) { return {Kind::Zero, p}; }

  bool operator==(const Padding&) const = default;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t k_h = 0, k_w = 0, out_c = 0;
  std::size_t stride = 1;
  std::size_t out_h = 0, out_w = 0;
  long pad_top = 0, pad_left = 0;

  std::size_t patch() const { return k_h * k_w * in_c; }
  std::size_t in_plane() const { return in_h * in_w * in_c; }
  std::size_t out_plane() const { return out_h * out_w * out_c; }
};

// Resolves one spatial axis. "Same" follows the usual ceil(n / stride)
// convention, with any odd padding placed after the data.
inline void resolve_axis(std::size_t in, std::size_t k, std::size_t stride, Padding padding, std::size_t& out,
                         long& pad_before) {
  if (padding.kind == Padding::Kind::Same) {
    out = (in + stride - 1) / stride;
    const long total = std::max<long>(0, static_cast<long>((out - 1) * stride + k) - static_cast<long>(in));
    pad_before = total / 2;
    return;
  }
  if (padding.amount < 0) throw ParameterError("negative zero-padding " + std::to_string(padding.amount));
  const std::size_t padded = in + 2 * static_cast<std::size_t>(padding.amount);
  if (k > padded) {
    throw DimensionError("kernel extent " + std::to_string(k) + " exceeds padded input extent " +
                         std::to_string(padded));
  }
  out = (padded - k) / stride + 1;
  pad_before = padding.amount;
}

inline ConvGeometry make_geometry(std::size_t batch, std::size_t h, std::size_t w, std::size_t c, std::size_t kh,
                                  std::size_t kw, std::size_t out_c, std::size_t stride, Padding padding) {
  if (stride < 1) throw ParameterError("stride must be >= 1");
  ConvGeometry g;
  g.batch = batch;
  g.in_h = h;
  g.in_w = w;
  g.in_c = c;
  g.k_h = kh;
  g.k_w = kw;
  g.out_c = out_c;
  g.stride = stride;
  resolve_axis(h, kh, stride, padding, g.out_h, g.pad_top);
  resolve_axis(w, kw, stride, padding, g.out_w, g.pad_left);
  return g;
}

// cols is (out_h*out_w) x patch for one sample.
inline void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      double* row = cols + (oy * g.out_w + ox) * patch;
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - g.pad_top;
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - g.pad_left;
          double* dst = row + (ky * g.k_w + kx) * g.in_c;
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) {
            std::fill(dst, dst + g.in_c, 0.0);
          } else {
            const double* src = x + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
            std::copy(src, src + g.in_c, dst);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds patch rows back into the image.
inline void col2im(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const double* row = cols + (oy * g.out_w + ox) * patch;
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - g.pad_top;
        if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - g.pad_left;
          if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
          const double* src = row + (ky * g.k_w + kx) * g.in_c;
          double* dst = x + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
          for (std::size_t c = 0; c < g.in_c; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

/// y = conv(x, k): x is batch x in_plane, y is batch x out_plane.
inline std::vector<double> conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> k) {
  std::vector<double> y(g.batch * g.out_plane());
  std::vector<double> cols(g.out_h * g.out_w * g.patch());
  ConstMapMatrix kmat(k.data(), g.patch(), g.out_c);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, x.data() + n * g.in_plane(), cols.data());
    ConstMapMatrix cmat(cols.data(), g.out_h * g.out_w, g.patch());
    MapMatrix ymat(y.data() + n * g.out_plane(), g.out_h * g.out_w, g.out_c);
    ymat.noalias() = cmat * kmat;
  }
  return y;
}

/// Gradient of conv w.r.t. its input; also the forward map of deconv.
inline std::vector<double> conv_backward_input(const ConvGeometry& g, std::span<const double> gy,
                                               std::span<const double> k) {
  std::vector<double> gx(g.batch * g.in_plane(), 0.0);
  std::vector<double> cols(g.out_h * g.out_w * g.patch());
  ConstMapMatrix kmat(k.data(), g.patch(), g.out_c);
  for (std::size_t n = 0; n < g.batch; ++n) {
    ConstMapMatrix gmat(gy.data() + n * g.out_plane(), g.out_h * g.out_w, g.out_c);
    MapMatrix cmat(cols.data(), g.out_h * g.out_w, g.patch());
    cmat.noalias() = gmat * kmat.transpose();
    col2im(g, cols.data(), gx.data() + n * g.in_plane());
  }
  return gx;
}

/// Gradient of conv w.r.t. its kernel.
inline std::vector<double> conv_backward_kernel(const ConvGeometry& g, std::span<const double> x,
                                                std::span<const double> gy) {
  std::vector<double> gk(g.patch() * g.out_c, 0.0);
  std::vector<double> cols(g.out_h * g.out_w * g.patch());
  MapMatrix kmat(gk.data(), g.patch(), g.out_c);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, x.data() + n * g.in_plane(), cols.data());
    ConstMapMatrix cmat(cols.data(), g.out_h * g.out_w, g.patch());
    ConstMapMatrix gmat(gy.data() + n * g.out_plane(), g.out_h * g.out_w, g.out_c);
    kmat.noalias() += cmat.transpose() * gmat;
  }
  return gk;
}

}  // namespace detail
}  // namespace gaug
