// Copyright 2026 The MRDL Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Forward/backward primitives for the feature extractor and classifier head.
// Convolution is cross-correlation with zero padding. All functions are pure.

#ifndef MRDL_NUMKERNEL_HPP_
#define MRDL_NUMKERNEL_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mrdl/common.hpp"
#include "mrdl/tensor.hpp"

namespace mrdl::nk {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

inline void check_conv_shapes(const Tensor4& input, const Tensor4& kernels,
                              std::span<const double> bias, std::size_t stride, std::size_t pad) {
  require(stride >= 1, ErrorCode::kInvalidArgument, "conv2d stride must be >= 1");
  require(kernels.channels() == input.channels(), ErrorCode::kShapeMismatch,
          "conv2d kernel channels " + std::to_string(kernels.channels()) +
              " != input channels " + std::to_string(input.channels()) + "; input " +
              dims_str(input) + ", kernels " + dims_str(kernels));
  require(bias.empty() || bias.size() == kernels.batch(), ErrorCode::kShapeMismatch,
          "conv2d bias length " + std::to_string(bias.size()) + " != output channels " +
              std::to_string(kernels.batch()));
  require(input.height() + 2 * pad >= kernels.height() && input.width() + 2 * pad >= kernels.width(),
          ErrorCode::kShapeMismatch,
          "conv2d kernel " + dims_str(kernels) + " larger than padded input " + dims_str(input));
}

/// Output indices [lo, hi) whose tap at kernel offset `k` lands inside an
/// input of length `in`.
struct Range {
  std::size_t lo, hi;
};

inline Range valid_range(std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, std::size_t in) {
  std::size_t lo = 0;
  while (lo < out && lo * stride + k < pad) ++lo;
  std::size_t hi = out;
  while (hi > lo && (hi - 1) * stride + k - pad >= in) --hi;
  return {lo, hi};
}

/// Dot product with four interleaved partial sums (fixed order).
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace detail

/// Reference convolution: one ordered sum per output element.
inline Tensor4 conv2d_forward_naive(const Tensor4& input, const Tensor4& kernels,
                                    std::span<const double> bias, std::size_t stride,
                                    std::size_t pad) {
  detail::check_conv_shapes(input, kernels, bias, stride, pad);
  const std::size_t kh = kernels.height(), kw = kernels.width();
  const std::size_t oh = conv_out_dim(input.height(), kh, stride, pad);
  const std::size_t ow = conv_out_dim(input.width(), kw, stride, pad);
  Tensor4 out(input.batch(), kernels.batch(), oh, ow);
  const auto ih_max = static_cast<long>(input.height());
  const auto iw_max = static_cast<long>(input.width());
  for (std::size_t n = 0; n < input.batch(); ++n) {
    for (std::size_t oc = 0; oc < kernels.batch(); ++oc) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          for (std::size_t ic = 0; ic < input.channels(); ++ic) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
              if (iy < 0 || iy >= ih_max) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
                if (ix < 0 || ix >= iw_max) continue;
                acc += kernels(oc, ic, ky, kx) * input(n, ic, static_cast<std::size_t>(iy),
                                                      static_cast<std::size_t>(ix));
              }
            }
          }
          out(n, oc, y, x) = acc;
        }
      }
    }
  }
  return out;
}

/// Plane-blocked convolution, parallel over (sample, output channel). Adds
/// terms in the same order as the naive path.
inline Tensor4 conv2d_forward(const Tensor4& input, const Tensor4& kernels,
                              std::span<const double> bias, std::size_t stride, std::size_t pad) {
  detail::check_conv_shapes(input, kernels, bias, stride, pad);
  const std::size_t ic_n = input.channels(), ih = input.height(), iw = input.width();
  const std::size_t kh = kernels.height(), kw = kernels.width();
  const std::size_t oc_n = kernels.batch();
  const std::size_t oh = conv_out_dim(ih, kh, stride, pad);
  const std::size_t ow = conv_out_dim(iw, kw, stride, pad);
  Tensor4 out(input.batch(), oc_n, oh, ow);

  parallel_for(input.batch() * oc_n, [&](std::size_t job) {
    const std::size_t n = job / oc_n, oc = job % oc_n;
    double* dst = out.plane(n, oc);
    std::fill(dst, dst + oh * ow, bias.empty() ? 0.0 : bias[oc]);
    for (std::size_t ic = 0; ic < ic_n; ++ic) {
      const double* src = input.plane(n, ic);
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double w = kernels(oc, ic, ky, kx);
          const auto xr = detail::valid_range(ow, kx, stride, pad, iw);
          const auto yr = detail::valid_range(oh, ky, stride, pad, ih);
          for (std::size_t y = yr.lo; y < yr.hi; ++y) {
            const double* srow = src + (y * stride + ky - pad) * iw;
            double* drow = dst + y * ow;
            if (stride == 1) {
              const double* sp = srow + kx - pad;
              for (std::size_t x = xr.lo; x < xr.hi; ++x) drow[x] += w * sp[x];
            } else {
              for (std::size_t x = xr.lo; x < xr.hi; ++x) drow[x] += w * srow[x * stride + kx - pad];
            }
          }
        }
      }
    }
  });
  return out;
}

struct ConvGrads {
  Tensor4 input;
  Tensor4 kernels;
  std::vector<double> bias;
};

inline ConvGrads conv2d_backward(const Tensor4& grad_out, const Tensor4& saved_input,
                                 const Tensor4& kernels, std::size_t stride, std::size_t pad) {
  require(kernels.channels() == saved_input.channels(), ErrorCode::kShapeMismatch,
          "conv2d_backward kernel channels do not match saved input " + dims_str(saved_input));
  const std::size_t ic_n = saved_input.channels(), ih = saved_input.height(), iw = saved_input.width();
  const std::size_t kh = kernels.height(), kw = kernels.width(), oc_n = kernels.batch();
  const std::size_t oh = conv_out_dim(ih, kh, stride, pad);
  const std::size_t ow = conv_out_dim(iw, kw, stride, pad);
  require(grad_out.batch() == saved_input.batch() && grad_out.channels() == oc_n &&
              grad_out.height() == oh && grad_out.width() == ow,
          ErrorCode::kShapeMismatch,
          "conv2d_backward grad_out " + dims_str(grad_out) + " != expected " +
              dims_str(saved_input.batch(), oc_n, oh, ow));
  const std::size_t batch = saved_input.batch();

  ConvGrads g{Tensor4(saved_input.dims()), Tensor4(kernels.dims()), std::vector<double>(oc_n, 0.0)};

  // Bias and kernel gradients: one job per output channel, batch summed in order.
  parallel_for(oc_n, [&](std::size_t oc) {
    double bsum = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* go = grad_out.plane(n, oc);
      for (std::size_t i = 0; i < oh * ow; ++i) bsum += go[i];
    }
    g.bias[oc] = bsum;
    for (std::size_t ic = 0; ic < ic_n; ++ic) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto yr = detail::valid_range(oh, ky, stride, pad, ih);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto xr = detail::valid_range(ow, kx, stride, pad, iw);
          double acc = 0.0;
          for (std::size_t n = 0; n < batch; ++n) {
            const double* go = grad_out.plane(n, oc);
            const double* src = saved_input.plane(n, ic);
            for (std::size_t y = yr.lo; y < yr.hi; ++y) {
              const double* srow = src + (y * stride + ky - pad) * iw;
              if (stride == 1) {
                acc += detail::dot(go + y * ow + xr.lo, srow + xr.lo + kx - pad, xr.hi - xr.lo);
              } else {
                for (std::size_t x = xr.lo; x < xr.hi; ++x) acc += go[y * ow + x] * srow[x * stride + kx - pad];
              }
            }
          }
          g.kernels(oc, ic, ky, kx) = acc;
        }
      }
    }
  });

  // Input gradient: one job per sample.
  parallel_for(batch, [&](std::size_t n) {
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      const double* go = grad_out.plane(n, oc);
      for (std::size_t ic = 0; ic < ic_n; ++ic) {
        double* gi = g.input.plane(n, ic);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto yr = detail::valid_range(oh, ky, stride, pad, ih);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto xr = detail::valid_range(ow, kx, stride, pad, iw);
            const double w = kernels(oc, ic, ky, kx);
            for (std::size_t y = yr.lo; y < yr.hi; ++y) {
              double* grow = gi + (y * stride + ky - pad) * iw;
              const double* gorow = go + y * ow;
              if (stride == 1) {
                double* dst = grow + kx - pad;
                for (std::size_t x = xr.lo; x < xr.hi; ++x) dst[x] += w * gorow[x];
              } else {
                for (std::size_t x = xr.lo; x < xr.hi; ++x) grow[x * stride + kx - pad] += w * gorow[x];
              }
            }
          }
        }
      }
    }
  });
  return g;
}

/// 2x2 average pooling with stride 2. Spatial dims must be even.
inline Tensor4 avgpool2(const Tensor4& input) {
  require(input.height() % 2 == 0 && input.width() % 2 == 0, ErrorCode::kShapeMismatch,
          "avgpool2 needs even spatial dims, got " + dims_str(input));
  const std::size_t oh = input.height() / 2, ow = input.width() / 2;
  Tensor4 out(input.batch(), input.channels(), oh, ow);
  for (std::size_t n = 0; n < input.batch(); ++n)
    for (std::size_t c = 0; c < input.channels(); ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
          out(n, c, y, x) = 0.25 * (input(n, c, 2 * y, 2 * x) + input(n, c, 2 * y, 2 * x + 1) +
                                    input(n, c, 2 * y + 1, 2 * x) + input(n, c, 2 * y + 1, 2 * x + 1));
  return out;
}

inline Tensor4 avgpool2_backward(const Tensor4& grad_out) {
  Tensor4 g(grad_out.batch(), grad_out.channels(), grad_out.height() * 2, grad_out.width() * 2);
  for (std::size_t n = 0; n < g.batch(); ++n)
    for (std::size_t c = 0; c < g.channels(); ++c)
      for (std::size_t y = 0; y < g.height(); ++y)
        for (std::size_t x = 0; x < g.width(); ++x) g(n, c, y, x) = 0.25 * grad_out(n, c, y / 2, x / 2);
  return g;
}

inline Tensor4 relu(const Tensor4& input) {
  Tensor4 out = input;
  for (double& v : out.flat()) v = v > 0.0 ? v : 0.0;
  return out;
}

/// Gradient is passed where the saved input was strictly positive.
inline Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& saved_input) {
  require(grad_out.dims() == saved_input.dims(), ErrorCode::kShapeMismatch,
          "relu_backward grad " + dims_str(grad_out) + " vs input " + dims_str(saved_input));
  Tensor4 g = grad_out;
  auto x = saved_input.flat();
  auto gv = g.flat();
  for (std::size_t i = 0; i < gv.size(); ++i)
    if (!(x[i] > 0.0)) gv[i] = 0.0;
  return g;
}

/// y = x W + b, row by row. `bias` may be empty (no bias term).
inline Matrix affine_forward(const Matrix& x, const Matrix& w, std::span<const double> bias) {
  require(x.cols() == w.rows(), ErrorCode::kShapeMismatch,
          "affine inner dims: x " + dims_str(x) + " W " + dims_str(w));
  require(bias.empty() || bias.size() == w.cols(), ErrorCode::kShapeMismatch,
          "affine bias length " + std::to_string(bias.size()) + " != " + std::to_string(w.cols()));
  Matrix y(x.rows(), w.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto yr = y.row(r);
    if (!bias.empty()) std::copy(bias.begin(), bias.end(), yr.begin());
    for (std::size_t i = 0; i < x.cols(); ++i) {
      const double xi = x(r, i);
      auto wr = w.row(i);
      for (std::size_t o = 0; o < w.cols(); ++o) yr[o] += xi * wr[o];
    }
  }
  return y;
}

struct AffineGrads {
  Matrix x;
  Matrix w;
  std::vector<double> bias;
};

inline AffineGrads affine_backward(const Matrix& grad_y, const Matrix& x, const Matrix& w) {
  require(x.cols() == w.rows(), ErrorCode::kShapeMismatch,
          "affine_backward inner dims: x " + dims_str(x) + " W " + dims_str(w));
  require(grad_y.rows() == x.rows() && grad_y.cols() == w.cols(), ErrorCode::kShapeMismatch,
          "affine_backward grad " + dims_str(grad_y) + " != " + dims_str(x.rows(), w.cols()));
  AffineGrads g{Matrix(x.rows(), x.cols()), Matrix(w.rows(), w.cols()),
                std::vector<double>(w.cols(), 0.0)};
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto gy = grad_y.row(r);
    for (std::size_t o = 0; o < w.cols(); ++o) g.bias[o] += gy[o];
    for (std::size_t i = 0; i < x.cols(); ++i) {
      auto wr = w.row(i);
      double acc = 0.0;
      for (std::size_t o = 0; o < w.cols(); ++o) acc += gy[o] * wr[o];
      g.x(r, i) = acc;
      const double xi = x(r, i);
      auto gw = g.w.row(i);
      for (std::size_t o = 0; o < w.cols(); ++o) gw[o] += xi * gy[o];
    }
  }
  return g;
}

/// Numerically stable softmax of one vector.
inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.size());
  if (z.empty()) return p;
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp(z[i] - mx));
  for (double& v : p) v /= sum;
  return p;
}

struct XentResult {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Mean cross-entropy of softmax(logits) against integer labels.
inline XentResult softmax_xent(const Matrix& logits, std::span<const std::size_t> labels) {
  require(labels.size() == logits.rows(), ErrorCode::kShapeMismatch,
          "softmax_xent: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(logits.rows()) + " rows");
  const std::size_t classes = logits.cols();
  XentResult res{0.0, Matrix(logits.rows(), classes)};
  const double inv_batch = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    require(labels[r] < classes, ErrorCode::kInvalidArgument,
            "label " + std::to_string(labels[r]) + " out of range [0, " + std::to_string(classes) + ")");
    auto z = logits.row(r);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double log_sum = std::log(sum);
    res.loss += -(z[labels[r]] - mx - log_sum);
    auto g = res.grad_logits.row(r);
    for (std::size_t c = 0; c < classes; ++c) {
      g[c] = std::exp(z[c] - mx - log_sum) * inv_batch;
    }
    g[labels[r]] -= inv_batch;
  }
  res.loss *= inv_batch;
  return res;
}

}  // namespace mrdl::nk

#endif  // MRDL_NUMKERNEL_HPP_
