#pragma once

// Numerical kernels over BasicTensor. All functions are pure; rank-3 tensors
// are CHW.

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <type_traits>

#include "fgcam/tensor.hpp"

namespace fgcam {

using Pair = std::array<Index, 2>;

template <typename Scalar>
struct BasicPoolResult {
  BasicTensor<Scalar> values;
  // Flat input index (channel offset included) of each output cell's winner.
  std::vector<Index> argmax;
};

using PoolResult = BasicPoolResult<float>;

namespace detail {

inline Index pooled_extent(Index in, Index kernel, Index stride, Index pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename Scalar>
void require_rank(const BasicTensor<Scalar>& t, Index rank, const char* what) {
  if (t.rank() != rank) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + ": expected rank " +
                                        std::to_string(rank) + ", got " +
                                        shape_string(t.shape()));
  }
}

inline void check_window(Index h, Index w, Pair kernel, Pair stride, Pair pad,
                         const char* what) {
  if (stride[0] < 1 || stride[1] < 1) {
    fail(ErrorCode::kInvalidArgument, std::string(what) + ": stride must be >= 1");
  }
  if (pad[0] < 0 || pad[1] < 0) {
    fail(ErrorCode::kInvalidArgument, std::string(what) + ": padding must be >= 0");
  }
  if (kernel[0] < 1 || kernel[1] < 1 || kernel[0] > h + 2 * pad[0] ||
      kernel[1] > w + 2 * pad[1]) {
    fail(ErrorCode::kShapeMismatch,
         std::string(what) + ": kernel " + std::to_string(kernel[0]) + "x" +
             std::to_string(kernel[1]) + " does not fit input " +
             std::to_string(h) + "x" + std::to_string(w));
  }
}

// Unfolds input [C,H,W] into a [C*kH*kW, outH*outW] column matrix.
template <typename Scalar>
typename BasicTensor<Scalar>::RowMajorMatrix im2col(
    const BasicTensor<Scalar>& input, Pair kernel, Pair stride, Pair pad,
    Index out_h, Index out_w) {
  const Index c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  typename BasicTensor<Scalar>::RowMajorMatrix cols(c_in * kernel[0] * kernel[1],
                                                    out_h * out_w);
  for (Index c = 0; c < c_in; ++c) {
    for (Index ky = 0; ky < kernel[0]; ++ky) {
      for (Index kx = 0; kx < kernel[1]; ++kx) {
        const Index row = (c * kernel[0] + ky) * kernel[1] + kx;
        Scalar* dst = cols.row(row).data();
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride[0] - pad[0] + ky;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride[1] - pad[1] + kx;
            dst[oy * out_w + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                       ? input.at(c, iy, ix)
                                       : Scalar(0);
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-adds columns back into a [C,H,W] tensor.
template <typename Derived>
BasicTensor<typename Derived::Scalar> col2im(const Eigen::MatrixBase<Derived>& cols,
                                             const Shape& input_shape, Pair kernel,
                                             Pair stride, Pair pad, Index out_h,
                                             Index out_w) {
  using Scalar = typename Derived::Scalar;
  BasicTensor<Scalar> out(input_shape);
  const Index c_in = input_shape[0], h = input_shape[1], w = input_shape[2];
  for (Index c = 0; c < c_in; ++c) {
    for (Index ky = 0; ky < kernel[0]; ++ky) {
      for (Index kx = 0; kx < kernel[1]; ++kx) {
        const Index row = (c * kernel[0] + ky) * kernel[1] + kx;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride[0] - pad[0] + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride[1] - pad[1] + kx;
            if (ix < 0 || ix >= w) continue;
            out.at(c, iy, ix) += cols(row, oy * out_w + ox);
          }
        }
      }
    }
  }
  return out;
}

// Sums spanning more than this many float terms are accumulated in double.
inline constexpr Index kWideAccumulation = 4096;

template <typename Scalar, typename A, typename B>
auto product(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using Result = typename BasicTensor<Scalar>::RowMajorMatrix;
  if constexpr (std::is_same_v<Scalar, float>) {
    if (a.cols() > kWideAccumulation) {
      return Result((a.template cast<double>() * b.template cast<double>())
                        .template cast<float>());
    }
  }
  return Result(a * b);
}

}  // namespace detail

inline Index conv_output_extent(Index in, Index kernel, Index stride, Index pad) {
  return detail::pooled_extent(in, kernel, stride, pad);
}

/// Cross-correlation with zero padding. `bias` may be empty (no bias).
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input,
                           const BasicTensor<Scalar>& weights,
                           std::span<const Scalar> bias, Pair stride, Pair padding) {
  detail::require_rank(input, 3, "conv2d input");
  detail::require_rank(weights, 4, "conv2d weights");
  if (input.dim(0) != weights.dim(1)) {
    fail(ErrorCode::kShapeMismatch,
         "conv2d: input " + shape_string(input.shape()) +
             " has a different channel count than weights " +
             shape_string(weights.shape()));
  }
  const Index c_out = weights.dim(0);
  if (!bias.empty() && static_cast<Index>(bias.size()) != c_out) {
    fail(ErrorCode::kShapeMismatch, "conv2d: bias length " +
                                        std::to_string(bias.size()) +
                                        " != output channels " +
                                        std::to_string(c_out));
  }
  const Pair kernel{weights.dim(2), weights.dim(3)};
  detail::check_window(input.dim(1), input.dim(2), kernel, stride, padding, "conv2d");
  const Index out_h = conv_output_extent(input.dim(1), kernel[0], stride[0], padding[0]);
  const Index out_w = conv_output_extent(input.dim(2), kernel[1], stride[1], padding[1]);

  const auto cols = detail::im2col(input, kernel, stride, padding, out_h, out_w);
  const Index fan_in = weights.size() / c_out;
  BasicTensor<Scalar> out({c_out, out_h, out_w});
  out.matrix(c_out, out_h * out_w) =
      detail::product<Scalar>(weights.matrix(c_out, fan_in), cols);
  if (!bias.empty()) {
    auto m = out.matrix(c_out, out_h * out_w);
    for (Index c = 0; c < c_out; ++c) m.row(c).array() += bias[static_cast<std::size_t>(c)];
  }
  return out;
}

/// Vector-Jacobian product of conv2d with respect to its input
/// (transposed correlation).
template <typename Scalar>
BasicTensor<Scalar> conv2d_input_grad(const BasicTensor<Scalar>& grad_out,
                                      const BasicTensor<Scalar>& weights,
                                      const Shape& input_shape, Pair stride,
                                      Pair padding) {
  detail::require_rank(grad_out, 3, "conv2d_input_grad");
  const Index c_out = weights.dim(0);
  if (grad_out.dim(0) != c_out) {
    fail(ErrorCode::kShapeMismatch,
         "conv2d_input_grad: gradient " + shape_string(grad_out.shape()) +
             " does not match weights " + shape_string(weights.shape()));
  }
  const Pair kernel{weights.dim(2), weights.dim(3)};
  const Index out_h = grad_out.dim(1), out_w = grad_out.dim(2);
  const Index fan_in = weights.size() / c_out;
  const auto cols = detail::product<Scalar>(
      weights.matrix(c_out, fan_in).transpose(),
      grad_out.matrix(c_out, out_h * out_w));
  return detail::col2im(cols, input_shape, kernel, stride, padding, out_h, out_w);
}

/// Max pooling without padding. Ties go to the lowest flat index.
template <typename Scalar>
BasicPoolResult<Scalar> maxpool2d(const BasicTensor<Scalar>& input, Pair kernel,
                                  Pair stride) {
  detail::require_rank(input, 3, "maxpool2d input");
  const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
  detail::check_window(h, w, kernel, stride, {0, 0}, "maxpool2d");
  const Index out_h = detail::pooled_extent(h, kernel[0], stride[0], 0);
  const Index out_w = detail::pooled_extent(w, kernel[1], stride[1], 0);
  BasicPoolResult<Scalar> result{BasicTensor<Scalar>({c, out_h, out_w}), {}};
  result.argmax.resize(static_cast<std::size_t>(c * out_h * out_w));
  Index o = 0;
  for (Index ch = 0; ch < c; ++ch) {
    for (Index oy = 0; oy < out_h; ++oy) {
      for (Index ox = 0; ox < out_w; ++ox, ++o) {
        Index best = -1;
        Scalar best_value = Scalar(0);
        // Row-major scan with strict '>' keeps the lowest flat index on ties.
        for (Index ky = 0; ky < kernel[0]; ++ky) {
          for (Index kx = 0; kx < kernel[1]; ++kx) {
            const Index flat = (ch * h + oy * stride[0] + ky) * w + ox * stride[1] + kx;
            if (best < 0 || input[flat] > best_value) {
              best = flat;
              best_value = input[flat];
            }
          }
        }
        result.values[o] = best_value;
        result.argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return result;
}

/// Scatter-add of output cells onto their recorded argmax positions.
template <typename Scalar>
BasicTensor<Scalar> maxpool2d_scatter(const BasicTensor<Scalar>& grad_out,
                                      std::span<const Index> argmax,
                                      const Shape& input_shape) {
  if (static_cast<Index>(argmax.size()) != grad_out.size()) {
    fail(ErrorCode::kShapeMismatch,
         "maxpool scatter: " + std::to_string(argmax.size()) +
             " indices for output " + shape_string(grad_out.shape()));
  }
  BasicTensor<Scalar> out(input_shape);
  for (Index o = 0; o < grad_out.size(); ++o) {
    out[argmax[static_cast<std::size_t>(o)]] += grad_out[o];
  }
  return out;
}

/// Average pooling without padding.
template <typename Scalar>
BasicTensor<Scalar> avgpool2d(const BasicTensor<Scalar>& input, Pair kernel,
                              Pair stride) {
  detail::require_rank(input, 3, "avgpool2d input");
  const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
  detail::check_window(h, w, kernel, stride, {0, 0}, "avgpool2d");
  const Index out_h = detail::pooled_extent(h, kernel[0], stride[0], 0);
  const Index out_w = detail::pooled_extent(w, kernel[1], stride[1], 0);
  const double inv_area = 1.0 / static_cast<double>(kernel[0] * kernel[1]);
  BasicTensor<Scalar> out({c, out_h, out_w});
  for (Index ch = 0; ch < c; ++ch) {
    for (Index oy = 0; oy < out_h; ++oy) {
      for (Index ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        for (Index ky = 0; ky < kernel[0]; ++ky) {
          for (Index kx = 0; kx < kernel[1]; ++kx) {
            acc += input.at(ch, oy * stride[0] + ky, ox * stride[1] + kx);
          }
        }
        out.at(ch, oy, ox) = static_cast<Scalar>(acc * inv_area);
      }
    }
  }
  return out;
}

/// Transpose of avgpool2d: spreads each output cell uniformly over its window.
template <typename Scalar>
BasicTensor<Scalar> avgpool2d_spread(const BasicTensor<Scalar>& grad_out,
                                     const Shape& input_shape, Pair kernel,
                                     Pair stride) {
  const Index c = grad_out.dim(0), out_h = grad_out.dim(1), out_w = grad_out.dim(2);
  const Scalar inv_area = Scalar(1) / static_cast<Scalar>(kernel[0] * kernel[1]);
  BasicTensor<Scalar> out(input_shape);
  for (Index ch = 0; ch < c; ++ch) {
    for (Index oy = 0; oy < out_h; ++oy) {
      for (Index ox = 0; ox < out_w; ++ox) {
        const Scalar share = grad_out.at(ch, oy, ox) * inv_area;
        for (Index ky = 0; ky < kernel[0]; ++ky) {
          for (Index kx = 0; kx < kernel[1]; ++kx) {
            out.at(ch, oy * stride[0] + ky, ox * stride[1] + kx) += share;
          }
        }
      }
    }
  }
  return out;
}

/// out_j = sum_i W_ji x_i + b_j. The input is read as a flat vector.
template <typename Scalar>
BasicTensor<Scalar> linear(const BasicTensor<Scalar>& input,
                           const BasicTensor<Scalar>& weights,
                           std::span<const Scalar> bias) {
  detail::require_rank(weights, 2, "linear weights");
  const Index m = weights.dim(0), n = weights.dim(1);
  if (input.size() != n) {
    fail(ErrorCode::kShapeMismatch, "linear: input " + shape_string(input.shape()) +
                                        " does not match weights " +
                                        shape_string(weights.shape()));
  }
  if (!bias.empty() && static_cast<Index>(bias.size()) != m) {
    fail(ErrorCode::kShapeMismatch, "linear: bias length " +
                                        std::to_string(bias.size()) + " != " +
                                        std::to_string(m));
  }
  BasicTensor<Scalar> out({m});
  out.vec() = detail::product<Scalar>(weights.matrix(m, n), input.matrix(n, 1));
  if (!bias.empty()) {
    out.vec() += Eigen::Map<const typename BasicTensor<Scalar>::Vector>(bias.data(), m);
  }
  return out;
}

/// Vector-Jacobian product of linear with respect to its input.
template <typename Scalar>
BasicTensor<Scalar> linear_input_grad(const BasicTensor<Scalar>& grad_out,
                                      const BasicTensor<Scalar>& weights,
                                      const Shape& input_shape) {
  const Index m = weights.dim(0), n = weights.dim(1);
  BasicTensor<Scalar> out(input_shape);
  out.vec() = detail::product<Scalar>(weights.matrix(m, n).transpose(),
                                      grad_out.matrix(m, 1));
  return out;
}

/// Bilinear resize with half-pixel centres; source coordinates are clamped.
template <typename Scalar>
BasicTensor<Scalar> bilinear_resize(const BasicTensor<Scalar>& input, Index out_h,
                                    Index out_w) {
  detail::require_rank(input, 3, "bilinear_resize input");
  if (out_h < 1 || out_w < 1) {
    fail(ErrorCode::kInvalidArgument, "bilinear_resize: output size must be >= 1");
  }
  const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
  struct Tap {
    Index lo, hi;
    double frac;
  };
  auto taps = [](Index in, Index out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (Index d = 0; d < out; ++d) {
      double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const Index lo = static_cast<Index>(std::floor(src));
      const Index hi = std::min(lo + 1, in - 1);
      t[static_cast<std::size_t>(d)] = {lo, hi, src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);
  BasicTensor<Scalar> out({c, out_h, out_w});
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (Index x = 0; x < out_w; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const double top = (1.0 - b.frac) * input.at(ch, a.lo, b.lo) +
                           b.frac * input.at(ch, a.lo, b.hi);
        const double bottom = (1.0 - b.frac) * input.at(ch, a.hi, b.lo) +
                              b.frac * input.at(ch, a.hi, b.hi);
        out.at(ch, y, x) = static_cast<Scalar>((1.0 - a.frac) * top + a.frac * bottom);
      }
    }
  }
  return out;
}

/// Normalized 1-D Gaussian taps centred on the middle element.
inline std::vector<double> gaussian_kernel(Index ksize, double sigma) {
  if (ksize < 1 || ksize % 2 == 0) {
    fail(ErrorCode::kInvalidArgument,
         "gaussian kernel size must be odd, got " + std::to_string(ksize));
  }
  if (!(sigma > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "gaussian sigma must be positive");
  }
  std::vector<double> taps(static_cast<std::size_t>(ksize));
  const double half = static_cast<double>(ksize - 1) / 2.0;
  double total = 0.0;
  for (Index i = 0; i < ksize; ++i) {
    const double x = (static_cast<double>(i) - half) / sigma;
    taps[static_cast<std::size_t>(i)] = std::exp(-0.5 * x * x);
    total += taps[static_cast<std::size_t>(i)];
  }
  for (double& t : taps) t /= total;
  return taps;
}

/// Mirror index without repeating the edge sample (… 2 1 | 0 1 2 … n-1 | n-2 …),
/// folded as many times as needed for pads wider than the axis.
inline Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Separable Gaussian blur with reflect padding.
template <typename Scalar>
BasicTensor<Scalar> gaussian_blur(const BasicTensor<Scalar>& image, Index ksize,
                                  double sigma) {
  detail::require_rank(image, 3, "gaussian_blur input");
  const auto taps = gaussian_kernel(ksize, sigma);
  const Index half = ksize / 2;
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<double> rows(static_cast<std::size_t>(c * h * w));
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (Index k = 0; k < ksize; ++k) {
          acc += taps[static_cast<std::size_t>(k)] *
                 image.at(ch, y, reflect_index(x + k - half, w));
        }
        rows[static_cast<std::size_t>((ch * h + y) * w + x)] = acc;
      }
    }
  }
  BasicTensor<Scalar> out(image.shape());
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (Index k = 0; k < ksize; ++k) {
          acc += taps[static_cast<std::size_t>(k)] *
                 rows[static_cast<std::size_t>(
                     (ch * h + reflect_index(y + k - half, h)) * w + x)];
        }
        out.at(ch, y, x) = static_cast<Scalar>(acc);
      }
    }
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> relu(BasicTensor<Scalar> input) {
  for (Scalar& v : input.values()) v = v > Scalar(0) ? v : Scalar(0);
  return input;
}

/// Softmax over the last axis.
template <typename Scalar>
BasicTensor<Scalar> softmax(BasicTensor<Scalar> input) {
  const Index inner = input.dim(input.rank() - 1);
  const Index outer = input.size() / inner;
  for (Index o = 0; o < outer; ++o) {
    Scalar* row = input.data() + o * inner;
    const Scalar peak = *std::max_element(row, row + inner);
    double total = 0.0;
    for (Index i = 0; i < inner; ++i) total += std::exp(double(row[i]) - double(peak));
    for (Index i = 0; i < inner; ++i) {
      row[i] = static_cast<Scalar>(std::exp(double(row[i]) - double(peak)) / total);
    }
  }
  return input;
}

/// Maps values to [0,1]; a constant input maps to all zeros.
template <typename Scalar>
BasicTensor<Scalar> minmax_normalize(BasicTensor<Scalar> input) {
  const auto [lo, hi] = std::minmax_element(input.values().begin(), input.values().end());
  const Scalar low = *lo, high = *hi;
  if (!(high > low)) {
    std::fill(input.values().begin(), input.values().end(), Scalar(0));
    return input;
  }
  for (Scalar& v : input.values()) v = (v - low) / (high - low);
  return input;
}

enum class Elementwise { kRelu, kSoftmax, kMinmaxNormalize };

template <typename Scalar>
BasicTensor<Scalar> elementwise(Elementwise kind, BasicTensor<Scalar> input) {
  switch (kind) {
    case Elementwise::kRelu:
      return relu(std::move(input));
    case Elementwise::kSoftmax:
      return softmax(std::move(input));
    case Elementwise::kMinmaxNormalize:
      return minmax_normalize(std::move(input));
  }
  return input;
}

}  // namespace fgcam
