#pragma once

#include <cmath>

#include "hsipaws/tensor.hpp"

// Forward/backward passes for the layer set used by the encoder. Backward
// functions return freshly allocated gradients; callers accumulate them into
// parameter buffers. All arithmetic runs in the tensor's scalar type, which
// is double everywhere in this project.

namespace hsipaws {

namespace detail {

template <typename S>
typename Tensor<S>::MatrixMap slice_matrix(Tensor<S>& t, Index offset, Index rows, Index cols) {
  return typename Tensor<S>::MatrixMap(t.data() + offset, rows, cols);
}

template <typename S>
typename Tensor<S>::ConstMatrixMap slice_matrix(const Tensor<S>& t, Index offset, Index rows, Index cols) {
  return typename Tensor<S>::ConstMatrixMap(t.data() + offset, rows, cols);
}

// Gathers the zero-padded 3x3 spatial x k_b spectral neighbourhood of every
// output position into one row, so the convolution becomes a single GEMM.
template <typename S>
void conv3d_im2col(const Tensor<S>& input, Index n, Index kb, Index stride, Index spec_out,
                   typename Tensor<S>::MatrixType& cols) {
  const Index height = input.dim(3);
  const Index width = input.dim(4);
  for (Index bp = 0; bp < spec_out; ++bp) {
    for (Index i = 0; i < height; ++i) {
      for (Index j = 0; j < width; ++j) {
        S* row = cols.row((bp * height + i) * width + j).data();
        for (Index k = 0; k < kb; ++k) {
          const Index b = bp * stride + k;
          for (Index di = -1; di <= 1; ++di) {
            const Index ii = i + di;
            const bool row_ok = ii >= 0 && ii < height;
            for (Index dj = -1; dj <= 1; ++dj) {
              const Index jj = j + dj;
              *row++ = (row_ok && jj >= 0 && jj < width) ? input(n, Index(0), b, ii, jj) : S(0);
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

inline Index conv3d_spectral_out(Index bands, Index kernel_bands, Index stride) {
  if (kernel_bands > bands) throw ShapeError("conv3d: spectral kernel larger than input bands");
  if (stride <= 0) throw ConfigError("conv3d: spectral stride must be positive");
  return (bands - kernel_bands) / stride + 1;
}

// input [batch,1,B,p,p], kernels [c_out,1,k_b,3,3]; valid convolution along
// the spectral axis with the given stride, zero-padded 3x3 over space.
template <typename S>
Tensor<S> conv3d_forward(const Tensor<S>& input, const Tensor<S>& kernels, Index stride) {
  if (input.rank() != 5 || input.dim(1) != 1) throw ShapeError("conv3d: input must be [batch,1,B,h,w]");
  if (kernels.rank() != 5 || kernels.dim(1) != 1 || kernels.dim(3) != 3 || kernels.dim(4) != 3)
    throw ShapeError("conv3d: kernels must be [c_out,1,k_b,3,3]");
  const Index batch = input.dim(0);
  const Index bands = input.dim(2);
  const Index height = input.dim(3);
  const Index width = input.dim(4);
  const Index c_out = kernels.dim(0);
  const Index kb = kernels.dim(2);
  const Index spec_out = conv3d_spectral_out(bands, kb, stride);
  const Index plane = spec_out * height * width;

  Tensor<S> output({batch, c_out, spec_out, height, width});
  typename Tensor<S>::MatrixType cols(plane, kb * 9);
  const auto weights = detail::slice_matrix(kernels, 0, c_out, kb * 9);
  for (Index n = 0; n < batch; ++n) {
    detail::conv3d_im2col(input, n, kb, stride, spec_out, cols);
    auto out_n = detail::slice_matrix(output, n * c_out * plane, c_out, plane);
    out_n.noalias() = weights * cols.transpose();
  }
  return output;
}

template <typename S>
struct Conv3dGrads {
  Tensor<S> input;
  Tensor<S> kernels;
};

template <typename S>
Conv3dGrads<S> conv3d_backward(const Tensor<S>& input, const Tensor<S>& kernels, Index stride,
                               const Tensor<S>& upstream, bool need_input_grad = true) {
  const Index batch = input.dim(0);
  const Index bands = input.dim(2);
  const Index height = input.dim(3);
  const Index width = input.dim(4);
  const Index c_out = kernels.dim(0);
  const Index kb = kernels.dim(2);
  const Index spec_out = conv3d_spectral_out(bands, kb, stride);
  const Index plane = spec_out * height * width;
  if (upstream.rank() != 5 || upstream.dim(0) != batch || upstream.dim(1) != c_out ||
      upstream.dim(2) != spec_out || upstream.dim(3) != height || upstream.dim(4) != width)
    throw ShapeError("conv3d backward: upstream shape mismatch");

  Conv3dGrads<S> grads{Tensor<S>(input.shape()), Tensor<S>(kernels.shape())};
  typename Tensor<S>::MatrixType cols(plane, kb * 9);
  typename Tensor<S>::MatrixType dcols(plane, kb * 9);
  const auto weights = detail::slice_matrix(kernels, 0, c_out, kb * 9);
  auto dweights = detail::slice_matrix(grads.kernels, 0, c_out, kb * 9);
  for (Index n = 0; n < batch; ++n) {
    detail::conv3d_im2col(input, n, kb, stride, spec_out, cols);
    const auto up_n = detail::slice_matrix(upstream, n * c_out * plane, c_out, plane);
    dweights.noalias() += up_n * cols;
    if (!need_input_grad) continue;
    dcols.noalias() = up_n.transpose() * weights;
    // col2im: scatter the per-position gradients back onto the input grid.
    for (Index bp = 0; bp < spec_out; ++bp) {
      for (Index i = 0; i < height; ++i) {
        for (Index j = 0; j < width; ++j) {
          const S* row = dcols.row((bp * height + i) * width + j).data();
          for (Index k = 0; k < kb; ++k) {
            const Index b = bp * stride + k;
            for (Index di = -1; di <= 1; ++di) {
              const Index ii = i + di;
              const bool row_ok = ii >= 0 && ii < height;
              for (Index dj = -1; dj <= 1; ++dj) {
                const Index jj = j + dj;
                if (row_ok && jj >= 0 && jj < width) grads.input(n, Index(0), b, ii, jj) += *row;
                ++row;
              }
            }
          }
        }
      }
    }
  }
  return grads;
}

namespace detail {

// Per-channel zero-padded 3x3 convolution (the depthwise half).
template <typename S>
void depthwise3x3(const Tensor<S>& input, const Tensor<S>& depthwise, Tensor<S>& mid) {
  const Index batch = input.dim(0);
  const Index channels = input.dim(1);
  const Index height = input.dim(2);
  const Index width = input.dim(3);
  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      for (Index i = 0; i < height; ++i) {
        for (Index j = 0; j < width; ++j) {
          S acc = 0;
          for (Index di = -1; di <= 1; ++di) {
            const Index ii = i + di;
            if (ii < 0 || ii >= height) continue;
            for (Index dj = -1; dj <= 1; ++dj) {
              const Index jj = j + dj;
              if (jj < 0 || jj >= width) continue;
              acc += input(n, c, ii, jj) * depthwise(c, di + 1, dj + 1);
            }
          }
          mid(n, c, i, j) = acc;
        }
      }
    }
  }
}

}  // namespace detail

// input [batch,c,p,p], depthwise [c,3,3], pointwise [c_out,c]:
// per-channel 3x3 spatial convolution followed by 1x1 channel mixing.
template <typename S>
Tensor<S> dsconv2d_forward(const Tensor<S>& input, const Tensor<S>& depthwise,
                           const Tensor<S>& pointwise, Tensor<S>* mid_out = nullptr) {
  if (input.rank() != 4) throw ShapeError("dsconv2d: input must be [batch,c,h,w]");
  if (depthwise.rank() != 3 || depthwise.dim(1) != 3 || depthwise.dim(2) != 3)
    throw ShapeError("dsconv2d: depthwise must be [c,3,3]");
  if (pointwise.rank() != 2) throw ShapeError("dsconv2d: pointwise must be [c_out,c]");
  const Index batch = input.dim(0);
  const Index channels = input.dim(1);
  const Index height = input.dim(2);
  const Index width = input.dim(3);
  if (depthwise.dim(0) != channels || pointwise.dim(1) != channels)
    throw ShapeError("dsconv2d: channel mismatch");
  const Index c_out = pointwise.dim(0);
  const Index plane = height * width;

  Tensor<S> mid({batch, channels, height, width});
  detail::depthwise3x3(input, depthwise, mid);

  Tensor<S> output({batch, c_out, height, width});
  const auto pw = pointwise.matrix();
  for (Index n = 0; n < batch; ++n) {
    const auto mid_n = detail::slice_matrix(mid, n * channels * plane, channels, plane);
    auto out_n = detail::slice_matrix(output, n * c_out * plane, c_out, plane);
    out_n.noalias() = pw * mid_n;
  }
  if (mid_out) *mid_out = std::move(mid);
  return output;
}

template <typename S>
struct DsConv2dGrads {
  Tensor<S> input;
  Tensor<S> depthwise;
  Tensor<S> pointwise;
};

template <typename S>
DsConv2dGrads<S> dsconv2d_backward(const Tensor<S>& input, const Tensor<S>& depthwise,
                                   const Tensor<S>& pointwise, const Tensor<S>& upstream,
                                   const Tensor<S>* mid_saved = nullptr) {
  const Index batch = input.dim(0);
  const Index channels = input.dim(1);
  const Index height = input.dim(2);
  const Index width = input.dim(3);
  const Index c_out = pointwise.dim(0);
  const Index plane = height * width;
  if (upstream.rank() != 4 || upstream.dim(0) != batch || upstream.dim(1) != c_out ||
      upstream.dim(2) != height || upstream.dim(3) != width)
    throw ShapeError("dsconv2d backward: upstream shape mismatch");

  Tensor<S> mid;
  if (!mid_saved) {
    mid = Tensor<S>({batch, channels, height, width});
    detail::depthwise3x3(input, depthwise, mid);
    mid_saved = &mid;
  }

  DsConv2dGrads<S> grads{Tensor<S>(input.shape()), Tensor<S>(depthwise.shape()),
                         Tensor<S>(pointwise.shape())};
  Tensor<S> dmid({batch, channels, height, width});
  const auto pw = pointwise.matrix();
  auto dpw = grads.pointwise.matrix();
  for (Index n = 0; n < batch; ++n) {
    const auto up_n = detail::slice_matrix(upstream, n * c_out * plane, c_out, plane);
    const auto mid_n = detail::slice_matrix(*mid_saved, n * channels * plane, channels, plane);
    auto dmid_n = detail::slice_matrix(dmid, n * channels * plane, channels, plane);
    dpw.noalias() += up_n * mid_n.transpose();
    dmid_n.noalias() = pw.transpose() * up_n;
  }

  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      for (Index i = 0; i < height; ++i) {
        for (Index j = 0; j < width; ++j) {
          const S g = dmid(n, c, i, j);
          if (g == S(0)) continue;
          for (Index di = -1; di <= 1; ++di) {
            const Index ii = i + di;
            if (ii < 0 || ii >= height) continue;
            for (Index dj = -1; dj <= 1; ++dj) {
              const Index jj = j + dj;
              if (jj < 0 || jj >= width) continue;
              grads.depthwise(c, di + 1, dj + 1) += g * input(n, c, ii, jj);
              grads.input(n, c, ii, jj) += g * depthwise(c, di + 1, dj + 1);
            }
          }
        }
      }
    }
  }
  return grads;
}

// input [batch,m], weight [n,m], bias [n] -> [batch,n]
template <typename S>
Tensor<S> dense_forward(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
    throw ShapeError("dense: expected input [batch,m], weight [n,m], bias [n]");
  if (weight.dim(1) != input.dim(1) || bias.dim(0) != weight.dim(0))
    throw ShapeError("dense: shape mismatch");
  Tensor<S> output({input.dim(0), weight.dim(0)});
  output.matrix().noalias() = input.matrix() * weight.matrix().transpose();
  output.matrix().rowwise() += bias.vector().transpose();
  return output;
}

template <typename S>
struct DenseGrads {
  Tensor<S> input;
  Tensor<S> weight;
  Tensor<S> bias;
};

template <typename S>
DenseGrads<S> dense_backward(const Tensor<S>& input, const Tensor<S>& weight,
                             const Tensor<S>& upstream) {
  if (upstream.dim(0) != input.dim(0) || upstream.dim(1) != weight.dim(0))
    throw ShapeError("dense backward: upstream shape mismatch");
  DenseGrads<S> grads{Tensor<S>(input.shape()), Tensor<S>(weight.shape()),
                      Tensor<S>({weight.dim(0)})};
  grads.input.matrix().noalias() = upstream.matrix() * weight.matrix();
  grads.weight.matrix().noalias() = upstream.matrix().transpose() * input.matrix();
  grads.bias.vector() = upstream.matrix().colwise().sum().transpose();
  return grads;
}

template <typename S>
Tensor<S> relu_forward(const Tensor<S>& input) {
  Tensor<S> out(input.shape());
  out.storage() = input.storage().max(S(0));
  return out;
}

// Subgradient at zero is zero.
template <typename S>
Tensor<S> relu_backward(const Tensor<S>& input, const Tensor<S>& upstream) {
  if (!input.same_shape(upstream)) throw ShapeError("relu backward: shape mismatch");
  Tensor<S> out(input.shape());
  out.storage() = (input.storage() > S(0)).select(upstream.storage(), S(0));
  return out;
}

// [batch,c,h,w] -> [batch,c], mean over the spatial axes.
template <typename S>
Tensor<S> global_avg_pool_forward(const Tensor<S>& input) {
  if (input.rank() != 4) throw ShapeError("global_avg_pool: input must be [batch,c,h,w]");
  const Index batch = input.dim(0);
  const Index channels = input.dim(1);
  const Index plane = input.dim(2) * input.dim(3);
  Tensor<S> out({batch, channels});
  for (Index n = 0; n < batch; ++n) {
    const auto in_n = detail::slice_matrix(input, n * channels * plane, channels, plane);
    out.matrix().row(n) = in_n.rowwise().mean().transpose();
  }
  return out;
}

template <typename S>
Tensor<S> global_avg_pool_backward(const Tensor<S>& input, const Tensor<S>& upstream) {
  const Index batch = input.dim(0);
  const Index channels = input.dim(1);
  const Index plane = input.dim(2) * input.dim(3);
  if (upstream.rank() != 2 || upstream.dim(0) != batch || upstream.dim(1) != channels)
    throw ShapeError("global_avg_pool backward: upstream shape mismatch");
  Tensor<S> grad(input.shape());
  for (Index n = 0; n < batch; ++n) {
    auto g_n = detail::slice_matrix(grad, n * channels * plane, channels, plane);
    g_n.colwise() = upstream.matrix().row(n).transpose() / S(plane);
  }
  return grad;
}

// Row-wise softmax with temperature: y_i = exp(x_i / tau) / sum_j exp(x_j / tau).
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& input, S tau) {
  if (tau <= S(0)) throw ConfigError("softmax temperature must be positive");
  if (input.rank() != 2) throw ShapeError("softmax_rows: input must be rank-2");
  Tensor<S> out(input.shape());
  const auto x = input.matrix();
  auto y = out.matrix();
  for (Index r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    y.row(r) = ((x.row(r).array() - m) / tau).exp();
    y.row(r) /= y.row(r).sum();
  }
  return out;
}

template <typename S>
Tensor<S> softmax_rows_backward(const Tensor<S>& output, const Tensor<S>& upstream, S tau) {
  if (!output.same_shape(upstream)) throw ShapeError("softmax backward: shape mismatch");
  Tensor<S> grad(output.shape());
  const auto y = output.matrix();
  const auto g = upstream.matrix();
  auto d = grad.matrix();
  for (Index r = 0; r < y.rows(); ++r) {
    const S dot = y.row(r).dot(g.row(r));
    d.row(r) = (y.row(r).array() * (g.row(r).array() - dot)) / tau;
  }
  return grad;
}

inline constexpr double kZeroNormGuard = 1e-12;

// Scales every row to unit Euclidean norm; near-zero rows are rejected.
template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& input) {
  if (input.rank() != 2) throw ShapeError("l2_normalize_rows: input must be rank-2");
  Tensor<S> out(input.shape());
  const auto x = input.matrix();
  auto y = out.matrix();
  for (Index r = 0; r < x.rows(); ++r) {
    const S norm = x.row(r).norm();
    if (norm < S(kZeroNormGuard))
      throw NumericError("l2_normalize_rows: row " + std::to_string(r) + " has near-zero norm");
    y.row(r) = x.row(r) / norm;
  }
  return out;
}

template <typename S>
Tensor<S> l2_normalize_rows_backward(const Tensor<S>& input, const Tensor<S>& upstream) {
  if (!input.same_shape(upstream)) throw ShapeError("l2_normalize backward: shape mismatch");
  Tensor<S> grad(input.shape());
  const auto x = input.matrix();
  const auto g = upstream.matrix();
  auto d = grad.matrix();
  for (Index r = 0; r < x.rows(); ++r) {
    const S norm = x.row(r).norm();
    if (norm < S(kZeroNormGuard))
      throw NumericError("l2_normalize_rows: row " + std::to_string(r) + " has near-zero norm");
    const auto unit = x.row(r) / norm;
    d.row(r) = (g.row(r) - unit * unit.dot(g.row(r))) / norm;
  }
  return grad;
}

}  // namespace hsipaws
