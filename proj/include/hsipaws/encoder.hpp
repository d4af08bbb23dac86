#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hsipaws/layers.hpp"
#include "hsipaws/rng.hpp"
#include "hsipaws/tensor.hpp"

namespace hsipaws {

// Fully convolutional encoder: one spectral 3D convolution, a channel fold
// that merges the spectral axis into channels, three depthwise separable
// convolutions, and a global average pool down to the embedding.
struct EncoderConfig {
  int patch_size = 9;
  int bands = 0;
  int spectral_kernel = 7;
  int spectral_stride = 2;
  int conv3d_channels = 8;
  std::vector<int> ds_widths = {64, 64, 64};
  int embedding_dim = 64;

  void validate() const {
    if (patch_size <= 0) throw ConfigError("encoder: patch_size must be positive");
    if (bands <= 0) throw ConfigError("encoder: bands must be positive");
    if (spectral_kernel <= 0 || spectral_kernel > bands)
      throw ConfigError("encoder: spectral_kernel must be in [1, bands]");
    if (spectral_stride <= 0) throw ConfigError("encoder: spectral_stride must be positive");
    if (conv3d_channels <= 0) throw ConfigError("encoder: conv3d_channels must be positive");
    if (ds_widths.size() != 3) throw ConfigError("encoder: ds_widths must have exactly 3 entries");
    for (int w : ds_widths)
      if (w <= 0) throw ConfigError("encoder: ds widths must be positive");
    if (embedding_dim <= 0) throw ConfigError("encoder: embedding_dim must be positive");
    if (ds_widths.back() != embedding_dim)
      throw ConfigError("encoder: last ds width must equal embedding_dim");
  }

  Index spectral_out() const {
    return conv3d_spectral_out(bands, spectral_kernel, spectral_stride);
  }
  Index folded_channels() const { return Index(conv3d_channels) * spectral_out(); }
};

namespace detail {

template <typename S>
Tensor<S> fan_in_uniform(Shape shape, Index fan_in, Rng& rng) {
  const S limit = static_cast<S>(std::sqrt(3.0 / static_cast<double>(fan_in)));
  return Tensor<S>::uniform(std::move(shape), rng, -limit, limit);
}

}  // namespace detail

// Deterministic fan-in-scaled uniform initialization; the draw order is fixed
// so the same seed always yields the same ParamStore.
template <typename S>
ParamStore<S> build_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore<S> params;
  const Index kb = cfg.spectral_kernel;
  params.add("conv3d.kernels",
             detail::fan_in_uniform<S>({cfg.conv3d_channels, 1, kb, 3, 3}, kb * 9, rng));
  Index in_ch = cfg.folded_channels();
  for (int layer = 0; layer < 3; ++layer) {
    const std::string prefix = "ds" + std::to_string(layer + 1);
    const Index out_ch = cfg.ds_widths[static_cast<std::size_t>(layer)];
    params.add(prefix + ".depthwise", detail::fan_in_uniform<S>({in_ch, 3, 3}, 9, rng));
    params.add(prefix + ".pointwise", detail::fan_in_uniform<S>({out_ch, in_ch}, in_ch, rng));
    in_ch = out_ch;
  }
  return params;
}

// Intermediates saved by the forward pass for the analytic backward pass.
template <typename S>
struct EncodeTrace {
  Tensor<S> input5;                     // [n,1,B,p,p]
  Tensor<S> conv_out;                   // pre-activation conv3d output
  Tensor<S> folded;                     // post-ReLU, spectral axis folded into channels
  std::array<Tensor<S>, 3> ds_mid;      // depthwise intermediates
  std::array<Tensor<S>, 3> ds_out;      // pre-activation dsconv outputs
  std::array<Tensor<S>, 3> ds_relu;     // post-activation dsconv outputs
};

// [n,p,p,B] patches -> [n,d] embeddings. Pass a trace to enable encode_backward.
template <typename S>
Tensor<S> encode(const EncoderConfig& cfg, const ParamStore<S>& params, const Tensor<S>& batch,
                 EncodeTrace<S>* trace = nullptr) {
  cfg.validate();
  const Index p = cfg.patch_size;
  const Index bands = cfg.bands;
  if (batch.rank() != 4 || batch.dim(1) != p || batch.dim(2) != p || batch.dim(3) != bands)
    throw ShapeError("encode: batch must be [n," + std::to_string(p) + "," + std::to_string(p) +
                     "," + std::to_string(bands) + "], got " + shape_to_string(batch.shape()));
  const Index n = batch.dim(0);

  Tensor<S> x5({n, 1, bands, p, p});
  for (Index s = 0; s < n; ++s)
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < p; ++j)
        for (Index b = 0; b < bands; ++b) x5(s, Index(0), b, i, j) = batch(s, i, j, b);

  Tensor<S> conv_out = conv3d_forward(x5, params.value("conv3d.kernels"), cfg.spectral_stride);
  Tensor<S> folded = relu_forward(conv_out);
  folded.reshape({n, cfg.folded_channels(), p, p});

  std::array<Tensor<S>, 3> ds_mid, ds_out, ds_relu;
  const Tensor<S>* current = &folded;
  for (int layer = 0; layer < 3; ++layer) {
    const std::string prefix = "ds" + std::to_string(layer + 1);
    const std::size_t l = static_cast<std::size_t>(layer);
    ds_out[l] = dsconv2d_forward(*current, params.value(prefix + ".depthwise"),
                                 params.value(prefix + ".pointwise"), trace ? &ds_mid[l] : nullptr);
    ds_relu[l] = relu_forward(ds_out[l]);
    current = &ds_relu[l];
  }

  Tensor<S> embedding = global_avg_pool_forward(ds_relu[2]);
  if (!embedding.all_finite()) throw NumericError("encode: non-finite embedding");

  if (trace) {
    trace->input5 = std::move(x5);
    trace->conv_out = std::move(conv_out);
    trace->folded = std::move(folded);
    trace->ds_mid = std::move(ds_mid);
    trace->ds_out = std::move(ds_out);
    trace->ds_relu = std::move(ds_relu);
  }
  return embedding;
}

// Accumulates parameter gradients for upstream [n,d] into params.grad.
template <typename S>
void encode_backward(const EncoderConfig& cfg, ParamStore<S>& params, const EncodeTrace<S>& trace,
                     const Tensor<S>& upstream) {
  Tensor<S> d_relu = global_avg_pool_backward(trace.ds_relu[2], upstream);
  for (int layer = 2; layer >= 0; --layer) {
    const std::string prefix = "ds" + std::to_string(layer + 1);
    const std::size_t l = static_cast<std::size_t>(layer);
    const Tensor<S>& layer_input = (layer == 0) ? trace.folded : trace.ds_relu[l - 1];
    Tensor<S> d_out = relu_backward(trace.ds_out[l], d_relu);
    DsConv2dGrads<S> g =
        dsconv2d_backward(layer_input, params.value(prefix + ".depthwise"),
                          params.value(prefix + ".pointwise"), d_out, &trace.ds_mid[l]);
    params.grad(prefix + ".depthwise").storage() += g.depthwise.storage();
    params.grad(prefix + ".pointwise").storage() += g.pointwise.storage();
    d_relu = std::move(g.input);
  }
  d_relu.reshape(trace.conv_out.shape());
  Tensor<S> d_conv = relu_backward(trace.conv_out, d_relu);
  Conv3dGrads<S> g = conv3d_backward(trace.input5, params.value("conv3d.kernels"),
                                     cfg.spectral_stride, d_conv, /*need_input_grad=*/false);
  params.grad("conv3d.kernels").storage() += g.kernels.storage();
}

}  // namespace hsipaws
