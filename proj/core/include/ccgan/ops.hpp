#pragma once

#include <span>

#include "ccgan/tape.hpp"
#include "ccgan/tensor.hpp"

// Differentiable primitives. Each op records itself on the thread's current
// tape (see TapeScope) when at least one input requires a gradient, and
// throws NumericError if it produces a non-finite value.
namespace ccgan {

/// 2-D cross-correlation with zero padding.
/// input [N,Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout] (may be undefined).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t pad = 0);

/// Adjoint of conv2d, used for learned upsampling.
/// input [N,Cin,H,W], kernel [Cin,Cout,kh,kw], bias [Cout].
/// Output extent: (H-1)*stride - 2*pad + kh + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad, std::size_t output_padding = 0);

/// Gradient at the kink (x == 0) takes the negative-side slope.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// Per-sample, per-channel normalisation over H x W (no affine part).
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5));

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);

/// Scalar reductions, accumulated in index order.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// mean |a - b| over all elements.
template <typename T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b);

/// Non-overlapping k x k average pooling; H and W must be divisible by k.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k);

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);
/// Bilinear resampling with half-pixel centres (align_corners = false).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Mean softmax cross-entropy of logits [N,K] against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// [N,Ca,H,W] ++ [N,Cb,H,W] -> [N,Ca+Cb,H,W].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Tiles each condition vector z[n] ([N,d]) into d constant H x W maps.
template <typename T>
Tensor<T> replicate_condition(const Tensor<T>& z, std::size_t h, std::size_t w);

/// [N,C,H,W] -> [N,C] mean over each map.
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Dense layer: x [N,K], weight [M,K], bias [M] -> [N,M].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// log(clamp(x, lo, hi)); zero gradient where the clamp is active.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, T lo, T hi);
/// log(1 - clamp(x, lo, hi)).
template <typename T>
Tensor<T> log1m_clamped(const Tensor<T>& x, T lo, T hi);

}  // namespace ccgan
