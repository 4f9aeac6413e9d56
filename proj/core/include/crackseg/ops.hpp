#pragma once

#include <optional>

#include "crackseg/tape.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Tape-recorded operations. Every op validates shapes, computes the forward
/// value, and registers a backward closure that routes gradients to its
/// inputs. Layout is NCHW throughout; convolution uses zero padding.

/// 2D convolution. input N*C*H*W, weight O*C*Kh*Kw, bias [O] (optional).
/// Output spatial dims follow floor((H + 2p - K)/stride) + 1.
template <typename S>
Var<S> conv2d(Var<S> input, Var<S> weight, std::optional<Var<S>> bias, int stride, int padding);

/// 2x2 stride-2 transposed convolution, the exact adjoint of
/// conv2d(kernel 2, stride 2, pad 0) with respect to its input.
/// input N*I*H*W, weight I*O*2*2, bias [O] (optional) -> N*O*2H*2W.
template <typename S>
Var<S> conv_transpose2d(Var<S> input, Var<S> weight, std::optional<Var<S>> bias);

/// Batch normalization over N,H,W per channel. Train mode normalizes by
/// batch statistics (biased variance) and, when update_running_stats is set,
/// folds them into the running buffers with the given momentum; eval mode
/// normalizes by the running buffers. Both apply the gamma/beta affine.
template <typename S>
Var<S> batch_norm(Var<S> input, Var<S> gamma, Var<S> beta, Tensor<S>& running_mean,
                  Tensor<S>& running_var, bool training, S momentum, S eps,
                  bool update_running_stats = true);

template <typename S>
Var<S> relu(Var<S> input);

template <typename S>
Var<S> sigmoid(Var<S> input);

/// Max pooling; gradient routes to the window maximum only, ties broken by
/// the first element in row-major window order. Padded cells never win.
template <typename S>
Var<S> max_pool2d(Var<S> input, int kernel, int stride, int padding);

/// N*C*H*W -> N*C*1*1 spatial mean.
template <typename S>
Var<S> global_avg_pool(Var<S> input);

/// input N*C, weight D*C, bias [D] (optional) -> N*D.
template <typename S>
Var<S> fully_connected(Var<S> input, Var<S> weight, std::optional<Var<S>> bias);

/// Concatenation along the channel axis; N, H, W must match.
template <typename S>
Var<S> concat_channels(Var<S> a, Var<S> b);

/// Elementwise sum of identically shaped tensors.
template <typename S>
Var<S> add(Var<S> a, Var<S> b);

/// Elementwise product. b may broadcast against a N*C*H*W as N*C*1*1
/// (channel scale) or N*1*H*W (spatial scale); the gradient w.r.t. b sums
/// over the broadcast axes.
template <typename S>
Var<S> mul(Var<S> a, Var<S> b);

/// scale * x + shift, elementwise.
template <typename S>
Var<S> affine(Var<S> x, S scale, S shift);

/// Elementwise quotient of identically shaped tensors.
template <typename S>
Var<S> divide(Var<S> a, Var<S> b);

/// Sum of all elements -> scalar.
template <typename S>
Var<S> sum_all(Var<S> x);

/// Per-sample sum over all non-batch axes: N*... -> [N].
template <typename S>
Var<S> sum_per_sample(Var<S> x);

/// Mean of all elements -> scalar.
template <typename S>
Var<S> mean_all(Var<S> x);

}  // namespace crackseg
