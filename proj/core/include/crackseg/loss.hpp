#pragma once

#include "crackseg/tape.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Keeps the per-sample ratio defined when prediction and target are both
/// empty; applied to the denominator only, so the empty-empty loss is 1.
inline constexpr double kDiceEps = 1e-7;

/// Mean dice loss over the batch, built from tape ops so gradients flow to
/// pred: (1/N) sum_n [1 - 2*|pred*target| / (|pred| + |target| + eps)], where
/// |.| sums all elements of one sample.
template <typename S>
Var<S> dice_loss(Var<S> pred, const Tensor<S>& target);

}  // namespace crackseg
