#pragma once

#include <cstdint>

#include "crackseg/common.hpp"
#include "crackseg/dataset.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Stochastic augmentation policy: rotation is always drawn from [0, 360)
/// degrees; flips are independent coin tosses; brightness and contrast
/// offsets are drawn from [-lighting_delta, +lighting_delta].
struct AugmentSpec {
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  double lighting_delta = 0.05;
};

/// Border reflection without repeating the edge pixel (period 2n-2), used
/// for out-of-bounds samples under rotation and padding.
std::int64_t reflect_index(std::int64_t i, std::int64_t n);

/// Rotates image and mask about the center by `degrees` clockwise. Exact
/// multiples of 90 use pure index permutations (bitwise-lossless; 90/270
/// require a square frame); anything else samples bilinearly (image) and
/// nearest (mask) with reflected borders. The mask stays binary.
Sample rotate_sample(const Sample& sample, double degrees);

/// Mirrors image and mask along the requested axes.
Sample flip_sample(const Sample& sample, bool horizontal, bool vertical);

/// Image-only photometric jitter: scales contrast about mid-gray and shifts
/// brightness, then clamps to [0,1]: v -> (v - 0.5) * (1 + contrast) + 0.5 +
/// brightness.
Tensor<float> apply_lighting(const Tensor<float>& image, double brightness, double contrast);

/// Full stochastic policy: rotate, flip, jitter, drawing in that exact order
/// from `rng` (rotation degrees, hflip, vflip, brightness, contrast).
Sample augment(const Sample& sample, const AugmentSpec& spec, Rng& rng);

/// Scales the shorter side to `target` (bilinear, half-pixel centers), then
/// cuts a target x target window: random position in train mode, centered in
/// eval. The mask goes through the same geometry and is re-binarized at 0.5.
Sample resize_crop(const Sample& sample, int target, Mode mode, Rng& rng);

}  // namespace crackseg
