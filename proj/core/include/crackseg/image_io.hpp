#pragma once

#include <string>

#include "crackseg/metrics.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Decodes a PNG to a 3xHxW float tensor in [0,1]. Grayscale and paletted
/// files are expanded to RGB; alpha is dropped.
Tensor<float> read_image_png(const std::string& path);

/// Decodes a PNG as 8-bit grayscale and thresholds it: pixels > 127 are
/// crack (1), the rest background (0).
Mask read_mask_png(const std::string& path);

/// Writes a binary mask as an 8-bit grayscale PNG with values {0, 255}.
void write_mask_png(const std::string& path, const Mask& mask);

/// Writes a 3xHxW [0,1] tensor as an 8-bit RGB PNG (values clamped).
void write_image_png(const std::string& path, const Tensor<float>& image);

}  // namespace crackseg
