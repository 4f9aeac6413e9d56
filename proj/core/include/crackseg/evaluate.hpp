#pragma once

#include <cstdint>

#include "crackseg/dataset.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/model.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct EvalConfig {
  ToleranceConfig tolerance;
  float threshold = 0.5f;
  bool pooled = false;
};

/// Reflect-pads a 3xHxW image on the bottom/right up to the next multiple of
/// `multiple`; returns the input untouched when it already fits.
Tensor<float> pad_reflect_to_multiple(const Tensor<float>& image, std::int64_t multiple);

/// Runs one image through the network (eval mode, padding and cropping as
/// needed) and thresholds the probabilities into a mask of the input size.
Mask predict_mask(Model<float>& model, const Tensor<float>& image, float threshold = 0.5f);

/// Scores one decoded sample against its ground truth.
ImageMetrics evaluate_sample(Model<float>& model, const Sample& sample, const EvalConfig& config);

/// Scores every entry at native resolution and assembles the report
/// (per-image means unless config.pooled).
MetricsReport evaluate_dataset(Model<float>& model, const DatasetIndex& index,
                               const EvalConfig& config);

}  // namespace crackseg
