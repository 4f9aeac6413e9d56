#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

/// Single-image binary mask, row-major, values 0 or 1.
struct Mask {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::int64_t h_, std::int64_t w_)
      : h(h_), w(w_), data(static_cast<std::size_t>(h_ * w_), 0) {}

  std::uint8_t at(std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>(y * w + x)];
  }
  void set(std::int64_t y, std::int64_t x, std::uint8_t v) {
    data[static_cast<std::size_t>(y * w + x)] = v;
  }
  std::int64_t positives() const;
  bool operator==(const Mask& other) const = default;
};

/// Spatial slack for matching: a prediction counts as correct within a
/// Chebyshev ball (square of side 2*radius+1) around any positive pixel.
struct ToleranceConfig {
  int radius = 2;
};

struct TolerantCounts {
  std::int64_t tp_pr = 0;  // prediction-side true positives
  std::int64_t fp = 0;
  std::int64_t tp_re = 0;  // ground-truth-side true positives
  std::int64_t fn = 0;
};

struct PixelScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Strictly-greater threshold: a pixel at exactly the threshold maps to 0.
/// Accepts a single image shaped HxW, 1xHxW, or 1x1xHxW.
template <typename S>
Mask binarize(const Tensor<S>& pred, S threshold = S(0.5));

/// Exact binary dilation by a (2*radius+1) square structuring element.
Mask dilate(const Mask& mask, int radius);

/// Counts with spatial tolerance: tp_pr/fp classify prediction positives
/// against the dilated ground truth; tp_re/fn classify ground-truth positives
/// against the dilated prediction.
TolerantCounts tolerant_counts(const Mask& pred, const Mask& gt, const ToleranceConfig& tol);

/// Precision from the prediction-side count, recall from the ground-truth
/// side. Degenerate denominators give 0, except when prediction and ground
/// truth are both empty, which scores 1 across the board.
PixelScores precision_recall_f1(const TolerantCounts& counts);

struct ImageMetrics {
  std::string image;
  TolerantCounts counts;
  PixelScores scores;
};

struct MetricsReport {
  std::vector<ImageMetrics> per_image;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_f1 = 0.0;
  bool pooled = false;

  std::string to_json() const;
};

/// Assembles the report: rows sorted by image name, means computed per image
/// (arithmetic means of the rows) or, when pooled, from summed counts.
MetricsReport make_report(std::vector<ImageMetrics> rows, bool pooled = false);

}  // namespace crackseg
