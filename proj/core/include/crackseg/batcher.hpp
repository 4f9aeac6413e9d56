#pragma once

#include <cstdint>

#include "crackseg/augment.hpp"
#include "crackseg/common.hpp"
#include "crackseg/dataset.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// One epoch of batches over a dataset. Train mode shuffles the order under
/// (seed, epoch) and applies resize_crop + augment per sample; eval mode
/// walks the index in order with deterministic center crops only. Everything
/// is a pure function of (index, config), so two identically configured
/// streams emit bitwise-identical tensors.
struct BatchStreamConfig {
  int batch_size = 4;
  int size = 320;
  Mode mode = Mode::train;
  AugmentSpec spec;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
};

class BatchStream {
 public:
  BatchStream(const DatasetIndex& index, const BatchStreamConfig& config);

  /// Fills the next batch (images Nx3xSxS, masks Nx1xSxS; the final batch may
  /// be short). Returns false once the epoch is exhausted.
  bool next(Tensor<float>& images, Tensor<float>& masks);

  std::int64_t batches_total() const;
  void reset() { cursor_ = 0; }

 private:
  const DatasetIndex* index_;
  BatchStreamConfig config_;
  std::vector<std::int64_t> order_;
  std::int64_t cursor_ = 0;
};

}  // namespace crackseg
