#include "crackseg/batcher.hpp"

#include <algorithm>
#include <numeric>

#include "crackseg/errors.hpp"
#include "crackseg/rng.hpp"

namespace crackseg {

BatchStream::BatchStream(const DatasetIndex& index, const BatchStreamConfig& config)
    : index_(&index), config_(config) {
  require<ConfigError>(config.batch_size >= 1, "batch size must be >= 1, got ",
                       config.batch_size);
  order_.resize(index.entries.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (config_.mode == Mode::train) {
    Rng rng(Rng::mix(config_.seed, config_.epoch));
    rng.shuffle(order_);
  }
}

std::int64_t BatchStream::batches_total() const {
  const std::int64_t n = static_cast<std::int64_t>(order_.size());
  const std::int64_t b = config_.batch_size;
  return (n + b - 1) / b;
}

bool BatchStream::next(Tensor<float>& images, Tensor<float>& masks) {
  const std::int64_t n = static_cast<std::int64_t>(order_.size());
  if (cursor_ >= n) {
    return false;
  }
  const std::int64_t take = std::min<std::int64_t>(config_.batch_size, n - cursor_);
  const std::int64_t s = config_.size;
  images = Tensor<float>({take, 3, s, s});
  masks = Tensor<float>({take, 1, s, s});

  const std::uint64_t epoch_key = Rng::mix(config_.seed, config_.epoch);
  for (std::int64_t i = 0; i < take; ++i) {
    const std::int64_t position = cursor_ + i;
    const auto& entry = index_->entries[static_cast<std::size_t>(order_[position])];
    Sample sample = load_sample(entry);

    // Every slot in the epoch owns an independent stream, so prefetching or
    // re-batching can never change what a given position produces.
    Rng rng(Rng::mix(epoch_key, 1 + static_cast<std::uint64_t>(position)));
    sample = resize_crop(sample, config_.size, config_.mode, rng);
    if (config_.mode == Mode::train) {
      sample = augment(sample, config_.spec, rng);
    }

    std::copy(sample.image.data(), sample.image.data() + sample.image.numel(),
              images.data() + i * 3 * s * s);
    std::copy(sample.mask.data(), sample.mask.data() + sample.mask.numel(),
              masks.data() + i * s * s);
  }
  cursor_ += take;
  return true;
}

}  // namespace crackseg
