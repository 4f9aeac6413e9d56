#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

/// One image/mask pair on disk, matched by filename stem.
struct DatasetEntry {
  std::string image_path;
  std::string mask_path;
  std::string name;
  bool operator==(const DatasetEntry& other) const = default;
};

/// Ordered collection of pairs; always sorted by name so every downstream
/// shuffle or split is a pure function of the seed.
struct DatasetIndex {
  std::vector<DatasetEntry> entries;

  std::int64_t size() const { return static_cast<std::int64_t>(entries.size()); }
  bool empty() const { return entries.empty(); }
};

/// A decoded pair: image 3xHxW in [0,1], mask 1xHxW with values in {0,1}.
struct Sample {
  Tensor<float> image;
  Tensor<float> mask;
  std::string name;
};

/// Scans <root>/images and <root>/masks for *.png files and pairs them by
/// stem. Unpaired files raise a single error listing every orphan; non-PNG
/// files raise a format error naming the file.
DatasetIndex load_dataset(const std::string& root);

/// Deterministically shuffles under `seed` and partitions with
/// train = ceil(ratio * n). Both halves come back sorted by name.
std::pair<DatasetIndex, DatasetIndex> split(const DatasetIndex& index, double train_ratio,
                                            std::uint64_t seed);

/// Decodes one entry; image and mask spatial dims must agree.
Sample load_sample(const DatasetEntry& entry);

/// Writes one name per line.
void write_manifest(const std::string& path, const DatasetIndex& index);

/// Reads names (one per line, blanks skipped) and selects those entries from
/// `index`; unknown names raise.
DatasetIndex subset_from_manifest(const DatasetIndex& index, const std::string& manifest_path);

}  // namespace crackseg
