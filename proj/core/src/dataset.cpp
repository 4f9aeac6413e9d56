#include "crackseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "crackseg/errors.hpp"
#include "crackseg/image_io.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/rng.hpp"

namespace fs = std::filesystem;

namespace crackseg {

namespace {

// Maps stem -> path for every regular file in `dir`; anything that is not a
// .png is a format error.
std::map<std::string, std::string> scan_pngs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) {
      continue;
    }
    const fs::path& p = entry.path();
    require<DataError>(p.extension() == ".png", "non-PNG file in dataset: '", p.string(), "'");
    out[p.stem().string()] = p.string();
  }
  return out;
}

void sort_by_name(DatasetIndex& index) {
  std::sort(index.entries.begin(), index.entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.name < b.name; });
}

}  // namespace

DatasetIndex load_dataset(const std::string& root) {
  const fs::path images_dir = fs::path(root) / "images";
  const fs::path masks_dir = fs::path(root) / "masks";
  require<DataError>(fs::is_directory(images_dir), "missing images directory '",
                     images_dir.string(), "'");
  require<DataError>(fs::is_directory(masks_dir), "missing masks directory '",
                     masks_dir.string(), "'");

  const auto images = scan_pngs(images_dir);
  const auto masks = scan_pngs(masks_dir);

  std::vector<std::string> orphans;
  for (const auto& [stem, path] : images) {
    if (!masks.count(stem)) {
      orphans.push_back("image without mask: " + stem);
    }
  }
  for (const auto& [stem, path] : masks) {
    if (!images.count(stem)) {
      orphans.push_back("mask without image: " + stem);
    }
  }
  if (!orphans.empty()) {
    std::string joined;
    for (const auto& o : orphans) {
      joined += "\n  " + o;
    }
    raise<DataError>("unpaired files under '", root, "':", joined);
  }

  DatasetIndex index;
  for (const auto& [stem, path] : images) {
    index.entries.push_back({path, masks.at(stem), stem});
  }
  sort_by_name(index);
  return index;
}

std::pair<DatasetIndex, DatasetIndex> split(const DatasetIndex& index, double train_ratio,
                                            std::uint64_t seed) {
  require<ConfigError>(train_ratio > 0.0 && train_ratio < 1.0,
                       "train ratio must be in (0, 1), got ", train_ratio);
  std::vector<DatasetEntry> shuffled = index.entries;
  Rng rng(seed);
  rng.shuffle(shuffled);

  const std::int64_t n = static_cast<std::int64_t>(shuffled.size());
  const std::int64_t n_train =
      std::min<std::int64_t>(n, static_cast<std::int64_t>(
                                    std::ceil(train_ratio * static_cast<double>(n))));

  DatasetIndex train;
  DatasetIndex test;
  train.entries.assign(shuffled.begin(), shuffled.begin() + n_train);
  test.entries.assign(shuffled.begin() + n_train, shuffled.end());
  sort_by_name(train);
  sort_by_name(test);
  return {std::move(train), std::move(test)};
}

Sample load_sample(const DatasetEntry& entry) {
  Sample sample;
  sample.name = entry.name;
  sample.image = read_image_png(entry.image_path);
  const Mask mask = read_mask_png(entry.mask_path);
  require<DataError>(mask.h == sample.image.dim(1) && mask.w == sample.image.dim(2),
                     "image/mask size mismatch for '", entry.name, "': image ",
                     sample.image.dim(1), "x", sample.image.dim(2), ", mask ", mask.h, "x",
                     mask.w);
  sample.mask = Tensor<float>({1, mask.h, mask.w});
  for (std::int64_t i = 0; i < sample.mask.numel(); ++i) {
    sample.mask[i] = static_cast<float>(mask.data[static_cast<std::size_t>(i)]);
  }
  return sample;
}

void write_manifest(const std::string& path, const DatasetIndex& index) {
  std::ofstream out(path, std::ios::trunc);
  require<DataError>(out.good(), "cannot open manifest '", path, "' for writing");
  for (const auto& entry : index.entries) {
    out << entry.name << "\n";
  }
  require<DataError>(out.good(), "failed writing manifest '", path, "'");
}

DatasetIndex subset_from_manifest(const DatasetIndex& index, const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  require<DataError>(in.good(), "cannot open manifest '", manifest_path, "'");

  std::map<std::string, const DatasetEntry*> by_name;
  for (const auto& entry : index.entries) {
    by_name[entry.name] = &entry;
  }

  DatasetIndex subset;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    require<DataError>(by_name.count(line), "manifest '", manifest_path,
                       "' names unknown sample '", line, "'");
    require<DataError>(seen.insert(line).second, "manifest '", manifest_path,
                       "' repeats sample '", line, "'");
    subset.entries.push_back(*by_name.at(line));
  }
  sort_by_name(subset);
  return subset;
}

}  // namespace crackseg
