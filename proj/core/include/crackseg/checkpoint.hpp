#pragma once

#include <map>
#include <string>

#include "crackseg/tensor.hpp"

namespace crackseg {

using TensorMap = std::map<std::string, Tensor<float>>;

/// Binary tensor archive, bit-exact and platform-independent: magic bytes
/// "CRKSEG01", u32 little-endian tensor count, then per tensor: u16 LE name
/// length, UTF-8 name, u8 rank, rank x u32 LE dims, numel x float32 LE
/// row-major values. Entries are written in name order.
void write_checkpoint(const std::string& path, const TensorMap& tensors);

/// Reads an archive written by write_checkpoint. Rejects bad magic, duplicate
/// names, truncation, and trailing bytes.
TensorMap read_checkpoint(const std::string& path);

}  // namespace crackseg
