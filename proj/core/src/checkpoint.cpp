#include "crackseg/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "crackseg/errors.hpp"

namespace crackseg {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'K', 'S', 'E', 'G', '0', '1'};
constexpr std::size_t kMaxName = 65535;
constexpr std::size_t kMaxRank = 255;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const unsigned char* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const unsigned char* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n) {
    const unsigned char* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  const unsigned char* take(std::size_t n) {
    require<CheckpointError>(pos_ + n <= bytes_.size(), "truncated checkpoint file '", path_,
                             "'");
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }

  const std::string& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path, const TensorMap& tensors) {
  require<CheckpointError>(tensors.size() <= 0xffffffffu, "too many tensors for checkpoint");
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    require<CheckpointError>(!name.empty() && name.size() <= kMaxName,
                             "invalid tensor name length for '", name, "'");
    require<CheckpointError>(static_cast<std::size_t>(tensor.rank()) <= kMaxRank, "tensor '",
                             name, "' rank too large");
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(tensor.rank()));
    for (std::size_t d = 0; d < static_cast<std::size_t>(tensor.rank()); ++d) {
      require<CheckpointError>(tensor.dim(d) <= 0xffffffffll, "tensor '", name,
                               "' dimension too large");
      put_u32(out, static_cast<std::uint32_t>(tensor.dim(d)));
    }
    for (std::int64_t i = 0; i < tensor.numel(); ++i) {
      put_f32(out, tensor[i]);
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  require<CheckpointError>(file.good(), "cannot open '", path, "' for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  file.flush();
  require<CheckpointError>(file.good(), "failed writing checkpoint '", path, "'");
}

TensorMap read_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  require<CheckpointError>(file.good(), "cannot open checkpoint '", path, "'");
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  require<CheckpointError>(!file.bad(), "failed reading checkpoint '", path, "'");

  Reader r(bytes, path);
  const std::string magic = r.str(sizeof(kMagic));
  require<CheckpointError>(std::memcmp(magic.data(), kMagic, sizeof(kMagic)) == 0, "'", path,
                           "' is not a CRKSEG01 checkpoint");
  const std::uint32_t count = r.u32();
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    require<CheckpointError>(name_len > 0, "empty tensor name in '", path, "'");
    const std::string name = r.str(name_len);
    const std::uint8_t rank = r.u8();
    std::vector<std::int64_t> shape;
    shape.reserve(rank);
    std::int64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      require<CheckpointError>(dim > 0, "tensor '", name, "' in '", path,
                               "' has a zero dimension");
      shape.push_back(static_cast<std::int64_t>(dim));
      require<CheckpointError>(numel <= (std::int64_t{1} << 40) / dim, "tensor '", name,
                               "' in '", path, "' is implausibly large");
      numel *= dim;
    }
    std::vector<float> data(static_cast<std::size_t>(numel));
    for (std::int64_t j = 0; j < numel; ++j) {
      data[static_cast<std::size_t>(j)] = r.f32();
    }
    const bool inserted =
        out.emplace(name, Tensor<float>(std::move(shape), std::move(data))).second;
    require<CheckpointError>(inserted, "duplicate tensor '", name, "' in '", path, "'");
  }
  require<CheckpointError>(r.exhausted(), "trailing bytes after ", count, " tensors in '", path,
                           "'");
  return out;
}

}  // namespace crackseg
