#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crackseg/errors.hpp"

namespace crackseg {

enum class DType { f32, f64 };

template <typename S>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr DType value = DType::f32;
};
template <>
struct dtype_of<double> {
  static constexpr DType value = DType::f64;
};

/// Dense N-dimensional array with row-major contiguous storage. Value
/// semantics: copies copy the buffer, moves are cheap. The scalar type is
/// float for training and double for gradient checking.
template <typename S>
class Tensor {
 public:
  using scalar_type = S;
  static constexpr DType dtype = dtype_of<S>::value;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<S> data);

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::int64_t> shape, S value);
  static Tensor ones(std::vector<std::int64_t> shape) { return full(std::move(shape), S(1)); }
  static Tensor scalar(S value) { return Tensor({}, {value}); }

  bool defined() const { return !data_.empty(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& values() { return data_; }
  const std::vector<S>& values() const { return data_; }

  S& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Flat offset of (n, c, h, w) in an NCHW tensor.
  std::int64_t offset4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  S& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(offset4(n, c, h, w))];
  }
  const S& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(offset4(n, c, h, w))];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(S value);
  void add_(const Tensor& other);  // in-place elementwise add, shapes must match

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[i] = static_cast<T>(data_[i]);
    }
    return Tensor<T>(shape_, std::move(out));
  }

  std::string shape_str() const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<S> data_;
};

template <typename S>
std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

std::string shape_to_string(const std::vector<std::int64_t>& shape);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace crackseg
