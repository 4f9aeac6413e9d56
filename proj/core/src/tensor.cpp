#include "crackseg/tensor.hpp"

#include <cmath>
#include <sstream>

namespace crackseg {

namespace {

std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    require<DimensionError>(d > 0, "tensor dimensions must be positive, got shape ",
                            shape_to_string(shape));
    n *= d;
  }
  return n;
}

}  // namespace

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      os << "x";
    }
    os << shape[i];
  }
  os << "]";
  return os.str();
}

template <typename S>
Tensor<S>::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_numel(shape_)), S(0)) {}

template <typename S>
Tensor<S>::Tensor(std::vector<std::int64_t> shape, std::vector<S> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require<DimensionError>(checked_numel(shape_) == static_cast<std::int64_t>(data_.size()),
                          "tensor data length ", data_.size(), " does not match shape ",
                          shape_to_string(shape_));
}

template <typename S>
Tensor<S> Tensor<S>::full(std::vector<std::int64_t> shape, S value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

template <typename S>
bool Tensor<S>::all_finite() const {
  for (const S v : data_) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

template <typename S>
void Tensor<S>::fill(S value) {
  for (S& v : data_) {
    v = value;
  }
}

template <typename S>
void Tensor<S>::add_(const Tensor<S>& other) {
  require<DimensionError>(same_shape(other), "add_: shape mismatch ", shape_str(), " vs ",
                          other.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) {
    data_[i] += other.data_[i];
  }
}

template <typename S>
std::string Tensor<S>::shape_str() const {
  return shape_to_string(shape_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace crackseg
