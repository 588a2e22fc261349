#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tprune/error.hpp"

namespace tprune {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

// Dense row-major array. Axis order for feature maps is N,C,H,W.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
      fail(ErrorCode::kShape, "tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }
  BasicTensor(Shape shape, std::initializer_list<T> values) : BasicTensor(std::move(shape), std::vector<T>(values)) {}

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessor, N,C,H,W.
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) { return data_[offset(n, c, h, w)]; }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const { return data_[offset(n, c, h, w)]; }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  bool all_finite() const;

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (auto d : shape) {
      if (d <= 0) fail(ErrorCode::kShape, "tensor dimensions must be positive, got " + shape_str(shape));
    }
  }
  std::size_t offset(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w);
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Throws ErrorCode::kNumeric naming `what` if any element is NaN or infinite.
template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what);

}  // namespace tprune
