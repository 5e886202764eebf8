#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "mtk/error.hpp"

namespace mtk {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array. Parameters and images use float; gradients and
/// optimizer moments use double.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), T{0}) {
    validate_shape();
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    require(data_.size() == shape_size(shape_), "tensor data length does not match its shape");
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  void validate_shape() const {
    for (std::size_t d : shape_) require(d > 0, "tensor dimensions must be positive");
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

}  // namespace mtk

namespace mtk {

/// Image geometry, stored row-major as (row, column, channel).
struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t pixels() const noexcept { return height * width; }
  std::size_t size() const noexcept { return height * width * channels; }

  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

}  // namespace mtk
