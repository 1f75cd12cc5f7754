#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gemini/common.hpp"

namespace gemini {

struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s) {
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," +
         std::to_string(s.width) + ")";
}

/// Dense channel-major (C, H, W) tensor. Vectors are (n, 1, 1).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(int channels, int height, int width, T fill = T{})
      : Tensor(Shape3{channels, height, width}, fill) {}
  Tensor(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static Tensor from_vector(std::vector<T> values) {
    const int n = static_cast<int>(values.size());
    return Tensor(Shape3{n, 1, 1}, std::move(values));
  }

  [[nodiscard]] const Shape3& shape() const { return shape_; }
  [[nodiscard]] int channels() const { return shape_.channels; }
  [[nodiscard]] int height() const { return shape_.height; }
  [[nodiscard]] int width() const { return shape_.width; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  T& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* channel(int c) { return data_.data() + static_cast<std::size_t>(c) * plane(); }
  const T* channel(int c) const { return data_.data() + static_cast<std::size_t>(c) * plane(); }

  std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }
  [[nodiscard]] const std::vector<T>& storage() const { return data_; }
  std::vector<T>& storage() { return data_; }

  /// Same data, reinterpreted as a flat vector.
  [[nodiscard]] Tensor flattened() const { return Tensor(Shape3{static_cast<int>(size()), 1, 1}, data_); }

  void reshape(Shape3 shape) {
    if (shape.size() != data_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = shape;
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  [[nodiscard]] std::size_t plane() const {
    return static_cast<std::size_t>(shape_.height) * static_cast<std::size_t>(shape_.width);
  }
  [[nodiscard]] std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape3 shape_{};
  std::vector<T> data_;
};

template <typename T>
T euclidean_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ShapeError("distance between vectors of size " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  T sum{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

template <typename T>
T euclidean_distance(const std::vector<T>& a, const std::vector<T>& b) {
  return euclidean_distance(std::span<const T>(a), std::span<const T>(b));
}

template <typename To, typename From>
std::vector<To> cast_vector(std::span<const From> v) {
  return std::vector<To>(v.begin(), v.end());
}

}  // namespace gemini
