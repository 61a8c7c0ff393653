#pragma once

#include <cassert>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "asfp/errors.hpp"

namespace asfp {

std::string shape_string(std::span<const int> shape);

// Dense row-major tensor over float or double. Image batches use the
// [N, C, H, W] layout with the channel plane contiguous in memory.
template <typename T>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(checked_numel(shape_)), T{});
  }

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
      throw shape_error("tensor: shape " + shape_string(shape_) + " needs " +
                        std::to_string(checked_numel(shape_)) + " elements, got " +
                        std::to_string(data_.size()));
    }
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::int64_t i) {
    assert(i >= 0 && i < numel());
    return data_[static_cast<std::size_t>(i)];
  }
  const T& operator[](std::int64_t i) const {
    assert(i >= 0 && i < numel());
    return data_[static_cast<std::size_t>(i)];
  }

  T& operator()(int a) { return data_[static_cast<std::size_t>(offset({a}))]; }
  T& operator()(int a, int b) { return data_[static_cast<std::size_t>(offset({a, b}))]; }
  T& operator()(int a, int b, int c) { return data_[static_cast<std::size_t>(offset({a, b, c}))]; }
  T& operator()(int a, int b, int c, int d) {
    return data_[static_cast<std::size_t>(offset({a, b, c, d}))];
  }
  const T& operator()(int a) const { return data_[static_cast<std::size_t>(offset({a}))]; }
  const T& operator()(int a, int b) const {
    return data_[static_cast<std::size_t>(offset({a, b}))];
  }
  const T& operator()(int a, int b, int c) const {
    return data_[static_cast<std::size_t>(offset({a, b, c}))];
  }
  const T& operator()(int a, int b, int c, int d) const {
    return data_[static_cast<std::size_t>(offset({a, b, c, d}))];
  }

  // Bounds-checked variant for test code and one-off lookups.
  T& at(std::span<const int> idx) {
    check_index(idx);
    return data_[static_cast<std::size_t>(offset_span(idx))];
  }
  const T& at(std::span<const int> idx) const {
    check_index(idx);
    return data_[static_cast<std::size_t>(offset_span(idx))];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  std::int64_t offset(std::initializer_list<int> idx) const {
    assert(static_cast<int>(idx.size()) == rank());
    std::int64_t off = 0;
    auto it = idx.begin();
    for (std::size_t axis = 0; axis < shape_.size(); ++axis, ++it) {
      assert(*it >= 0 && *it < shape_[axis]);
      off = off * shape_[axis] + *it;
    }
    return off;
  }

  std::int64_t offset_span(std::span<const int> idx) const {
    std::int64_t off = 0;
    for (std::size_t axis = 0; axis < shape_.size(); ++axis) {
      off = off * shape_[axis] + idx[axis];
    }
    return off;
  }

  void check_index(std::span<const int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw index_error("tensor: index rank " + std::to_string(idx.size()) +
                        " vs tensor rank " + std::to_string(rank()));
    for (std::size_t axis = 0; axis < shape_.size(); ++axis) {
      if (idx[axis] < 0 || idx[axis] >= shape_[axis])
        throw index_error("tensor: index out of range on axis " + std::to_string(axis) +
                          " for shape " + shape_string(shape_));
    }
  }

  static std::int64_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw shape_error("tensor: shape must have at least one extent");
    std::int64_t n = 1;
    for (int e : shape) {
      if (e < 1)
        throw shape_error("tensor: every extent must be >= 1, got " + shape_string(shape));
      n *= e;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

}  // namespace asfp
