#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmerge/errors.hpp"

namespace fedmerge {

/// Dense row-major tensor of 64-bit reals.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(checked_numel(shape), 0.0) {}

  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != data.size()) {
      throw std::invalid_argument("tensor data length does not match shape");
    }
  }

  static std::size_t checked_numel(const std::vector<std::size_t>& s) {
    if (s.empty()) throw std::invalid_argument("tensor shape must be non-empty");
    std::size_t n = 1;
    for (std::size_t d : s) {
      if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // 2-d accessors (row-major).
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool operator==(const Tensor& other) const {
    return shape == other.shape && data == other.data;
  }
};

}  // namespace fedmerge
