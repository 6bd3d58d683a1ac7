#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedmerge/rng.hpp"
#include "fedmerge/tensor.hpp"

namespace fedmerge {

/// Immutable classification dataset: features [m, d], integer labels.
struct Dataset {
  Tensor features;          // shape [m, d]
  std::vector<int> labels;  // length m
  int class_count = 0;

  Dataset() = default;

  Dataset(Tensor f, std::vector<int> l, int classes)
      : features(std::move(f)), labels(std::move(l)), class_count(classes) {
    if (features.rank() != 2) {
      throw std::invalid_argument("dataset features must be rank-2 [m, d]");
    }
    if (features.shape[0] != labels.size()) {
      throw std::invalid_argument("dataset feature rows must match label count");
    }
    if (labels.empty()) {
      throw std::invalid_argument("dataset must contain at least one sample");
    }
    if (class_count <= 0) {
      throw std::invalid_argument("class_count must be positive");
    }
    for (int y : labels) {
      if (y < 0 || y >= class_count) {
        throw std::invalid_argument("label out of range [0, class_count)");
      }
    }
  }

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return features.shape[1]; }

  std::span<const double> row(std::size_t i) const {
    return {features.data.data() + i * feature_dim(), feature_dim()};
  }

  /// New dataset holding the given rows, in the given order.
  Dataset subset(std::span<const std::size_t> idx) const {
    if (idx.empty()) throw std::invalid_argument("subset must be non-empty");
    const std::size_t d = feature_dim();
    Tensor f({idx.size(), d});
    std::vector<int> l(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto r = row(idx[k]);
      std::copy(r.begin(), r.end(), f.data.begin() + k * d);
      l[k] = labels[idx[k]];
    }
    return Dataset(std::move(f), std::move(l), class_count);
  }

  /// Seeded random subsample of round(m * fraction) rows (at least one),
  /// taken without replacement. fraction must lie in (0, 1].
  Dataset subsample(double fraction, std::uint64_t seed) const {
    if (!(fraction > 0.0) || fraction > 1.0) {
      throw std::invalid_argument("fraction must be in (0, 1]");
    }
    if (fraction == 1.0) return *this;
    Rng rng(derive_seed(seed, tag_hash("subsample")));
    auto perm = rng.permutation(size());
    auto k = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(fraction * static_cast<double>(size()))));
    k = std::min(k, size());
    std::vector<std::size_t> idx(perm.begin(), perm.begin() + k);
    std::sort(idx.begin(), idx.end());
    return subset(idx);
  }
};

}  // namespace fedmerge
