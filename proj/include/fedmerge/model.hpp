#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fedmerge/errors.hpp"
#include "fedmerge/tensor.hpp"

namespace fedmerge {

/// One named layer: a bundle of role-named tensors (weight, bias,
/// norm_mean, norm_var, ...). Roles are kept in sorted order so that
/// iteration, serialization and site indexing are all canonical.
struct LayerParams {
  std::string name;
  std::map<std::string, Tensor> tensors;

  bool operator==(const LayerParams& other) const {
    return name == other.name && tensors == other.tensors;
  }
};

struct ModelParams {
  std::string architecture_id;
  std::vector<LayerParams> layers;

  std::size_t layer_count() const { return layers.size(); }

  bool operator==(const ModelParams& other) const {
    return architecture_id == other.architecture_id && layers == other.layers;
  }
};

inline bool same_layer_structure(const LayerParams& a, const LayerParams& b) {
  if (a.name != b.name || a.tensors.size() != b.tensors.size()) return false;
  auto ib = b.tensors.begin();
  for (auto ia = a.tensors.begin(); ia != a.tensors.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    if (!ia->second.same_shape(ib->second)) return false;
  }
  return true;
}

/// Merge compatibility: identical architecture_id, layer count, layer names,
/// role names and tensor shapes.
inline bool merge_compatible(const ModelParams& a, const ModelParams& b) {
  if (a.architecture_id != b.architecture_id) return false;
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (!same_layer_structure(a.layers[l], b.layers[l])) return false;
  }
  return true;
}

inline void require_compatible(const ModelParams& a, const ModelParams& b,
                               const std::string& context) {
  if (!merge_compatible(a, b)) {
    throw IncompatibleArchitectureError(context +
                                        ": models are not merge-compatible");
  }
}

template <class Fn>
void for_each_tensor(ModelParams& m, Fn&& fn) {
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (auto& [role, tensor] : m.layers[l].tensors) fn(l, role, tensor);
  }
}

template <class Fn>
void for_each_tensor(const ModelParams& m, Fn&& fn) {
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (const auto& [role, tensor] : m.layers[l].tensors) fn(l, role, tensor);
  }
}

inline std::size_t layer_scalar_count(const LayerParams& layer) {
  std::size_t n = 0;
  for (const auto& [role, t] : layer.tensors) n += t.size();
  return n;
}

inline std::size_t model_scalar_count(const ModelParams& m) {
  std::size_t n = 0;
  for (const auto& layer : m.layers) n += layer_scalar_count(layer);
  return n;
}

/// Frobenius norm over the concatenation of all of a layer's tensors.
inline double layer_frobenius(const LayerParams& layer) {
  double ss = 0.0;
  for (const auto& [role, t] : layer.tensors) {
    for (double v : t.data) ss += v * v;
  }
  return std::sqrt(ss);
}

/// Dot product over every tensor role in a layer: sum_ij A_ij * B_ij.
inline double layer_dot(const LayerParams& a, const LayerParams& b) {
  if (!same_layer_structure(a, b)) {
    throw IncompatibleArchitectureError("layer_dot: layer structures differ");
  }
  double acc = 0.0;
  auto ib = b.tensors.begin();
  for (auto ia = a.tensors.begin(); ia != a.tensors.end(); ++ia, ++ib) {
    const auto& da = ia->second.data;
    const auto& db = ib->second.data;
    for (std::size_t k = 0; k < da.size(); ++k) acc += da[k] * db[k];
  }
  return acc;
}

constexpr double kNormVarFloor = 1e-8;

/// Checks the structural invariants of a model: unique roles are implied by
/// the map, so this verifies finiteness and positive normalization variances.
inline void validate_model(const ModelParams& m, const std::string& context) {
  for (const auto& layer : m.layers) {
    for (const auto& [role, t] : layer.tensors) {
      if (!t.all_finite()) {
        throw NumericError(context + ": non-finite entry in layer '" +
                           layer.name + "' role '" + role + "'");
      }
      if (role == "norm_var") {
        for (double v : t.data) {
          if (!(v > 0.0)) {
            throw std::invalid_argument(context + ": non-positive norm_var in layer '" +
                                        layer.name + "'");
          }
        }
      }
    }
  }
}

}  // namespace fedmerge
