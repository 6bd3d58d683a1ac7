#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "fedmerge/errors.hpp"
#include "fedmerge/model.hpp"

namespace fedmerge {

constexpr double kSimplexTolerance = 1e-12;

inline bool on_simplex(const std::vector<double>& v, double tol = kSimplexTolerance) {
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

/// Euclidean projection onto the probability simplex
/// { x : x_i >= 0, sum x_i = 1 }, by the sort-and-threshold method.
/// Inputs already on the simplex are returned unchanged.
inline std::vector<double> project_simplex(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("project_simplex: empty vector");
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("project_simplex: non-finite input");
  }
  if (v.size() == 1) return {1.0};  // the 1-simplex is a single point
  if (on_simplex(v)) return v;

  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double tau = 0.0;
  std::size_t support = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double candidate = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) {
      tau = candidate;
      support = j + 1;
    }
  }
  (void)support;
  for (double& x : v) x = std::max(x - tau, 0.0);
  return v;
}

/// Rescales delta onto the ball ||delta||_F <= rho * ||reconstructed||_F.
/// Feasible inputs (including delta = 0) are returned unchanged; otherwise a
/// single scaling by gamma = rho*||W||/||delta|| lands exactly on the bound.
inline LayerParams clip_delta(LayerParams delta, const LayerParams& reconstructed,
                              double rho) {
  if (!same_layer_structure(delta, reconstructed)) {
    throw IncompatibleArchitectureError("clip_delta: layer structures differ");
  }
  if (rho < 0.0) throw std::invalid_argument("clip_delta: rho must be >= 0");
  const double dn = layer_frobenius(delta);
  if (dn == 0.0) return delta;
  const double wn = layer_frobenius(reconstructed);
  if (dn <= rho * wn) return delta;
  const double gamma = rho * wn / dn;
  for (auto& [role, t] : delta.tensors) {
    for (double& x : t.data) x *= gamma;
  }
  return delta;
}

}  // namespace fedmerge
