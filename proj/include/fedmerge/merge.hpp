#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedmerge/errors.hpp"
#include "fedmerge/model.hpp"
#include "fedmerge/projections.hpp"

namespace fedmerge {

/// The n source models being merged. All pairwise merge-compatible.
class SourceBank {
 public:
  explicit SourceBank(std::vector<ModelParams> sources)
      : sources_(std::move(sources)) {
    if (sources_.empty()) {
      throw std::invalid_argument("source bank must be non-empty");
    }
    for (std::size_t i = 1; i < sources_.size(); ++i) {
      require_compatible(sources_[0], sources_[i], "SourceBank");
    }
  }

  std::size_t size() const { return sources_.size(); }
  std::size_t layer_count() const { return sources_[0].layers.size(); }
  const ModelParams& operator[](std::size_t i) const { return sources_[i]; }
  const std::vector<ModelParams>& models() const { return sources_; }

 private:
  std::vector<ModelParams> sources_;
};

/// Per-layer representation of a merged model:
///   W^l = sum_i theta_i^l * W_source_i^l + delta^l
/// with each theta^l on the probability simplex and
/// ||delta^l||_F <= rho * ||W^l||_F.
struct MergeCoefficients {
  std::size_t n = 0;
  std::vector<std::vector<double>> theta;  // [L][n]
  std::vector<LayerParams> delta;          // [L], model-shaped residuals
  double rho = 0.0;
};

namespace detail {

inline bool tensor_is_zero(const Tensor& t) {
  for (double v : t.data) {
    if (v != 0.0) return false;
  }
  return true;
}

inline bool layer_is_zero(const LayerParams& layer) {
  for (const auto& [role, t] : layer.tensors) {
    if (!tensor_is_zero(t)) return false;
  }
  return true;
}

// Index of the unit coordinate if theta is exactly a standard basis vector.
inline std::ptrdiff_t unit_coordinate(const std::vector<double>& theta) {
  std::ptrdiff_t unit = -1;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (theta[i] == 1.0) {
      if (unit >= 0) return -1;
      unit = static_cast<std::ptrdiff_t>(i);
    } else if (theta[i] != 0.0) {
      return -1;
    }
  }
  return unit;
}

inline LayerParams zero_layer_like(const LayerParams& layer) {
  LayerParams z;
  z.name = layer.name;
  for (const auto& [role, t] : layer.tensors) {
    z.tensors.emplace(role, Tensor(t.shape));
  }
  return z;
}

}  // namespace detail

inline void require_coeffs_match_bank(const MergeCoefficients& c,
                                      const SourceBank& bank) {
  if (c.n != bank.size() || c.theta.size() != bank.layer_count() ||
      c.delta.size() != bank.layer_count()) {
    throw IncompatibleArchitectureError(
        "merge coefficients do not match the source bank dimensions");
  }
  for (const auto& t : c.theta) {
    if (t.size() != c.n) {
      throw IncompatibleArchitectureError("theta row has wrong source count");
    }
  }
  for (std::size_t l = 0; l < c.delta.size(); ++l) {
    if (!same_layer_structure(c.delta[l], bank[0].layers[l])) {
      throw IncompatibleArchitectureError("delta layer " + std::to_string(l) +
                                          " does not match the bank layers");
    }
  }
}

/// Reconstructs one layer of the merged model.
inline LayerParams reconstruct_layer(const MergeCoefficients& c,
                                     const SourceBank& bank, std::size_t l) {
  const auto& theta = c.theta[l];
  const LayerParams& dl = c.delta[l];
  // Exact-vertex fast path keeps source bits intact.
  if (detail::layer_is_zero(dl)) {
    const std::ptrdiff_t k = detail::unit_coordinate(theta);
    if (k >= 0) return bank[static_cast<std::size_t>(k)].layers[l];
  }
  LayerParams out = detail::zero_layer_like(bank[0].layers[l]);
  for (auto& [role, t] : out.tensors) {
    const Tensor& d = dl.tensors.at(role);
    for (std::size_t k = 0; k < t.data.size(); ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c.n; ++i) {
        const double w = theta[i];
        if (w != 0.0) acc += w * bank[i].layers[l].tensors.at(role).data[k];
      }
      const double dv = d.data[k];
      if (dv != 0.0) acc += dv;
      t.data[k] = acc;
    }
  }
  return out;
}

/// W^l = sum_i theta_i^l W_i^l + delta^l for every layer.
inline ModelParams reconstruct(const MergeCoefficients& c, const SourceBank& bank) {
  require_coeffs_match_bank(c, bank);
  ModelParams out;
  out.architecture_id = bank[0].architecture_id;
  out.layers.reserve(bank.layer_count());
  for (std::size_t l = 0; l < bank.layer_count(); ++l) {
    out.layers.push_back(reconstruct_layer(c, bank, l));
  }
  return out;
}

/// theta_i^l = 1/n, delta^l = 0: the direct-average starting point.
inline MergeCoefficients average_init(const SourceBank& bank, double rho) {
  if (rho < 0.0) throw std::invalid_argument("rho must be >= 0");
  MergeCoefficients c;
  c.n = bank.size();
  c.rho = rho;
  const double w = 1.0 / static_cast<double>(c.n);
  for (std::size_t l = 0; l < bank.layer_count(); ++l) {
    c.theta.emplace_back(c.n, w);
    c.delta.push_back(detail::zero_layer_like(bank[0].layers[l]));
  }
  return c;
}

/// theta^l = e_k, delta^l = 0: coefficients of source k itself.
inline MergeCoefficients unit_coefficients(const SourceBank& bank,
                                           std::size_t source_index,
                                           double rho = 0.0) {
  if (source_index >= bank.size()) {
    throw std::out_of_range("source index out of range");
  }
  MergeCoefficients c = average_init(bank, rho);
  for (auto& row : c.theta) {
    std::fill(row.begin(), row.end(), 0.0);
    row[source_index] = 1.0;
  }
  return c;
}

/// Elementwise mean of the sources, as the uniform convex combination.
inline ModelParams direct_average(const SourceBank& bank) {
  return reconstruct(average_init(bank, 0.0), bank);
}

inline bool satisfies_invariants(const MergeCoefficients& c, const SourceBank& bank,
                                 std::string* why = nullptr) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (c.rho < 0.0) return fail("rho is negative");
  require_coeffs_match_bank(c, bank);
  for (std::size_t l = 0; l < c.theta.size(); ++l) {
    if (!on_simplex(c.theta[l])) {
      return fail("theta of layer " + std::to_string(l) + " is off the simplex");
    }
    const double dn = layer_frobenius(c.delta[l]);
    const double wn = layer_frobenius(reconstruct_layer(c, bank, l));
    if (dn > c.rho * wn + 1e-12) {
      return fail("delta norm bound violated at layer " + std::to_string(l));
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Operator tracking: the coefficient-space image of each genetic operator.
// ---------------------------------------------------------------------------

struct ReproduceOp {};
struct CrossoverOp {
  std::size_t layer_count = 0;  // layers 1..layer_count are exchanged
};
struct InterpolateOp {
  double lambda = 0.5;
};
struct MutateOp {
  std::size_t layer = 0;
  std::string role;
  std::size_t index = 0;
  double new_value = 0.0;  // value of the mutated scalar, post clamping
};
using OperatorDescriptor =
    std::variant<ReproduceOp, CrossoverOp, InterpolateOp, MutateOp>;

namespace detail {

// Largest delta-vs-reconstruction ratio over layers, used to keep the rho
// bound self-consistent after tracking operators that can grow delta.
inline double required_rho(const MergeCoefficients& c, const SourceBank& bank) {
  double needed = 0.0;
  for (std::size_t l = 0; l < c.delta.size(); ++l) {
    const double dn = layer_frobenius(c.delta[l]);
    if (dn == 0.0) continue;
    const double wn = layer_frobenius(reconstruct_layer(c, bank, l));
    if (wn == 0.0) return std::numeric_limits<double>::infinity();
    needed = std::max(needed, dn / wn * (1.0 + 8e-16));
  }
  return needed;
}

}  // namespace detail

inline MergeCoefficients track_interpolate(const MergeCoefficients& a,
                                           const MergeCoefficients& b,
                                           double lambda, const SourceBank& bank) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw std::domain_error("interpolation lambda must lie in (0, 1)");
  }
  require_coeffs_match_bank(a, bank);
  require_coeffs_match_bank(b, bank);
  MergeCoefficients out = a;
  for (std::size_t l = 0; l < out.theta.size(); ++l) {
    for (std::size_t i = 0; i < out.n; ++i) {
      out.theta[l][i] = lambda * a.theta[l][i] + (1.0 - lambda) * b.theta[l][i];
    }
    auto itb = b.delta[l].tensors.begin();
    for (auto& [role, t] : out.delta[l].tensors) {
      const auto& db = itb->second.data;
      for (std::size_t k = 0; k < t.data.size(); ++k) {
        t.data[k] = lambda * t.data[k] + (1.0 - lambda) * db[k];
      }
      ++itb;
    }
  }
  out.rho = std::max({a.rho, b.rho, detail::required_rho(out, bank)});
  return out;
}

/// Swaps (theta^l, delta^l) for layers 1..layer_count, mirroring the raw
/// crossover convention: first child keeps parent a's tail.
inline std::pair<MergeCoefficients, MergeCoefficients> track_crossover(
    const MergeCoefficients& a, const MergeCoefficients& b,
    std::size_t layer_count) {
  if (a.theta.size() != b.theta.size() || a.n != b.n) {
    throw IncompatibleArchitectureError("track_crossover: coefficient shapes differ");
  }
  if (layer_count < 1 || layer_count >= a.theta.size()) {
    throw std::out_of_range("crossover layer count out of range");
  }
  MergeCoefficients c1 = a, c2 = b;
  for (std::size_t l = 0; l < layer_count; ++l) {
    c1.theta[l] = b.theta[l];
    c1.delta[l] = b.delta[l];
    c2.theta[l] = a.theta[l];
    c2.delta[l] = a.delta[l];
  }
  const double rho = std::max(a.rho, b.rho);
  c1.rho = rho;
  c2.rho = rho;
  return {std::move(c1), std::move(c2)};
}

/// Mutation adjusts only delta: the residual at the mutated site is set so
/// that reconstruction reproduces the recorded scalar, bit-for-bit whenever
/// the floating-point grid allows it.
inline MergeCoefficients track_mutate(const MergeCoefficients& c,
                                      const SourceBank& bank, const MutateOp& op) {
  require_coeffs_match_bank(c, bank);
  if (op.layer >= c.delta.size()) throw std::out_of_range("mutation layer out of range");
  MergeCoefficients out = c;
  auto it = out.delta[op.layer].tensors.find(op.role);
  if (it == out.delta[op.layer].tensors.end()) {
    throw std::out_of_range("mutation role '" + op.role + "' not present");
  }
  if (op.index >= it->second.data.size()) {
    throw std::out_of_range("mutation index out of range");
  }

  // The theta-weighted source sum at the site, accumulated exactly as
  // reconstruct_layer does.
  double acc = 0.0;
  for (std::size_t i = 0; i < c.n; ++i) {
    const double w = c.theta[op.layer][i];
    if (w != 0.0) {
      acc += w * bank[i].layers[op.layer].tensors.at(op.role).data[op.index];
    }
  }
  const double target = op.new_value;
  auto recon = [&](double d) { return d == 0.0 ? acc : acc + d; };
  double best = target - acc;
  double best_err = std::abs(recon(best) - target);
  for (int dir = -1; dir <= 1 && best_err != 0.0; dir += 2) {
    double d = target - acc;
    for (int step = 0; step < 3 && best_err != 0.0; ++step) {
      d = std::nextafter(d, dir < 0 ? -std::numeric_limits<double>::infinity()
                                    : std::numeric_limits<double>::infinity());
      const double err = std::abs(recon(d) - target);
      if (err < best_err) {
        best = d;
        best_err = err;
      }
    }
  }
  it->second.data[op.index] = best;
  out.rho = std::max(out.rho, detail::required_rho(out, bank));
  return out;
}

/// Applies one operator descriptor in coefficient space. Reproduce and mutate
/// take one parent; crossover yields two children; interpolate yields one.
inline std::vector<MergeCoefficients> track_operator(
    const std::vector<MergeCoefficients>& parents, const OperatorDescriptor& op,
    const SourceBank& bank) {
  auto need = [&](std::size_t k) {
    if (parents.size() != k) {
      throw std::invalid_argument("operator expects " + std::to_string(k) +
                                  " parent(s), got " + std::to_string(parents.size()));
    }
  };
  if (std::holds_alternative<ReproduceOp>(op)) {
    need(1);
    return {parents[0]};
  }
  if (const auto* x = std::get_if<CrossoverOp>(&op)) {
    need(2);
    auto [c1, c2] = track_crossover(parents[0], parents[1], x->layer_count);
    return {std::move(c1), std::move(c2)};
  }
  if (const auto* x = std::get_if<InterpolateOp>(&op)) {
    need(2);
    return {track_interpolate(parents[0], parents[1], x->lambda, bank)};
  }
  const auto& x = std::get<MutateOp>(op);
  need(1);
  return {track_mutate(parents[0], bank, x)};
}

}  // namespace fedmerge
