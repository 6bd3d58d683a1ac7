#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "fedmerge/dataset.hpp"
#include "fedmerge/gma.hpp"  // FitnessFn
#include "fedmerge/merge.hpp"
#include "fedmerge/nn.hpp"
#include "fedmerge/projections.hpp"
#include "fedmerge/rng.hpp"

namespace fedmerge {

struct SomaConfig {
  double eta = 0.05;
  double rho = 0.1;
  std::size_t batch_size = 32;
  // One iteration = one pass over the validation data.
  std::size_t max_iterations = 10;
  std::uint64_t seed = 1;
};

inline void validate(const SomaConfig& cfg) {
  if (!std::isfinite(cfg.eta) || cfg.eta < 0.0) {
    throw std::invalid_argument("eta must be finite and >= 0");
  }
  if (!std::isfinite(cfg.rho) || cfg.rho < 0.0) {
    throw std::invalid_argument("rho must be finite and >= 0");
  }
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
}

// A run stops early once the best full-validation fitness has not improved
// for this many consecutive passes.
constexpr std::size_t kSomaStallWindow = 3;

/// Loss plugged into the SGD loop: a scalar objective and its gradient with
/// respect to every model tensor. The default is the network cross-entropy.
struct LossModel {
  std::function<double(const ModelParams&, const Dataset&)> value;
  std::function<ModelParams(const ModelParams&, const Dataset&)> gradient;
};

inline LossModel cross_entropy_loss() {
  LossModel lm;
  lm.value = [](const ModelParams& m, const Dataset& d) { return forward_loss(m, d); };
  lm.gradient = [](const ModelParams& m, const Dataset& d) { return backward(m, d); };
  return lm;
}

/// d(loss)/d(theta_i^l) = dL/dW^l . W_source_i^l, the dot product running
/// over every tensor role in the layer.
inline double theta_gradient(const LayerParams& loss_grad_layer,
                             const LayerParams& source_layer) {
  return layer_dot(loss_grad_layer, source_layer);
}

struct SomaState {
  MergeCoefficients coeffs;
  MergeCoefficients best_coeffs;
  double best_fitness = std::numeric_limits<double>::infinity();
  std::size_t iteration = 0;
  double last_batch_loss = 0.0;
};

/// One SGD step on one batch: reconstruct, backprop, gradient steps on theta
/// and delta, per-layer simplex projection, then the norm clip against the
/// layer norms taken at the start of the step (the order the algorithm
/// states them in).
inline SomaState soma_step(SomaState state, const SourceBank& bank,
                           const Dataset& batch, const SomaConfig& cfg,
                           const LossModel& loss) {
  validate(cfg);
  require_coeffs_match_bank(state.coeffs, bank);
  const ModelParams current = reconstruct(state.coeffs, bank);
  const ModelParams grads = loss.gradient(current, batch);
  state.last_batch_loss = loss.value(current, batch);

  for (std::size_t l = 0; l < bank.layer_count(); ++l) {
    auto& theta = state.coeffs.theta[l];
    for (std::size_t i = 0; i < bank.size(); ++i) {
      theta[i] -= cfg.eta * theta_gradient(grads.layers[l], bank[i].layers[l]);
    }
    auto git = grads.layers[l].tensors.begin();
    for (auto& [role, t] : state.coeffs.delta[l].tensors) {
      const auto& g = git->second.data;
      for (std::size_t k = 0; k < t.data.size(); ++k) {
        t.data[k] -= cfg.eta * g[k];
      }
      ++git;
    }
    theta = project_simplex(std::move(theta));
    state.coeffs.delta[l] =
        clip_delta(std::move(state.coeffs.delta[l]), current.layers[l], cfg.rho);
  }
  state.coeffs.rho = cfg.rho;
  ++state.iteration;
  return state;
}

struct SomaLogRow {
  std::size_t iteration = 0;
  double mean_batch_loss = 0.0;
  double full_val_fitness = 0.0;
  double best_val_fitness = 0.0;
};

struct SomaResult {
  ModelParams model;          // reconstruct(best_coeffs)
  MergeCoefficients coeffs;   // best-so-far coefficients
  std::vector<SomaLogRow> log;
};

/// Full run: initialize at the direct average, take one SGD pass over the
/// shuffled validation data per iteration, track the best coefficients by
/// full-validation fitness. The returned model therefore never loses to the
/// direct average on the validation fitness.
inline SomaResult soma_run(const SourceBank& bank, const Dataset& valset,
                           const SomaConfig& cfg, const FitnessFn& fitness,
                           const LossModel& loss) {
  validate(cfg);
  SomaState state;
  state.coeffs = average_init(bank, cfg.rho);
  state.best_coeffs = state.coeffs;

  SomaResult result;
  {
    const ModelParams init = reconstruct(state.coeffs, bank);
    state.best_fitness = fitness(init, valset);
    result.log.push_back({0, loss.value(init, valset), state.best_fitness,
                          state.best_fitness});
  }

  const std::size_t m = valset.size();
  std::size_t stalled = 0;
  for (std::size_t pass = 1; pass <= cfg.max_iterations; ++pass) {
    Rng rng(derive_seed(cfg.seed, tag_hash("pass"), pass));
    auto order = rng.permutation(m);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < m; start += cfg.batch_size) {
      const std::size_t stop = std::min(m, start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
      state = soma_step(std::move(state), bank, valset.subset(idx), cfg, loss);
      loss_sum += state.last_batch_loss;
      ++batches;
    }
    const ModelParams current = reconstruct(state.coeffs, bank);
    const double full = fitness(current, valset);
    if (full < state.best_fitness) {
      state.best_fitness = full;
      state.best_coeffs = state.coeffs;
      stalled = 0;
    } else {
      ++stalled;
    }
    result.log.push_back({pass, loss_sum / static_cast<double>(batches), full,
                          state.best_fitness});
    if (stalled >= kSomaStallWindow) break;
  }

  result.coeffs = state.best_coeffs;
  result.model = reconstruct(state.best_coeffs, bank);
  return result;
}

inline SomaResult soma_run(const SourceBank& bank, const Dataset& valset,
                           const SomaConfig& cfg, const FitnessFn& fitness) {
  return soma_run(bank, valset, cfg, fitness, cross_entropy_loss());
}

}  // namespace fedmerge
