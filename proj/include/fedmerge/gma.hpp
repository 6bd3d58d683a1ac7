#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedmerge/dataset.hpp"
#include "fedmerge/merge.hpp"
#include "fedmerge/model.hpp"
#include "fedmerge/rng.hpp"

namespace fedmerge {

struct GmaConfig {
  std::size_t top_k = 15;
  double p_mutation = 0.5;
  double p_crossover = 0.1;
  double p_interpolation = 0.1;
  std::size_t max_generations = 100;
  std::uint64_t seed = 1;
};

inline void validate(const GmaConfig& cfg) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (cfg.top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  if (!prob(cfg.p_mutation) || !prob(cfg.p_crossover) || !prob(cfg.p_interpolation)) {
    throw std::invalid_argument("operator probabilities must lie in [0, 1]");
  }
  if (cfg.max_generations < 1) throw std::invalid_argument("max_generations must be >= 1");
}

// Evolution stops early once the best fitness has improved by less than this
// over this many consecutive generations.
constexpr double kGmaStallEpsilon = 1e-6;
constexpr std::size_t kGmaStallWindow = 10;

inline double flip_bit(double x, unsigned bit) {
  auto u = std::bit_cast<std::uint64_t>(x);
  u ^= (std::uint64_t{1} << bit);
  return std::bit_cast<double>(u);
}

struct MutationSite {
  std::size_t layer = 0;
  std::string role;
  std::size_t index = 0;
  double old_value = 0.0;
  double new_value = 0.0;
};

/// Draws a single-bit mutation: layer uniform, then scalar uniform within the
/// layer, then one of the 64 bits. Flips that leave the model non-evaluable
/// (NaN/Inf, or a no-op after the norm_var floor) are redrawn, at most 100
/// times.
inline std::optional<MutationSite> draw_mutation(const ModelParams& model, Rng& rng) {
  if (model.layers.empty()) return std::nullopt;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const std::size_t l = rng.index(model.layers.size());
    const LayerParams& layer = model.layers[l];
    const std::size_t total = layer_scalar_count(layer);
    if (total == 0) continue;
    std::size_t flat = rng.index(total);
    const unsigned bit = static_cast<unsigned>(rng.index(64));
    for (const auto& [role, t] : layer.tensors) {
      if (flat >= t.size()) {
        flat -= t.size();
        continue;
      }
      const double old_value = t.data[flat];
      double value = flip_bit(old_value, bit);
      if (!std::isfinite(value)) break;  // redraw
      if (role == "norm_var" && value < kNormVarFloor) value = kNormVarFloor;
      if (value == old_value) break;  // clamp made it a no-op; redraw
      return MutationSite{l, role, flat, old_value, value};
    }
  }
  return std::nullopt;
}

inline ModelParams apply_mutation(ModelParams model, const MutationSite& site) {
  model.layers.at(site.layer).tensors.at(site.role).data.at(site.index) =
      site.new_value;
  return model;
}

/// Single-bit mutation; exactly one scalar differs from the input.
inline ModelParams mutate(const ModelParams& model, Rng& rng) {
  auto site = draw_mutation(model, rng);
  if (!site) {
    throw NumericError("mutate: no feasible bit flip found after 100 attempts");
  }
  return apply_mutation(model, *site);
}

/// Exchanges the first `layer_count` layers of the two parents:
///   child1 = {b_1..b_l, a_{l+1}..a_L}, child2 = {a_1..a_l, b_{l+1}..b_L}.
inline std::pair<ModelParams, ModelParams> crossover_at(const ModelParams& a,
                                                        const ModelParams& b,
                                                        std::size_t layer_count) {
  require_compatible(a, b, "crossover");
  if (a.layers.size() < 2) {
    throw std::domain_error("crossover is inapplicable to single-layer models");
  }
  if (layer_count < 1 || layer_count >= a.layers.size()) {
    throw std::out_of_range("crossover layer count must lie in [1, L-1]");
  }
  ModelParams c1 = a, c2 = b;
  for (std::size_t l = 0; l < layer_count; ++l) {
    c1.layers[l] = b.layers[l];
    c2.layers[l] = a.layers[l];
  }
  return {std::move(c1), std::move(c2)};
}

struct CrossoverResult {
  ModelParams first;
  ModelParams second;
  std::size_t layer_count = 0;
};

inline CrossoverResult crossover(const ModelParams& a, const ModelParams& b, Rng& rng) {
  if (a.layers.size() < 2) {
    throw std::domain_error("crossover is inapplicable to single-layer models");
  }
  const std::size_t l = 1 + rng.index(a.layers.size() - 1);
  auto [c1, c2] = crossover_at(a, b, l);
  return {std::move(c1), std::move(c2), l};
}

/// Every scalar becomes lambda*a + (1-lambda)*b, lambda in (0, 1).
inline ModelParams interpolate(const ModelParams& a, const ModelParams& b,
                               double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw std::domain_error("interpolation lambda must lie in (0, 1)");
  }
  require_compatible(a, b, "interpolate");
  ModelParams out = a;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto itb = b.layers[l].tensors.begin();
    for (auto& [role, t] : out.layers[l].tensors) {
      const auto& db = itb->second.data;
      for (std::size_t k = 0; k < t.data.size(); ++k) {
        t.data[k] = lambda * t.data[k] + (1.0 - lambda) * db[k];
      }
      ++itb;
    }
  }
  return out;
}

struct PopulationMember {
  ModelParams model;
  double fitness = std::numeric_limits<double>::quiet_NaN();
  bool evaluated = false;
  std::uint64_t id = 0;
};

struct Population {
  std::vector<PopulationMember> members;
};

/// Keeps the k members with the lowest fitness. Ties break in favour of the
/// earlier-inserted member; order of the result is by ascending fitness.
inline Population select_top_k(const Population& pop, std::size_t k) {
  for (const auto& m : pop.members) {
    if (!m.evaluated) throw std::logic_error("select_top_k: unevaluated member");
  }
  std::vector<std::size_t> order(pop.members.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto key = [&](std::size_t i) {
    const double f = pop.members[i].fitness;
    return std::isnan(f) ? std::numeric_limits<double>::infinity() : f;
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return key(i) < key(j); });
  Population out;
  const std::size_t keep = std::min(k, order.size());
  out.members.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.members.push_back(pop.members[order[i]]);
  return out;
}

using FitnessFn = std::function<double(const ModelParams&, const Dataset&)>;

struct TraceEvent {
  std::uint64_t child_id = 0;
  OperatorDescriptor op;
  std::vector<std::uint64_t> parents;
};

struct GenerationStats {
  std::size_t generation = 0;
  std::size_t evaluations = 0;  // cumulative fitness evaluations
  double best_fitness = 0.0;
  std::size_t population_size = 0;
  std::size_t offspring_size = 0;  // |P'| of this generation
};

struct GmaResult {
  ModelParams best_model;
  double best_fitness = 0.0;
  std::vector<GenerationStats> log;
  // Lineage of every evaluated member. Members 0..n-1 are the sources and
  // member n is their average; later ids appear as trace events.
  std::vector<TraceEvent> trace;
};

/// Algorithm: start from {sources, average}; each generation reproduces the
/// population, adds mutants with probability p1 per member, then crossover
/// (p2) and interpolation (p3) children over adjacent pairs of a shuffled
/// parent list; the top-k by validation fitness survive.
inline GmaResult gma_run(const SourceBank& bank, const Dataset& valset,
                         const FitnessFn& fitness, const GmaConfig& cfg) {
  validate(cfg);
  const std::size_t L = bank.layer_count();

  auto score = [&](const ModelParams& m) {
    const double f = fitness(m, valset);
    return std::isnan(f) ? std::numeric_limits<double>::infinity() : f;
  };

  GmaResult result;
  std::uint64_t next_id = 0;
  std::size_t evaluations = 0;

  Population pop;
  for (const auto& src : bank.models()) {
    pop.members.push_back({src, 0.0, false, next_id++});
  }
  pop.members.push_back({direct_average(bank), 0.0, false, next_id++});
  for (auto& m : pop.members) {
    m.fitness = score(m.model);
    m.evaluated = true;
    ++evaluations;
  }
  pop = select_top_k(pop, pop.members.size());  // order by fitness

  double best = pop.members.front().fitness;
  result.best_model = pop.members.front().model;
  result.best_fitness = best;
  result.log.push_back({0, evaluations, best, pop.members.size(), pop.members.size()});

  std::vector<double> best_history{best};

  for (std::size_t gen = 1; gen <= cfg.max_generations; ++gen) {
    Population offspring = pop;  // reproduction keeps all parents

    for (std::size_t i = 0; i < pop.members.size(); ++i) {
      Rng rng(derive_seed(cfg.seed, tag_hash("mutate"), gen, i));
      if (rng.uniform() < cfg.p_mutation) {
        auto site = draw_mutation(pop.members[i].model, rng);
        if (!site) continue;
        PopulationMember child;
        child.model = apply_mutation(pop.members[i].model, *site);
        child.id = next_id++;
        result.trace.push_back(
            {child.id,
             MutateOp{site->layer, site->role, site->index, site->new_value},
             {pop.members[i].id}});
        offspring.members.push_back(std::move(child));
      }
    }

    Rng shuffle_rng(derive_seed(cfg.seed, tag_hash("shuffle"), gen));
    auto order = shuffle_rng.permutation(pop.members.size());
    for (std::size_t p = 0; p + 1 < order.size(); p += 2) {
      const auto& a = pop.members[order[p]];
      const auto& b = pop.members[order[p + 1]];
      Rng rng(derive_seed(cfg.seed, tag_hash("pair"), gen, p / 2));
      if (rng.uniform() < cfg.p_crossover && L >= 2) {
        const std::size_t l = 1 + rng.index(L - 1);
        auto [c1, c2] = crossover_at(a.model, b.model, l);
        PopulationMember m1{std::move(c1), 0.0, false, next_id++};
        PopulationMember m2{std::move(c2), 0.0, false, next_id++};
        result.trace.push_back({m1.id, CrossoverOp{l}, {a.id, b.id}});
        result.trace.push_back({m2.id, CrossoverOp{l}, {b.id, a.id}});
        offspring.members.push_back(std::move(m1));
        offspring.members.push_back(std::move(m2));
      }
      if (rng.uniform() < cfg.p_interpolation) {
        const double lambda = rng.uniform_open();
        PopulationMember m{interpolate(a.model, b.model, lambda), 0.0, false,
                           next_id++};
        result.trace.push_back({m.id, InterpolateOp{lambda}, {a.id, b.id}});
        offspring.members.push_back(std::move(m));
      }
    }

    for (auto& m : offspring.members) {
      if (!m.evaluated) {
        m.fitness = score(m.model);
        m.evaluated = true;
        ++evaluations;
      }
    }
    const std::size_t offspring_size = offspring.members.size();
    pop = select_top_k(offspring, cfg.top_k);

    if (pop.members.front().fitness < best) {
      best = pop.members.front().fitness;
      result.best_model = pop.members.front().model;
      result.best_fitness = best;
    }
    result.log.push_back({gen, evaluations, best, pop.members.size(), offspring_size});

    best_history.push_back(best);
    if (best_history.size() > kGmaStallWindow) {
      const double then = best_history[best_history.size() - 1 - kGmaStallWindow];
      if (then - best < kGmaStallEpsilon) break;
    }
  }
  return result;
}

}  // namespace fedmerge
