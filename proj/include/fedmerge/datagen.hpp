#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fedmerge/dataset.hpp"
#include "fedmerge/rng.hpp"

namespace fedmerge {

/// Synthetic heterogeneous shards: a shared Gaussian mixture (one component
/// per class) whose class priors diverge across shards with `skew`.
/// skew = 0 gives every shard the same uniform prior; skew = 1 restricts each
/// shard to its own class block, so dominant classes differ by construction.
struct ShardSpec {
  std::size_t n_shards = 5;
  std::size_t samples_per_shard = 2000;
  std::size_t feature_dim = 8;
  std::size_t class_count = 4;
  double skew = 0.7;
  double noise = 1.0;
  std::uint64_t seed = 1;
};

inline void validate(const ShardSpec& spec) {
  if (spec.n_shards < 1) throw std::invalid_argument("n_shards must be >= 1");
  if (spec.samples_per_shard < 1) {
    throw std::invalid_argument("samples_per_shard must be >= 1");
  }
  if (spec.feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  if (spec.class_count < 2) throw std::invalid_argument("class_count must be >= 2");
  if (!(spec.skew >= 0.0 && spec.skew <= 1.0)) {
    throw std::invalid_argument("skew must lie in [0, 1]");
  }
  if (!(spec.noise >= 0.0)) throw std::invalid_argument("noise must be >= 0");
}

// Validation and test sets are drawn from the pooled mixture and sized like
// the union of the shards, mirroring a held-out split across every curator.
struct GeneratedData {
  std::vector<Dataset> shards;
  Dataset validation;  // pooled mixture, n_shards * samples_per_shard draws
  Dataset test;        // pooled mixture, n_shards * samples_per_shard draws
};

namespace detail {

inline std::vector<double> shard_prior(const ShardSpec& spec, std::size_t shard) {
  const std::size_t C = spec.class_count;
  std::vector<double> concentrated(C, 0.0);
  std::size_t assigned = 0;
  for (std::size_t c = shard; c < C; c += spec.n_shards) {
    concentrated[c] = 1.0;
    ++assigned;
  }
  if (assigned == 0) {
    concentrated[shard % C] = 1.0;
    assigned = 1;
  }
  std::vector<double> p(C);
  for (std::size_t c = 0; c < C; ++c) {
    p[c] = (1.0 - spec.skew) / static_cast<double>(C) +
           spec.skew * concentrated[c] / static_cast<double>(assigned);
  }
  return p;
}

inline std::size_t draw_class(const std::vector<double>& prior, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t c = 0; c < prior.size(); ++c) {
    acc += prior[c];
    if (u < acc) return c;
  }
  return prior.size() - 1;
}

inline Dataset draw_dataset(const ShardSpec& spec,
                            const std::vector<std::vector<double>>& means,
                            const std::vector<double>& prior, std::size_t count,
                            Rng& rng) {
  Tensor f({count, spec.feature_dim});
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = draw_class(prior, rng);
    labels[i] = static_cast<int>(c);
    double* row = f.data.data() + i * spec.feature_dim;
    for (std::size_t d = 0; d < spec.feature_dim; ++d) {
      row[d] = means[c][d] + spec.noise * rng.normal();
    }
  }
  return Dataset(std::move(f), std::move(labels), static_cast<int>(spec.class_count));
}

}  // namespace detail

inline GeneratedData generate_shards(const ShardSpec& spec) {
  validate(spec);
  // Class centroids, shared by all shards.
  std::vector<std::vector<double>> means(spec.class_count,
                                         std::vector<double>(spec.feature_dim));
  {
    Rng rng(derive_seed(spec.seed, tag_hash("means")));
    for (auto& mu : means) {
      for (double& v : mu) v = 1.5 * rng.normal();
    }
  }

  // Pooled prior: each shard contributes equally to validation/test data.
  std::vector<double> pooled(spec.class_count, 0.0);
  for (std::size_t s = 0; s < spec.n_shards; ++s) {
    const auto p = detail::shard_prior(spec, s);
    for (std::size_t c = 0; c < spec.class_count; ++c) {
      pooled[c] += p[c] / static_cast<double>(spec.n_shards);
    }
  }

  GeneratedData out;
  for (std::size_t s = 0; s < spec.n_shards; ++s) {
    Rng rng(derive_seed(spec.seed, tag_hash("shard"), s));
    out.shards.push_back(detail::draw_dataset(spec, means, detail::shard_prior(spec, s),
                                              spec.samples_per_shard, rng));
  }
  const std::size_t pool_size = spec.n_shards * spec.samples_per_shard;
  {
    Rng rng(derive_seed(spec.seed, tag_hash("validation")));
    out.validation = detail::draw_dataset(spec, means, pooled, pool_size, rng);
  }
  {
    Rng rng(derive_seed(spec.seed, tag_hash("test")));
    out.test = detail::draw_dataset(spec, means, pooled, pool_size, rng);
  }
  return out;
}

}  // namespace fedmerge
