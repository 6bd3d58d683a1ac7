#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedmerge/dataset.hpp"
#include "fedmerge/merge.hpp"
#include "fedmerge/model.hpp"
#include "fedmerge/nn.hpp"
#include "fedmerge/rng.hpp"

namespace testutil {

using namespace fedmerge;

inline Dataset random_dataset(std::size_t m, std::size_t d, int classes,
                              std::uint64_t seed) {
  Rng rng(seed);
  Tensor f({m, d});
  for (double& v : f.data) v = rng.normal();
  std::vector<int> labels(m);
  for (int& y : labels) y = static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
  return Dataset(std::move(f), std::move(labels), classes);
}

/// Random MLP whose weights are an initialized model plus noise, so layers
/// are not degenerate.
inline ModelParams random_model(const MlpArchitecture& arch, std::uint64_t seed) {
  ModelParams m = init_model(arch, seed);
  Rng rng(derive_seed(seed, tag_hash("perturb")));
  for_each_tensor(m, [&](std::size_t, const std::string&, Tensor& t) {
    for (double& v : t.data) v += 0.3 * rng.normal();
  });
  return m;
}

inline SourceBank random_bank(const MlpArchitecture& arch, std::size_t n,
                              std::uint64_t seed) {
  std::vector<ModelParams> models;
  for (std::size_t i = 0; i < n; ++i) {
    models.push_back(random_model(arch, derive_seed(seed, i)));
  }
  return SourceBank(std::move(models));
}

/// Model with normalization-statistic roles, for operator/merge tests.
inline ModelParams norm_model(std::uint64_t seed, std::size_t layers = 2) {
  Rng rng(seed);
  ModelParams m;
  m.architecture_id = "norm-test";
  for (std::size_t l = 0; l < layers; ++l) {
    LayerParams layer;
    layer.name = "block" + std::to_string(l);
    Tensor w({3, 2});
    for (double& v : w.data) v = rng.normal();
    Tensor b({2});
    for (double& v : b.data) v = rng.normal();
    Tensor mean({2});
    for (double& v : mean.data) v = rng.normal();
    Tensor var({2});
    for (double& v : var.data) v = 0.5 + rng.uniform();
    layer.tensors.emplace("weight", std::move(w));
    layer.tensors.emplace("bias", std::move(b));
    layer.tensors.emplace("norm_mean", std::move(mean));
    layer.tensors.emplace("norm_var", std::move(var));
    m.layers.push_back(std::move(layer));
  }
  return m;
}

inline double max_abs_diff(const ModelParams& a, const ModelParams& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto ib = b.layers[l].tensors.begin();
    for (const auto& [role, t] : a.layers[l].tensors) {
      for (std::size_t k = 0; k < t.data.size(); ++k) {
        worst = std::max(worst, std::abs(t.data[k] - ib->second.data[k]));
      }
      ++ib;
    }
  }
  return worst;
}

/// Self-cleaning scratch directory for file-format and CLI tests.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("fedmerge-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testutil
