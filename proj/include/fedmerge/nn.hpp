#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fedmerge/dataset.hpp"
#include "fedmerge/errors.hpp"
#include "fedmerge/model.hpp"
#include "fedmerge/rng.hpp"

namespace fedmerge {

/// Multilayer perceptron: dense layers with tanh hidden activations and a
/// softmax cross-entropy head. Layer l holds "weight" [in, out] and
/// "bias" [out].
struct MlpArchitecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t class_count = 2;

  std::string id() const {
    std::string s = "mlp:" + std::to_string(input_dim);
    for (std::size_t h : hidden) s += "-" + std::to_string(h);
    s += "-" + std::to_string(class_count);
    return s;
  }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    w.push_back(input_dim);
    for (std::size_t h : hidden) w.push_back(h);
    w.push_back(class_count);
    return w;
  }
};

/// Seeded initialization, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
/// All sources share the same init_seed so that averaging makes sense.
inline ModelParams init_model(const MlpArchitecture& arch, std::uint64_t init_seed) {
  if (arch.input_dim == 0 || arch.class_count < 2) {
    throw std::invalid_argument("architecture needs input_dim >= 1 and class_count >= 2");
  }
  ModelParams m;
  m.architecture_id = arch.id();
  auto widths = arch.widths();
  Rng rng(derive_seed(init_seed, tag_hash("mlp-init")));
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    LayerParams layer;
    layer.name = "dense" + std::to_string(l);
    Tensor w({in, out});
    for (double& v : w.data) v = (2.0 * rng.uniform() - 1.0) * bound;
    Tensor b({out});
    for (double& v : b.data) v = (2.0 * rng.uniform() - 1.0) * bound;
    layer.tensors.emplace("weight", std::move(w));
    layer.tensors.emplace("bias", std::move(b));
    m.layers.push_back(std::move(layer));
  }
  return m;
}

namespace detail {

inline const Tensor& layer_weight(const LayerParams& layer) {
  auto it = layer.tensors.find("weight");
  if (it == layer.tensors.end() || it->second.rank() != 2) {
    throw IncompatibleArchitectureError("layer '" + layer.name +
                                        "' has no 2-d weight tensor");
  }
  return it->second;
}

inline const Tensor& layer_bias(const LayerParams& layer) {
  auto it = layer.tensors.find("bias");
  if (it == layer.tensors.end() || it->second.rank() != 1) {
    throw IncompatibleArchitectureError("layer '" + layer.name +
                                        "' has no 1-d bias tensor");
  }
  return it->second;
}

inline void check_model_batch(const ModelParams& model, const Dataset& batch) {
  if (model.layers.empty()) {
    throw IncompatibleArchitectureError("model has no layers");
  }
  std::size_t dim = batch.feature_dim();
  for (const auto& layer : model.layers) {
    const Tensor& w = layer_weight(layer);
    const Tensor& b = layer_bias(layer);
    if (w.shape[0] != dim) {
      throw IncompatibleArchitectureError(
          "layer '" + layer.name + "' expects input width " +
          std::to_string(w.shape[0]) + ", got " + std::to_string(dim));
    }
    if (b.shape[0] != w.shape[1]) {
      throw IncompatibleArchitectureError("layer '" + layer.name +
                                          "' bias width does not match weight");
    }
    dim = w.shape[1];
  }
  for (int y : batch.labels) {
    if (static_cast<std::size_t>(y) >= dim) {
      throw IncompatibleArchitectureError(
          "label " + std::to_string(y) + " out of range for output width " +
          std::to_string(dim));
    }
  }
}

// activations[k]: output of layer k (post tanh for hidden, raw logits for
// the last layer), each [m, width_k].
struct ForwardPass {
  std::vector<Tensor> activations;
};

inline ForwardPass forward_pass(const ModelParams& model, const Dataset& batch) {
  const std::size_t m = batch.size();
  ForwardPass fp;
  const Tensor* input = &batch.features;
  const std::size_t L = model.layers.size();
  for (std::size_t l = 0; l < L; ++l) {
    const Tensor& w = layer_weight(model.layers[l]);
    const Tensor& b = layer_bias(model.layers[l]);
    const std::size_t in = w.shape[0], out = w.shape[1];
    Tensor z({m, out});
    for (std::size_t r = 0; r < m; ++r) {
      const double* x = input->data.data() + r * in;
      double* zr = z.data.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) zr[o] = b.data[o];
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        const double* wrow = w.data.data() + i * out;
        for (std::size_t o = 0; o < out; ++o) zr[o] += xi * wrow[o];
      }
    }
    if (l + 1 < L) {
      for (double& v : z.data) v = std::tanh(v);
    }
    fp.activations.push_back(std::move(z));
    input = &fp.activations.back();
  }
  return fp;
}

// Mean cross-entropy of logits [m, c] against labels; via log-sum-exp.
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t m = logits.shape[0], c = logits.shape[1];
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const double* z = logits.data.data() + r * c;
    double zmax = z[0];
    for (std::size_t k = 1; k < c; ++k) zmax = std::max(zmax, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += std::exp(z[k] - zmax);
    total += zmax + std::log(sum) - z[static_cast<std::size_t>(labels[r])];
  }
  return total / static_cast<double>(m);
}

}  // namespace detail

/// Mean softmax cross-entropy of the model on the batch.
inline double forward_loss(const ModelParams& model, const Dataset& batch) {
  detail::check_model_batch(model, batch);
  auto fp = detail::forward_pass(model, batch);
  double loss = detail::cross_entropy(fp.activations.back(), batch.labels);
  if (!std::isfinite(loss)) {
    throw NumericError("forward_loss: non-finite loss");
  }
  return loss;
}

/// Gradient of forward_loss w.r.t. every tensor, same shapes as the model.
inline ModelParams backward(const ModelParams& model, const Dataset& batch,
                            double* loss_out = nullptr) {
  detail::check_model_batch(model, batch);
  const std::size_t m = batch.size();
  const std::size_t L = model.layers.size();
  auto fp = detail::forward_pass(model, batch);

  const Tensor& logits = fp.activations.back();
  double loss = detail::cross_entropy(logits, batch.labels);
  if (!std::isfinite(loss)) {
    throw NumericError("backward: non-finite loss");
  }
  if (loss_out) *loss_out = loss;

  // d(mean CE)/d(logits) = (softmax - onehot) / m
  const std::size_t c = logits.shape[1];
  Tensor dz({m, c});
  for (std::size_t r = 0; r < m; ++r) {
    const double* z = logits.data.data() + r * c;
    double* g = dz.data.data() + r * c;
    double zmax = z[0];
    for (std::size_t k = 1; k < c; ++k) zmax = std::max(zmax, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      g[k] = std::exp(z[k] - zmax);
      sum += g[k];
    }
    for (std::size_t k = 0; k < c; ++k) g[k] /= sum;
    g[static_cast<std::size_t>(batch.labels[r])] -= 1.0;
    for (std::size_t k = 0; k < c; ++k) g[k] /= static_cast<double>(m);
  }

  ModelParams grads = model;  // same structure
  for_each_tensor(grads, [](std::size_t, const std::string&, Tensor& t) {
    std::fill(t.data.begin(), t.data.end(), 0.0);
  });
  for (std::size_t li = L; li-- > 0;) {
    const Tensor& w = detail::layer_weight(model.layers[li]);
    const std::size_t in = w.shape[0], out = w.shape[1];
    const Tensor& input =
        (li == 0) ? batch.features : fp.activations[li - 1];

    Tensor dw({in, out});
    Tensor db({out});
    for (std::size_t r = 0; r < m; ++r) {
      const double* x = input.data.data() + r * in;
      const double* g = dz.data.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) db.data[o] += g[o];
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        double* dwrow = dw.data.data() + i * out;
        for (std::size_t o = 0; o < out; ++o) dwrow[o] += xi * g[o];
      }
    }

    if (li > 0) {
      // dz_prev = (dz . W^T) * (1 - a^2), a = tanh activation of layer li-1
      Tensor dprev({m, in});
      for (std::size_t r = 0; r < m; ++r) {
        const double* g = dz.data.data() + r * out;
        const double* a = fp.activations[li - 1].data.data() + r * in;
        double* gp = dprev.data.data() + r * in;
        for (std::size_t i = 0; i < in; ++i) {
          const double* wrow = w.data.data() + i * out;
          double acc = 0.0;
          for (std::size_t o = 0; o < out; ++o) acc += g[o] * wrow[o];
          gp[i] = acc * (1.0 - a[i] * a[i]);
        }
      }
      dz = std::move(dprev);
    }

    grads.layers[li].tensors["weight"] = std::move(dw);
    grads.layers[li].tensors["bias"] = std::move(db);
  }
  return grads;
}

/// Argmax class per row. Total: never throws on non-finite values, so it can
/// score arbitrarily mangled models (NaN logits lose every comparison).
inline std::vector<int> predict(const ModelParams& model, const Dataset& data) {
  detail::check_model_batch(model, data);
  auto fp = detail::forward_pass(model, data);
  const Tensor& logits = fp.activations.back();
  const std::size_t m = logits.shape[0], c = logits.shape[1];
  std::vector<int> out(m, 0);
  for (std::size_t r = 0; r < m; ++r) {
    const double* z = logits.data.data() + r * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (z[k] > z[best]) best = k;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;       // data shuffling
  std::uint64_t init_seed = 1;  // shared across sources
};

/// Plain minibatch SGD on one shard. Deterministic for fixed seeds.
inline ModelParams train_source(const Dataset& shard, const MlpArchitecture& arch,
                                const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  ModelParams model = init_model(arch, cfg.init_seed);
  detail::check_model_batch(model, shard);
  const std::size_t m = shard.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, tag_hash("epoch"), epoch));
    auto order = rng.permutation(m);
    for (std::size_t start = 0; start < m; start += cfg.batch_size) {
      const std::size_t stop = std::min(m, start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
      Dataset batch = shard.subset(idx);
      double loss = 0.0;
      ModelParams grads;
      try {
        grads = backward(model, batch, &loss);
      } catch (const NumericError&) {
        throw TrainingDivergedError(epoch, "training diverged at epoch " +
                                               std::to_string(epoch));
      }
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto git = grads.layers[l].tensors.begin();
        for (auto& [role, t] : model.layers[l].tensors) {
          const auto& g = git->second.data;
          for (std::size_t k = 0; k < t.data.size(); ++k) {
            t.data[k] -= cfg.learning_rate * g[k];
          }
          ++git;
        }
      }
    }
  }
  return model;
}

}  // namespace fedmerge
