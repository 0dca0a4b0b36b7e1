#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ccl/container.hpp"
#include "ccl/errors.hpp"
#include "ccl/rng.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

enum class Activation { relu, identity };

// x·W + b with W stored [in×out] and b [1×out].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto y = add(matmul(x, weight), bias);
    return activation == Activation::relu ? relu(y) : y;
  }
};

// Layer widths of the encoder (input first, embedding last) and the class count.
struct Architecture {
  std::vector<std::size_t> layer_dims{20, 128, 64};
  std::size_t classes = 4;
  // ReLU after the embedding layer too. Off by default so embeddings can take any sign.
  bool relu_on_embedding = false;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t embed_dim() const { return layer_dims.back(); }

  void validate() const {
    if (layer_dims.size() < 2) throw ConfigError("architecture: need at least input and embedding widths");
    for (auto d : layer_dims)
      if (d == 0) throw ConfigError("architecture: zero-width layer");
    if (classes < 2) throw ConfigError("architecture: need at least 2 classes");
  }
  bool operator==(const Architecture&) const = default;
};

// Encoder f (stack of Linear layers) followed by classifier g.
template <typename T>
struct Model {
  std::vector<Linear<T>> encoder;
  Linear<T> classifier;

  std::size_t input_dim() const { return encoder.front().in_dim(); }
  std::size_t embed_dim() const { return encoder.back().out_dim(); }
  std::size_t classes() const { return classifier.out_dim(); }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> ps;
    for (const auto& l : encoder) {
      ps.push_back(l.weight);
      ps.push_back(l.bias);
    }
    ps.push_back(classifier.weight);
    ps.push_back(classifier.bias);
    return ps;
  }

  // Deep copy with fresh storage.
  Model clone() const {
    Model m;
    for (const auto& l : encoder) m.encoder.push_back({l.weight.clone(), l.bias.clone(), l.activation});
    m.classifier = {classifier.weight.clone(), classifier.bias.clone(), classifier.activation};
    return m;
  }

  // Copy cut from autodiff: every parameter is a plain constant.
  Model frozen() const {
    Model m;
    for (const auto& l : encoder) m.encoder.push_back({l.weight.detach(), l.bias.detach(), l.activation});
    m.classifier = {classifier.weight.detach(), classifier.bias.detach(), classifier.activation};
    return m;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }
};

// Fan-in scaled uniform init: weights U(±sqrt(6/fan_in)), biases U(±1/sqrt(fan_in)).
template <typename T>
Model<T> init_model(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  auto make = [&rng](std::size_t in, std::size_t out, Activation act) {
    const double wb = std::sqrt(6.0 / static_cast<double>(in));
    const double bb = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uw(-wb, wb), ub(-bb, bb);
    std::vector<T> w(in * out), b(out);
    for (auto& x : w) x = static_cast<T>(uw(rng));
    for (auto& x : b) x = static_cast<T>(ub(rng));
    return Linear<T>{Tensor<T>::matrix(in, out, std::move(w), true), Tensor<T>::matrix(1, out, std::move(b), true),
                     act};
  };
  Model<T> m;
  const auto& dims = arch.layer_dims;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    m.encoder.push_back(make(dims[i], dims[i + 1], last && !arch.relu_on_embedding ? Activation::identity
                                                                                    : Activation::relu));
  }
  m.classifier = make(arch.embed_dim(), arch.classes, Activation::identity);
  return m;
}

// Embeddings f(x), before any normalization.
template <typename T>
Tensor<T> encode(const Model<T>& model, const Tensor<T>& batch) {
  if (batch.rank() != 2 || batch.shape()[1] != model.input_dim())
    throw DimensionError("encode: batch shape " + shape_str(batch.shape()) + " does not match input width " +
                         std::to_string(model.input_dim()));
  Tensor<T> h = batch;
  for (const auto& l : model.encoder) h = l.forward(h);
  return h;
}

template <typename T>
Tensor<T> logits(const Model<T>& model, const Tensor<T>& embeddings) {
  if (embeddings.rank() != 2 || embeddings.shape()[1] != model.embed_dim())
    throw DimensionError("classify: embedding shape " + shape_str(embeddings.shape()) +
                         " does not match width " + std::to_string(model.embed_dim()));
  return model.classifier.forward(embeddings);
}

// Class probabilities g(f(x)), softmax over rows.
template <typename T>
Tensor<T> classify(const Model<T>& model, const Tensor<T>& embeddings) {
  return softmax_rows(logits(model, embeddings));
}

// Rows `index` of an n×d float matrix as a constant tensor.
template <typename T>
Tensor<T> gather_rows(std::span<const float> features, std::size_t d, std::span<const std::size_t> index) {
  std::vector<T> v(index.size() * d);
  for (std::size_t r = 0; r < index.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) v[r * d + c] = static_cast<T>(features[index[r] * d + c]);
  return Tensor<T>::matrix(index.size(), d, std::move(v));
}

template <typename T>
Tensor<T> as_matrix(std::span<const float> features, std::size_t d) {
  std::vector<T> v(features.begin(), features.end());
  return Tensor<T>::matrix(d == 0 ? 0 : features.size() / d, d, std::move(v));
}

// Forward pass outputs of a model on a batch, cut from autodiff.
template <typename T>
struct Outputs {
  Tensor<T> embeddings;
  Tensor<T> logits;
  Tensor<T> probs;
};

template <typename T>
Outputs<T> infer(const Model<T>& model, const Tensor<T>& batch) {
  const auto m = model.frozen();
  Outputs<T> o;
  o.embeddings = encode(m, batch.detach());
  o.logits = logits(m, o.embeddings);
  o.probs = softmax_rows(o.logits);
  return o;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  bool operator==(const AdamState&) const = default;
};

template <typename T>
AdamState<T> make_adam(const Model<T>& model, AdamConfig cfg = {}) {
  AdamState<T> s;
  s.config = cfg;
  for (const auto& p : model.parameters()) {
    s.m.emplace_back(p.numel(), T(0));
    s.v.emplace_back(p.numel(), T(0));
  }
  return s;
}

// One bias-corrected Adam update using the gradients stored on `params`.
// Every parameter must carry a gradient.
template <typename T>
void adam_step(AdamState<T>& state, std::vector<Tensor<T>> params) {
  if (params.size() != state.m.size()) throw ContractError("adam_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw ContractError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    if (params[i].numel() != state.m[i].size()) throw DimensionError("adam_step: parameter shape changed");
  }
  state.step += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step_size = static_cast<T>(c.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
}

// Two models θ0, θ1 of the same architecture with separate storage and optimizer state.
template <typename T>
struct ModelPair {
  Architecture arch;
  std::array<Model<T>, 2> models;
  std::array<AdamState<T>, 2> optimizers;
};

template <typename T>
ModelPair<T> init_pair(std::uint64_t seed0, std::uint64_t seed1, const Architecture& arch, AdamConfig adam = {}) {
  if (seed0 == seed1) throw ConfigError("init_pair: the two models need distinct seeds");
  ModelPair<T> p;
  p.arch = arch;
  p.models = {init_model<T>(arch, seed0), init_model<T>(arch, seed1)};
  p.optimizers = {make_adam(p.models[0], adam), make_adam(p.models[1], adam)};
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline std::vector<std::string> parameter_names(const Architecture& arch, int which) {
  std::vector<std::string> names;
  const std::string pre = "model" + std::to_string(which) + ".";
  for (std::size_t i = 0; i + 1 < arch.layer_dims.size(); ++i) {
    names.push_back(pre + "enc" + std::to_string(i) + ".weight");
    names.push_back(pre + "enc" + std::to_string(i) + ".bias");
  }
  names.push_back(pre + "cls.weight");
  names.push_back(pre + "cls.bias");
  return names;
}

// Writes both models' parameters as f32 arrays with the architecture and step in the header.
template <typename T>
void save_checkpoint(const ModelPair<T>& pair, const std::string& path) {
  Container c;
  c.n = 0;
  c.d = pair.arch.input_dim();
  c.classes = pair.arch.classes;
  c.extra["kind"] = "checkpoint";
  c.extra["layer_dims"] = pair.arch.layer_dims;
  c.extra["relu_on_embedding"] = pair.arch.relu_on_embedding;
  c.extra["step"] = std::array<std::uint64_t, 2>{pair.optimizers[0].step, pair.optimizers[1].step};
  for (int k = 0; k < 2; ++k) {
    auto names = parameter_names(pair.arch, k);
    auto params = pair.models[static_cast<std::size_t>(k)].parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::vector<float> v(params[i].values().begin(), params[i].values().end());
      c.arrays.push_back(ContainerArray::of(names[i], DType::f32, params[i].shape(), v));
    }
  }
  write_container(path, c);
}

// Restores parameters and step counters. Optimizer moments start from zero.
template <typename T>
ModelPair<T> load_checkpoint(const std::string& path, AdamConfig adam = {}) {
  Container c = read_container(path);
  if (c.extra.value("kind", std::string{}) != "checkpoint") throw FormatError("checkpoint: not a checkpoint file");
  Architecture arch;
  try {
    arch.layer_dims = c.extra.at("layer_dims").get<std::vector<std::size_t>>();
    arch.relu_on_embedding = c.extra.value("relu_on_embedding", false);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  arch.classes = c.classes;
  arch.validate();
  ModelPair<T> pair;
  pair.arch = arch;
  for (int k = 0; k < 2; ++k) {
    auto& model = pair.models[static_cast<std::size_t>(k)];
    model = init_model<T>(arch, static_cast<std::uint64_t>(k) + 1);
    auto names = parameter_names(arch, k);
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& a = c.get(names[i]);
      if (a.shape != params[i].shape()) throw FormatError("checkpoint: '" + names[i] + "' has wrong shape");
      auto v = a.as<float>();
      auto dst = params[i].mutable_data();
      for (std::size_t j = 0; j < v.size(); ++j) dst[j] = static_cast<T>(v[j]);
    }
    pair.optimizers[static_cast<std::size_t>(k)] = make_adam(model, adam);
  }
  if (c.extra.contains("step")) {
    auto steps = c.extra["step"].get<std::vector<std::uint64_t>>();
    if (steps.size() == 2) {
      pair.optimizers[0].step = steps[0];
      pair.optimizers[1].step = steps[1];
    }
  }
  return pair;
}

}  // namespace ccl
