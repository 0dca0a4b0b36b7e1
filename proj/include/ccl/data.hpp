#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ccl/container.hpp"
#include "ccl/errors.hpp"
#include "ccl/rng.hpp"

namespace ccl {

enum class Split : std::uint8_t { train = 0, test = 1 };

// Features plus clean and noisy labels. Clean labels exist for evaluation only.
struct LabeledDataset {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t classes = 0;
  std::vector<float> features;  // n×d row-major
  std::vector<std::int32_t> clean_labels;
  std::vector<std::int32_t> noisy_labels;
  std::vector<Split> split;
  bool noise_applied = false;
  std::string noise_description;

  std::span<const float> row(std::size_t i) const { return {features.data() + i * d, d}; }

  std::vector<std::size_t> indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  void validate() const {
    if (features.size() != n * d) throw FormatError("dataset: feature count does not match n*d");
    if (clean_labels.size() != n || noisy_labels.size() != n || split.size() != n)
      throw FormatError("dataset: label arrays do not match n");
    for (std::size_t i = 0; i < n; ++i) {
      if (clean_labels[i] < 0 || static_cast<std::size_t>(clean_labels[i]) >= classes ||
          noisy_labels[i] < 0 || static_cast<std::size_t>(noisy_labels[i]) >= classes)
        throw FormatError("dataset: label out of range at sample " + std::to_string(i));
      if (split[i] != Split::train && split[i] != Split::test)
        throw FormatError("dataset: bad split tag at sample " + std::to_string(i));
      if (split[i] == Split::test && noisy_labels[i] != clean_labels[i])
        throw FormatError("dataset: test sample " + std::to_string(i) + " carries a noisy label");
    }
  }

  bool operator==(const LabeledDataset&) const = default;
};

// What the trainer is allowed to see: train features and noisy labels only.
class TrainView {
 public:
  explicit TrainView(const LabeledDataset& ds) : d_(ds.d), classes_(ds.classes) {
    for (std::size_t i = 0; i < ds.n; ++i) {
      if (ds.split[i] != Split::train) continue;
      auto r = ds.row(i);
      features_.insert(features_.end(), r.begin(), r.end());
      noisy_.push_back(ds.noisy_labels[i]);
    }
  }

  std::size_t size() const { return noisy_.size(); }
  std::size_t dim() const { return d_; }
  std::size_t classes() const { return classes_; }
  std::span<const float> row(std::size_t i) const { return {features_.data() + i * d_, d_}; }
  std::int32_t noisy_label(std::size_t i) const { return noisy_[i]; }
  std::span<const std::int32_t> noisy_labels() const { return noisy_; }
  std::span<const float> features() const { return features_; }

 private:
  std::size_t d_;
  std::size_t classes_;
  std::vector<float> features_;
  std::vector<std::int32_t> noisy_;
};

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> place_class_means(std::size_t classes, std::size_t dim, double separation,
                                             Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> means(classes * dim, 0.0);
  if (classes <= dim) {
    // Random orthonormal frame scaled so every pair sits exactly `separation` apart.
    for (std::size_t c = 0; c < classes; ++c) {
      double* v = means.data() + c * dim;
      for (;;) {
        for (std::size_t k = 0; k < dim; ++k) v[k] = normal(rng);
        for (std::size_t p = 0; p < c; ++p) {
          const double* u = means.data() + p * dim;
          double dot = 0;
          for (std::size_t k = 0; k < dim; ++k) dot += u[k] * v[k];
          for (std::size_t k = 0; k < dim; ++k) v[k] -= dot * u[k];
        }
        double nrm = 0;
        for (std::size_t k = 0; k < dim; ++k) nrm += v[k] * v[k];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-6) continue;
        for (std::size_t k = 0; k < dim; ++k) v[k] /= nrm;
        break;
      }
    }
    const double scale = separation / std::sqrt(2.0);
    for (auto& x : means) x *= scale;
    return means;
  }
  // More classes than dimensions: rejection sampling in a growing cube.
  double half_width = separation;
  std::size_t placed = 0;
  int failures = 0;
  std::vector<double> cand(dim);
  while (placed < classes) {
    std::uniform_real_distribution<double> u(-half_width, half_width);
    for (auto& x : cand) x = u(rng);
    bool ok = true;
    for (std::size_t p = 0; p < placed && ok; ++p) {
      double d2 = 0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = cand[k] - means[p * dim + k];
        d2 += diff * diff;
      }
      ok = d2 >= separation * separation;
    }
    if (ok) {
      std::copy(cand.begin(), cand.end(), means.begin() + static_cast<std::ptrdiff_t>(placed * dim));
      ++placed;
      failures = 0;
    } else if (++failures > 1000) {
      half_width *= 1.5;
      failures = 0;
    }
  }
  return means;
}

}  // namespace detail

// Gaussian clusters, one per class, means pairwise at least `separation` apart.
// A `test_fraction` share of every class is tagged as the test split.
inline LabeledDataset gen_blobs(std::size_t classes, std::size_t n_per_class, std::size_t dim,
                                double separation, double spread, std::uint64_t seed,
                                double test_fraction = 0.2) {
  if (classes < 2) throw ConfigError("gen_blobs: need at least 2 classes");
  if (dim < 2) throw ConfigError("gen_blobs: need dim >= 2");
  if (!(separation > 0)) throw ConfigError("gen_blobs: separation must be positive");
  if (!(spread >= 0)) throw ConfigError("gen_blobs: spread must be non-negative");
  if (n_per_class == 0) throw ConfigError("gen_blobs: empty class (n_per_class = 0)");
  if (!(test_fraction >= 0 && test_fraction < 1)) throw ConfigError("gen_blobs: test_fraction must lie in [0,1)");

  Rng rng(seed);
  const auto means = detail::place_class_means(classes, dim, separation, rng);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t n = classes * n_per_class;
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n_per_class)));
  std::vector<float> feats(n * dim);
  std::vector<std::int32_t> labels(n);
  std::vector<Split> split(n);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> local(n_per_class);
    std::iota(local.begin(), local.end(), 0);
    std::shuffle(local.begin(), local.end(), rng);
    for (std::size_t k = 0; k < n_per_class; ++k) {
      const std::size_t i = c * n_per_class + k;
      labels[i] = static_cast<std::int32_t>(c);
      split[i] = local[k] < n_test ? Split::test : Split::train;
      for (std::size_t j = 0; j < dim; ++j)
        feats[i * dim + j] = static_cast<float>(means[c * dim + j] + spread * normal(rng));
    }
  }
  // Interleave classes.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  LabeledDataset ds;
  ds.n = n;
  ds.d = dim;
  ds.classes = classes;
  ds.features.resize(n * dim);
  ds.clean_labels.resize(n);
  ds.split.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    std::copy_n(feats.begin() + static_cast<std::ptrdiff_t>(src * dim), dim,
                ds.features.begin() + static_cast<std::ptrdiff_t>(k * dim));
    ds.clean_labels[k] = labels[src];
    ds.split[k] = split[src];
  }
  ds.noisy_labels = ds.clean_labels;
  return ds;
}

// ---------------------------------------------------------------------------
// Label noise
// ---------------------------------------------------------------------------

enum class NoiseKind { symmetric, pair };

struct TransitionMatrix {
  std::size_t classes = 0;
  NoiseKind kind = NoiseKind::symmetric;
  double tau0 = 0;
  std::vector<double> entries;  // classes×classes, row = clean label

  double at(std::size_t i, std::size_t j) const { return entries[i * classes + j]; }
};

inline std::vector<std::size_t> cyclic_pair_map(std::size_t classes) {
  std::vector<std::size_t> m(classes);
  for (std::size_t i = 0; i < classes; ++i) m[i] = (i + 1) % classes;
  return m;
}

// Symmetric: 1−τ0 on the diagonal, τ0/(C−1) elsewhere.
// Pair: 1−τ0 on the diagonal, τ0 at (i, pair_map[i]), zero elsewhere.
inline TransitionMatrix build_transition_matrix(NoiseKind kind, double tau0, std::size_t classes,
                                                std::optional<std::vector<std::size_t>> pair_map = {}) {
  if (classes < 2) throw ConfigError("transition matrix: need at least 2 classes");
  if (!(tau0 >= 0 && tau0 < 1)) throw ConfigError("transition matrix: tau0 must lie in [0,1)");
  TransitionMatrix t;
  t.classes = classes;
  t.kind = kind;
  t.tau0 = tau0;
  t.entries.assign(classes * classes, 0.0);
  if (kind == NoiseKind::symmetric) {
    const double off = tau0 / static_cast<double>(classes - 1);
    for (std::size_t i = 0; i < classes; ++i)
      for (std::size_t j = 0; j < classes; ++j) t.entries[i * classes + j] = i == j ? 1.0 - tau0 : off;
    return t;
  }
  auto map = pair_map.value_or(cyclic_pair_map(classes));
  if (map.size() != classes) throw ConfigError("transition matrix: pair_map must have C entries");
  std::vector<bool> hit(classes, false);
  for (std::size_t i = 0; i < classes; ++i) {
    if (map[i] >= classes || hit[map[i]]) throw ConfigError("transition matrix: pair_map is not a permutation");
    if (map[i] == i) throw ConfigError("transition matrix: pair_map has fixed point " + std::to_string(i));
    hit[map[i]] = true;
  }
  for (std::size_t i = 0; i < classes; ++i) {
    t.entries[i * classes + i] = 1.0 - tau0;
    t.entries[i * classes + map[i]] += tau0;
  }
  return t;
}

// Redraws every train label from row T[clean]. Test labels are untouched.
inline LabeledDataset inject_label_noise(const LabeledDataset& ds, const TransitionMatrix& t,
                                         std::uint64_t seed) {
  if (ds.noise_applied) throw ConfigError("inject_label_noise: dataset already carries injected noise");
  if (t.classes != ds.classes) throw ConfigError("inject_label_noise: transition matrix has wrong class count");
  LabeledDataset out = ds;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (ds.split[i] != Split::train) continue;
    const auto clean = static_cast<std::size_t>(ds.clean_labels[i]);
    const double r = u(rng);
    double acc = 0;
    std::size_t pick = clean;
    for (std::size_t j = 0; j < t.classes; ++j) {
      acc += t.at(clean, j);
      if (r < acc) {
        pick = j;
        break;
      }
    }
    out.noisy_labels[i] = static_cast<std::int32_t>(pick);
  }
  out.noise_applied = true;
  out.noise_description = std::string(t.kind == NoiseKind::symmetric ? "sym" : "pair") +
                          " tau0=" + std::to_string(t.tau0);
  return out;
}

// Instance-dependent noise built from per-sample flip rates and per-class projections.
// 
// Each train sample draws a flip rate q ~ N(tau0, rate_sd²) truncated to [0,1].
// Class projections w_c have i.i.d. standard normal entries. For a sample x with
// clean label y the noisy label keeps y with probability 1−q, otherwise lands on
// c ≠ y with probability q·softmax_{c≠y}(x̂·w_c), x̂ = x/‖x‖.
inline LabeledDataset inject_instance_noise(const LabeledDataset& ds, double tau0, std::uint64_t seed,
                                            double rate_sd = 0.1) {
  if (!(tau0 > 0 && tau0 < 1)) throw ConfigError("inject_instance_noise: tau0 must lie in (0,1)");
  if (!(rate_sd >= 0)) throw ConfigError("inject_instance_noise: rate_sd must be non-negative");
  if (ds.noise_applied) throw ConfigError("inject_instance_noise: dataset already carries injected noise");
  LabeledDataset out = ds;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t C = ds.classes, d = ds.d;
  std::vector<double> w(d * C);
  for (auto& x : w) x = normal(rng);

  std::vector<double> logits(C), probs(C);
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (ds.split[i] != Split::train) continue;
    double q = tau0;
    if (rate_sd > 0) {
      do q = tau0 + rate_sd * normal(rng);
      while (q < 0.0 || q > 1.0);
    }
    const auto y = static_cast<std::size_t>(ds.clean_labels[i]);
    auto x = ds.row(i);
    double nrm = 0;
    for (float v : x) nrm += double(v) * double(v);
    nrm = std::sqrt(nrm);
    const double inv = nrm > 0 ? 1.0 / nrm : 0.0;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      if (c == y) continue;
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += double(x[k]) * inv * w[k * C + c];
      logits[c] = s;
      mx = std::max(mx, s);
    }
    double z = 0;
    for (std::size_t c = 0; c < C; ++c) z += c == y ? 0.0 : (probs[c] = std::exp(logits[c] - mx));
    for (std::size_t c = 0; c < C; ++c) probs[c] = c == y ? 1.0 - q : q * probs[c] / z;
    const double r = u(rng);
    double acc = 0;
    std::size_t pick = y;
    for (std::size_t c = 0; c < C; ++c) {
      acc += probs[c];
      if (r < acc) {
        pick = c;
        break;
      }
    }
    out.noisy_labels[i] = static_cast<std::int32_t>(pick);
  }
  out.noise_applied = true;
  out.noise_description = "ins tau0=" + std::to_string(tau0);
  return out;
}

// ---------------------------------------------------------------------------
// Container I/O
// ---------------------------------------------------------------------------

inline void save_container(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  Container c;
  c.n = ds.n;
  c.d = ds.d;
  c.classes = ds.classes;
  c.extra["noise"] = {{"applied", ds.noise_applied}, {"description", ds.noise_description}};
  c.arrays.push_back(ContainerArray::of("features", DType::f32, {ds.n, ds.d}, ds.features));
  c.arrays.push_back(ContainerArray::of("clean_labels", DType::i32, {ds.n}, ds.clean_labels));
  c.arrays.push_back(ContainerArray::of("noisy_labels", DType::i32, {ds.n}, ds.noisy_labels));
  std::vector<std::uint8_t> split(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) split[i] = static_cast<std::uint8_t>(ds.split[i]);
  c.arrays.push_back(ContainerArray::of("split", DType::u8, {ds.n}, split));
  write_container(path, c);
}

inline LabeledDataset load_container(const std::string& path) {
  Container c = read_container(path);
  LabeledDataset ds;
  ds.n = c.n;
  ds.d = c.d;
  ds.classes = c.classes;
  auto expect_shape = [&](const ContainerArray& a, const Shape& s) {
    if (a.shape != s)
      throw FormatError("dataset: array '" + a.name + "' has shape " + shape_str(a.shape) + ", expected " +
                        shape_str(s));
  };
  const auto& f = c.get("features");
  expect_shape(f, {ds.n, ds.d});
  ds.features = f.as<float>();
  const auto& cl = c.get("clean_labels");
  expect_shape(cl, {ds.n});
  ds.clean_labels = cl.as<std::int32_t>();
  const auto& nl = c.get("noisy_labels");
  expect_shape(nl, {ds.n});
  ds.noisy_labels = nl.as<std::int32_t>();
  const auto& sp = c.get("split");
  expect_shape(sp, {ds.n});
  for (auto b : sp.as<std::uint8_t>()) {
    if (b > 1) throw FormatError("dataset: bad split tag");
    ds.split.push_back(static_cast<Split>(b));
  }
  if (c.extra.contains("noise")) {
    const auto& nz = c.extra["noise"];
    ds.noise_applied = nz.value("applied", false);
    ds.noise_description = nz.value("description", std::string{});
  }
  ds.validate();
  return ds;
}

}  // namespace ccl
