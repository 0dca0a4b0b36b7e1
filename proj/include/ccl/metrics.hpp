#pragma once

// Diagnostics for semantic contamination: accuracy, cross-model embedding and
// logit agreement, per-class variance entropy, taxonomy distance, label
// recovery and the contrastive mutual-information bound.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/losses.hpp"
#include "ccl/model.hpp"
#include "ccl/refurbish.hpp"
#include "ccl/rng.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

// Features and clean labels of one split.
struct SplitData {
  std::size_t d = 0;
  std::vector<float> features;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

inline SplitData split_data(const LabeledDataset& ds, Split s) {
  SplitData out;
  out.d = ds.d;
  for (auto i : ds.indices_of(s)) {
    auto r = ds.row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(ds.clean_labels[i]);
  }
  return out;
}

inline double accuracy_of(const std::vector<int>& predicted, std::span<const int> labels) {
  if (labels.empty()) throw ContractError("accuracy: empty split");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// Fraction of test samples whose argmax prediction equals the clean label.
template <typename T>
double test_accuracy(const Model<T>& model, const LabeledDataset& ds) {
  auto test = split_data(ds, Split::test);
  if (test.size() == 0) throw ContractError("test_accuracy: empty test split");
  auto p = infer(model, as_matrix<T>(test.features, test.d)).probs;
  return accuracy_of(argmax_rows(p), test.labels);
}

// Pair mode: the two models' probabilities are averaged before the argmax.
template <typename T>
double test_accuracy(const Model<T>& m0, const Model<T>& m1, const LabeledDataset& ds) {
  auto test = split_data(ds, Split::test);
  if (test.size() == 0) throw ContractError("test_accuracy: empty test split");
  auto x = as_matrix<T>(test.features, test.d);
  auto p = add(infer(m0, x).probs, infer(m1, x).probs);
  return accuracy_of(argmax_rows(p), test.labels);
}

// ---------------------------------------------------------------------------
// Cross-model agreement
// ---------------------------------------------------------------------------

struct MEmbedResult {
  double value = 0;
  std::size_t pairs_used = 0;
  std::size_t pairs_skipped = 0;  // zero difference vector in either model
};

// Mean cosine between f0(x0)−f0(x1) and f1(x0)−f1(x1) over `n_pairs` random pairs x0 ≠ x1.
template <typename T>
MEmbedResult m_embed(std::span<const float> features, std::size_t d, const Model<T>& model0, const Model<T>& model1,
                     std::size_t n_pairs, std::uint64_t seed) {
  if (n_pairs < 1) throw ConfigError("m_embed: n_pairs must be at least 1");
  const std::size_t n = d == 0 ? 0 : features.size() / d;
  if (n < 2) throw ContractError("m_embed: need at least 2 samples");
  auto x = as_matrix<T>(features, d);
  const auto e0 = infer(model0, x).embeddings;
  const auto e1 = infer(model1, x).embeddings;
  const std::size_t k0 = e0.cols(), k1 = e1.cols();
  const auto& a = e0.values();
  const auto& b = e1.values();
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1), other(0, n - 2);
  MEmbedResult r;
  double total = 0;
  std::vector<double> u(k0), v(k1);
  for (std::size_t t = 0; t < n_pairs; ++t) {
    const std::size_t i = pick(rng);
    std::size_t j = other(rng);
    if (j >= i) ++j;
    double nu = 0, nv = 0;
    for (std::size_t c = 0; c < k0; ++c) {
      u[c] = double(a[i * k0 + c]) - double(a[j * k0 + c]);
      nu += u[c] * u[c];
    }
    for (std::size_t c = 0; c < k1; ++c) {
      v[c] = double(b[i * k1 + c]) - double(b[j * k1 + c]);
      nv += v[c] * v[c];
    }
    if (nu == 0 || nv == 0 || k0 != k1) {
      ++r.pairs_skipped;
      continue;
    }
    double dot = 0;
    for (std::size_t c = 0; c < k0; ++c) dot += u[c] * v[c];
    total += dot / std::sqrt(nu * nv);
    ++r.pairs_used;
  }
  r.value = r.pairs_used ? total / static_cast<double>(r.pairs_used) : 0.0;
  return r;
}

// Per-class 1D Wasserstein-1 distance between logit columns, averaged over classes.
template <typename T>
double m_logit(const Tensor<T>& logits0, const Tensor<T>& logits1) {
  if (logits0.shape() != logits1.shape() || logits0.rank() != 2)
    throw ContractError("m_logit: logit shapes " + shape_str(logits0.shape()) + " and " +
                        shape_str(logits1.shape()) + " differ");
  const std::size_t n = logits0.rows(), C = logits0.cols();
  if (n == 0) throw ContractError("m_logit: empty logits");
  std::vector<double> a(n), b(n);
  double total = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = logits0.values()[i * C + c];
      b[i] = logits1.values()[i * C + c];
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double w = 0;
    for (std::size_t i = 0; i < n; ++i) w += std::abs(a[i] - b[i]);
    total += w / static_cast<double>(n);
  }
  return total / static_cast<double>(C);
}

// Shannon entropy of the normalized per-column variances. log C when all variances vanish.
template <typename T>
double class_variance_entropy(const Tensor<T>& values) {
  if (values.rank() != 2 || values.rows() < 2) throw ContractError("class_variance_entropy: need at least 2 rows");
  const std::size_t n = values.rows(), C = values.cols();
  std::vector<double> var(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += values.values()[i * C + c];
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = values.values()[i * C + c] - mu;
      var[c] += z * z;
    }
    var[c] /= static_cast<double>(n);
  }
  const double total = std::accumulate(var.begin(), var.end(), 0.0);
  if (total <= 0) return std::log(static_cast<double>(C));
  double h = 0;
  for (double v : var)
    if (v > 0) h -= (v / total) * std::log(v / total);
  return h;
}

// ---------------------------------------------------------------------------
// Taxonomy distance
// ---------------------------------------------------------------------------

class Taxonomy {
 public:
  // {"root": name, "children": {parent: [child, ...]}}; an optional "classes"
  // array names the leaves in class-index order.
  static Taxonomy from_json(const nlohmann::json& j) {
    Taxonomy t;
    try {
      t.root_ = j.at("root").get<std::string>();
      for (const auto& [parent, kids] : j.at("children").items())
        for (const auto& k : kids) {
          const auto child = k.get<std::string>();
          if (child == t.root_) throw ConfigError("taxonomy: root '" + child + "' listed as a child");
          if (!t.parent_.emplace(child, parent).second)
            throw ConfigError("taxonomy: node '" + child + "' has two parents");
          t.has_children_[parent] = true;
        }
      if (j.contains("classes")) t.classes_ = j["classes"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("taxonomy: malformed file: ") + e.what());
    }
    for (const auto& [child, parent] : t.parent_) t.depth(child);  // rejects cycles and orphans
    return t;
  }

  static Taxonomy load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("taxonomy: cannot open '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("taxonomy: invalid JSON: ") + e.what());
    }
    return from_json(j);
  }

  const std::string& root() const { return root_; }
  const std::vector<std::string>& classes() const { return classes_; }
  bool is_leaf(const std::string& node) const {
    return (node == root_ || parent_.count(node)) && !has_children_.count(node);
  }

  std::size_t depth(const std::string& node) const {
    std::size_t d = 0;
    std::string cur = node;
    while (cur != root_) {
      auto it = parent_.find(cur);
      if (it == parent_.end()) throw ConfigError("taxonomy: '" + node + "' is not connected to the root");
      cur = it->second;
      if (++d > parent_.size()) throw ConfigError("taxonomy: cycle through '" + node + "'");
    }
    return d;
  }

  std::string lca(const std::string& a, const std::string& b) const {
    std::map<std::string, bool> seen;
    for (std::string cur = a;; cur = parent_.at(cur)) {
      seen[cur] = true;
      if (cur == root_) break;
    }
    for (std::string cur = b;; cur = parent_.at(cur)) {
      if (seen.count(cur)) return cur;
      if (cur == root_) break;
    }
    return root_;
  }

  // Edges from the deeper of the two leaves up to their lowest common ancestor.
  std::size_t distance(const std::string& a, const std::string& b) const {
    for (const auto* s : {&a, &b})
      if (!is_leaf(*s)) throw ConfigError("taxonomy: class '" + *s + "' is not a leaf");
    return std::max(depth(a), depth(b)) - depth(lca(a, b));
  }

 private:
  std::string root_;
  std::map<std::string, std::string> parent_;
  std::map<std::string, bool> has_children_;
  std::vector<std::string> classes_;
};

// Mean taxonomy distance between top-1 and top-2 predicted classes.
inline double lca_distance(const Taxonomy& tax, const std::vector<std::string>& class_names,
                           std::span<const int> top1, std::span<const int> top2) {
  if (top1.size() != top2.size()) throw ContractError("lca_distance: length mismatch");
  if (top1.empty()) return 0.0;
  for (const auto& name : class_names)
    if (!tax.is_leaf(name)) throw ConfigError("lca_distance: class '" + name + "' is absent from the taxonomy");
  double total = 0;
  for (std::size_t i = 0; i < top1.size(); ++i) {
    for (int c : {top1[i], top2[i]})
      if (c < 0 || static_cast<std::size_t>(c) >= class_names.size())
        throw ConfigError("lca_distance: class index " + std::to_string(c) + " has no name");
    total += static_cast<double>(tax.distance(class_names[static_cast<std::size_t>(top1[i])],
                                              class_names[static_cast<std::size_t>(top2[i])]));
  }
  return total / static_cast<double>(top1.size());
}

// Indices of the largest and second-largest entries per row.
template <typename T>
std::pair<std::vector<int>, std::vector<int>> top2_rows(const Tensor<T>& p) {
  const std::size_t n = p.rows(), C = p.cols();
  if (C < 2) throw ContractError("top2_rows: need at least 2 columns");
  std::vector<int> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = p.values().data() + i * C;
    std::size_t f = 0, s = 1;
    if (row[s] > row[f]) std::swap(f, s);
    for (std::size_t c = 2; c < C; ++c) {
      if (row[c] > row[f]) {
        s = f;
        f = c;
      } else if (row[c] > row[s]) {
        s = c;
      }
    }
    a[i] = static_cast<int>(f);
    b[i] = static_cast<int>(s);
  }
  return {a, b};
}

// ---------------------------------------------------------------------------
// Label recovery
// ---------------------------------------------------------------------------

// Among train samples whose noisy label differs from the clean one, the
// fraction whose refurbished hard label equals the clean label. Rows of
// `refurbished` follow the train split order. Absent when nothing is corrupted.
inline std::optional<double> label_recovery_rate(const RefurbishedLabels& refurbished, const LabeledDataset& ds) {
  const auto train = ds.indices_of(Split::train);
  if (refurbished.y_hard.size() != train.size())
    throw DimensionError("label_recovery_rate: refurbished labels do not cover the train split");
  std::size_t corrupted = 0, recovered = 0;
  for (std::size_t k = 0; k < train.size(); ++k) {
    const auto i = train[k];
    if (ds.noisy_labels[i] == ds.clean_labels[i]) continue;
    ++corrupted;
    recovered += refurbished.y_hard[k] == ds.clean_labels[i];
  }
  if (corrupted == 0) return std::nullopt;
  return static_cast<double>(recovered) / static_cast<double>(corrupted);
}

// ---------------------------------------------------------------------------
// Mutual-information bound
// ---------------------------------------------------------------------------

struct MiBoundResult {
  double i_plugin = 0;           // plug-in mutual information of the sampled joint
  double mean_loss = 0;          // mean cross-model contrastive loss
  double log_n_minus_loss = 0;   // log N − mean_loss
  double slack = 0;              // i_plugin − log_n_minus_loss
  bool holds = false;            // slack ≥ −0.02
};

inline constexpr double kMiTolerance = 0.02;

// Discrete toy: a uniform latent over K symbols, both models embed it as its
// one-hot vector. Each batch holds N distinct latents; its loss is the
// cross-model contrastive loss with latents as labels.
inline MiBoundResult mi_bound_check(std::size_t K, std::size_t N, double tau, std::size_t n_batches,
                                    std::uint64_t seed) {
  if (N < 2) throw ConfigError("mi_bound_check: N must be at least 2");
  if (K < N) throw ConfigError("mi_bound_check: K must be at least N");
  if (!(tau > 0)) throw ConfigError("mi_bound_check: tau must be positive");
  if (n_batches < 1) throw ConfigError("mi_bound_check: n_batches must be positive");
  Rng rng(seed);
  std::vector<std::size_t> symbols(K);
  std::vector<double> counts(K, 0.0);
  double loss_sum = 0;
  std::vector<int> labels(N);
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::iota(symbols.begin(), symbols.end(), 0);
    for (std::size_t j = 0; j < N; ++j) {
      std::uniform_int_distribution<std::size_t> u(j, K - 1);
      std::swap(symbols[j], symbols[u(rng)]);
      labels[j] = static_cast<int>(symbols[j]);
      counts[symbols[j]] += 1;
    }
    auto emb = one_hot<double>(labels, K);
    loss_sum += cclrl_loss(emb, emb, std::span<const int>(labels), tau).item();
  }
  // Both views carry the latent itself, so the joint is diagonal and I equals the entropy of the marginal.
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  MiBoundResult r;
  for (double c : counts)
    if (c > 0) r.i_plugin -= (c / total) * std::log(c / total);
  r.mean_loss = loss_sum / static_cast<double>(n_batches);
  r.log_n_minus_loss = std::log(static_cast<double>(N)) - r.mean_loss;
  r.slack = r.i_plugin - r.log_n_minus_loss;
  r.holds = r.slack >= -kMiTolerance;
  return r;
}

}  // namespace ccl
