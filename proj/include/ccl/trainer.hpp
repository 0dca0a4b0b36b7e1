#pragma once

// Training loops: cross-entropy warm-up, collaborative cross learning, the
// RoLR baseline and plain cross-entropy, plus the experiment driver.
//
// Randomness per epoch is keyed on (stream seed, epoch, model index, sample
// index) so results do not depend on the order in which models are visited.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccl/augment.hpp"
#include "ccl/config.hpp"
#include "ccl/data.hpp"
#include "ccl/losses.hpp"
#include "ccl/metrics.hpp"
#include "ccl/model.hpp"
#include "ccl/refurbish.hpp"
#include "ccl/rng.hpp"

namespace ccl {

// Mean over coordinates of the per-coordinate standard deviation.
inline double mean_feature_sd(const TrainView& ds) {
  const std::size_t n = ds.size(), d = ds.dim();
  if (n < 2) return 0.0;
  double total = 0;
  for (std::size_t k = 0; k < d; ++k) {
    double mu = 0, ss = 0;
    for (std::size_t i = 0; i < n; ++i) mu += ds.row(i)[k];
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) ss += (ds.row(i)[k] - mu) * (ds.row(i)[k] - mu);
    total += std::sqrt(ss / static_cast<double>(n));
  }
  return total / static_cast<double>(d);
}

struct ViewPolicies {
  AugmentPolicy weak;
  AugmentPolicy strong;
};

inline ViewPolicies make_policies(const TrainConfig& cfg, double feature_sd) {
  ViewPolicies p{AugmentPolicy::weak(cfg.weak_jitter * feature_sd),
                 AugmentPolicy::strong(cfg.strong_jitter * feature_sd, cfg.strong_ops, cfg.strong_magnitude,
                                       cfg.mask_fraction)};
  p.weak.image = cfg.image;
  p.strong.image = cfg.image;
  p.weak.validate();
  p.strong.validate();
  return p;
}

// What one model did during one epoch.
struct ModelEpochStats {
  LossBreakdown loss;          // sample-weighted mean over the epoch's batches
  double reconcile_err = 0;    // max |composed − total| over the epoch's steps
  std::size_t steps = 0;
  std::optional<GmmParams> gmm;
  bool degenerate_fit = false;
  std::vector<double> losses;  // per-sample losses fed to the mixture
  std::vector<double> omega;   // confidence used this epoch, train order
  RefurbishedLabels refurbished;  // train order; empty during warm-up and plain CE
};

struct EpochResult {
  int epoch = 0;
  std::string phase;
  std::array<ModelEpochStats, 2> models;
  std::vector<std::string> warnings;
  std::uint64_t shuffle_seed = 0;
  std::uint64_t augment_seed = 0;
};

template <typename T>
class Trainer {
 public:
  Trainer(const TrainView& ds, TrainConfig cfg, SeedStreams seeds)
      : ds_(ds), cfg_(std::move(cfg)), seeds_(seeds), policies_(make_policies(cfg_, mean_feature_sd(ds))) {
    std::vector<std::string> problems;
    validate(cfg_, problems);
    if (!problems.empty()) throw ConfigError("trainer: " + problems.front());
    if (ds_.size() == 0) throw ContractError("trainer: empty train split");
    noisy_.assign(ds_.noisy_labels().begin(), ds_.noisy_labels().end());
  }

  const TrainConfig& config() const { return cfg_; }
  const ViewPolicies& policies() const { return policies_; }

  // Epoch permutation of the train split for model m.
  std::vector<std::size_t> epoch_order(int epoch, int m) const {
    std::vector<std::size_t> order(ds_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seeds_.shuffle, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(m)}));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  // Weak (kind 0) or strong (kind 1) views of the given train rows.
  Tensor<T> views(std::span<const std::size_t> idx, int epoch, int m, int kind) const {
    const std::size_t d = ds_.dim();
    const auto& policy = kind == 0 ? policies_.weak : policies_.strong;
    std::vector<T> v(idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto seed = derive_seed(seeds_.augment, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(m),
                                                     idx[r], static_cast<std::uint64_t>(kind)});
      auto x = apply_view(ds_.row(idx[r]), policy, seed);
      std::copy(x.begin(), x.end(), v.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    return Tensor<T>::matrix(idx.size(), d, std::move(v));
  }

  // Cross-entropy on weak views of the noisy labels, both models.
  EpochResult warmup_epoch(ModelPair<T>& pair, int epoch) const {
    auto r = begin_epoch(epoch, "warmup");
    for (int m = 0; m < 2; ++m) r.models[static_cast<std::size_t>(m)] = ce_epoch(pair, m, epoch);
    return r;
  }

  // Plain cross-entropy baseline; identical to warm-up but reported as its own phase.
  EpochResult train_epoch_ce(ModelPair<T>& pair, int epoch) const {
    auto r = begin_epoch(epoch, "ce");
    for (int m = 0; m < 2; ++m) r.models[static_cast<std::size_t>(m)] = ce_epoch(pair, m, epoch);
    return r;
  }

  // One epoch of collaborative cross learning. Both models read the peer's
  // pre-epoch snapshot, so `order` does not change the outcome.
  EpochResult train_epoch_ccl(ModelPair<T>& pair, int epoch, std::array<int, 2> order = {0, 1}) const {
    auto r = begin_epoch(epoch, "ccl");
    const std::array<Model<T>, 2> snap{pair.models[0].clone(), pair.models[1].clone()};
    for (int m : order) {
      const auto mi = static_cast<std::size_t>(m);
      auto& st = r.models[mi];
      const auto& peer = snap[1 - mi];
      confidence_for(st, peer, epoch, m, r.warnings);
      st.refurbished = empty_labels();
      auto& model = pair.models[mi];
      const auto order_m = epoch_order(epoch, m);
      for (std::size_t start = 0; start < order_m.size(); start += cfg_.batch_size) {
        const std::span<const std::size_t> idx(order_m.data() + start,
                                               std::min(cfg_.batch_size, order_m.size() - start));
        CclBatch<T> b;
        const auto xw = views(idx, epoch, m, 0);
        const auto xs = views(idx, epoch, m, 1);
        b.emb_w = encode(model, xw);
        b.p_w = classify(model, b.emb_w);
        b.emb_s = encode(model, xs);
        b.p_s = classify(model, b.emb_s);
        const auto peer_out = infer(peer, xw);
        b.p_w_peer = peer_out.probs;
        b.emb_w_peer = peer_out.embeddings;
        gather_labels(idx, st.omega, b.noisy, b.omega);
        const auto y = collaborative_labels(std::span<const double>(b.omega), std::span<const int>(b.noisy),
                                            b.p_w_peer, cfg_.loss.sharpen_T, cfg_.loss.sharpen_cross_target);
        b.collab_hard = y.y_hard;
        scatter_labels(st.refurbished, idx, y);
        auto res = total_loss(b, cfg_.loss);
        step(pair, m, res.loss);
        accumulate(st, res.parts, idx.size());
      }
      finish(st);
    }
    return r;
  }

  // RoLR baseline: ω·CE(p_s, ŷ) + (1−ω)·CE(p_s, ỹ) with ỹ the sharpened average of
  // both snapshots' weak predictions.
  EpochResult train_epoch_rolr(ModelPair<T>& pair, int epoch) const {
    auto r = begin_epoch(epoch, "rolr");
    const std::array<Model<T>, 2> snap{pair.models[0].clone(), pair.models[1].clone()};
    for (int m = 0; m < 2; ++m) {
      const auto mi = static_cast<std::size_t>(m);
      auto& st = r.models[mi];
      confidence_for(st, snap[1 - mi], epoch, m, r.warnings);
      st.refurbished = empty_labels();
      auto& model = pair.models[mi];
      const auto order_m = epoch_order(epoch, m);
      for (std::size_t start = 0; start < order_m.size(); start += cfg_.batch_size) {
        const std::span<const std::size_t> idx(order_m.data() + start,
                                               std::min(cfg_.batch_size, order_m.size() - start));
        const auto xw = views(idx, epoch, m, 0);
        const auto xs = views(idx, epoch, m, 1);
        const auto pseudo =
            rolr_pseudo_labels(infer(snap[0], xw).probs, infer(snap[1], xw).probs, static_cast<T>(cfg_.loss.sharpen_T));
        std::vector<int> noisy;
        std::vector<double> omega;
        gather_labels(idx, st.omega, noisy, omega);
        const auto y = collaborative_labels(std::span<const double>(omega), std::span<const int>(noisy), pseudo,
                                            cfg_.loss.sharpen_T, false);
        scatter_labels(st.refurbished, idx, y);

        const auto p_s = classify(model, encode(model, xs));
        const auto ce = cross_entropy_per_sample(p_s, std::span<const int>(noisy));
        const auto pce = cross_entropy_per_sample(p_s, pseudo);
        auto loss = rolr_loss(p_s, std::span<const int>(noisy), std::span<const double>(omega), pseudo);
        LossBreakdown parts;
        parts.ce = detail::weighted_mean(ce, omega, false);
        parts.pseudo = detail::weighted_mean(pce, omega, true);
        parts.total = static_cast<double>(loss.item());
        step(pair, m, loss);
        accumulate(st, parts, idx.size());
      }
      finish(st);
    }
    return r;
  }

  // Warm-up below W, then the configured method.
  EpochResult run_epoch(ModelPair<T>& pair, int epoch) const {
    if (epoch < cfg_.warmup) return warmup_epoch(pair, epoch);
    switch (cfg_.method) {
      case Method::ccl: return train_epoch_ccl(pair, epoch);
      case Method::rolr: return train_epoch_rolr(pair, epoch);
      case Method::ce: return train_epoch_ce(pair, epoch);
    }
    return warmup_epoch(pair, epoch);
  }

 private:
  EpochResult begin_epoch(int epoch, const char* phase) const {
    EpochResult r;
    r.epoch = epoch;
    r.phase = phase;
    r.shuffle_seed = derive_seed(seeds_.shuffle, {static_cast<std::uint64_t>(epoch)});
    r.augment_seed = derive_seed(seeds_.augment, {static_cast<std::uint64_t>(epoch)});
    return r;
  }

  ModelEpochStats ce_epoch(ModelPair<T>& pair, int m, int epoch) const {
    ModelEpochStats st;
    auto& model = pair.models[static_cast<std::size_t>(m)];
    const auto order = epoch_order(epoch, m);
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg_.batch_size, order.size() - start));
      std::vector<int> y(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) y[r] = noisy_[idx[r]];
      auto loss = cross_entropy(classify(model, encode(model, views(idx, epoch, m, 0))), std::span<const int>(y));
      LossBreakdown parts;
      parts.ce = parts.total = static_cast<double>(loss.item());
      step(pair, m, loss);
      accumulate(st, parts, idx.size());
    }
    finish(st);
    return st;
  }

  void confidence_for(ModelEpochStats& st, const Model<T>& peer, int epoch, int m,
                      std::vector<std::string>& warnings) const {
    if (cfg_.omega_override) {
      st.omega.assign(ds_.size(), *cfg_.omega_override);
      return;
    }
    const auto seed = derive_seed(seeds_.augment, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(m), 2});
    auto est = estimate_confidence(peer, ds_, cfg_.confidence, policies_.weak, seed);
    st.losses = std::move(est.losses);
    st.omega = std::move(est.omega);
    st.gmm = std::move(est.gmm);
    if (!st.gmm) {
      st.degenerate_fit = true;
      warnings.push_back("model" + std::to_string(m) + ": degenerate mixture fit, confidence set to 0.5");
    }
  }

  RefurbishedLabels empty_labels() const {
    RefurbishedLabels y;
    y.n = ds_.size();
    y.classes = ds_.classes();
    y.y_soft.assign(y.n * y.classes, 0.0);
    y.y_hard.assign(y.n, -1);
    return y;
  }

  void gather_labels(std::span<const std::size_t> idx, const std::vector<double>& omega_all, std::vector<int>& noisy,
                     std::vector<double>& omega) const {
    noisy.resize(idx.size());
    omega.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      noisy[r] = noisy_[idx[r]];
      omega[r] = omega_all[idx[r]];
    }
  }

  static void scatter_labels(RefurbishedLabels& all, std::span<const std::size_t> idx, const RefurbishedLabels& b) {
    const std::size_t C = all.classes;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      all.y_hard[idx[r]] = b.y_hard[r];
      std::copy_n(b.y_soft.begin() + static_cast<std::ptrdiff_t>(r * C), C,
                  all.y_soft.begin() + static_cast<std::ptrdiff_t>(idx[r] * C));
    }
  }

  void step(ModelPair<T>& pair, int m, const Tensor<T>& loss) const {
    auto& model = pair.models[static_cast<std::size_t>(m)];
    model.zero_grad();
    backward(loss);
    adam_step(pair.optimizers[static_cast<std::size_t>(m)], model.parameters());
  }

  static void accumulate(ModelEpochStats& st, const LossBreakdown& parts, std::size_t n) {
    st.loss += parts.scaled(static_cast<double>(n));
    st.reconcile_err = std::max(st.reconcile_err, std::abs(parts.composed() - parts.total));
    st.steps += 1;
  }

  void finish(ModelEpochStats& st) const { st.loss = st.loss.scaled(1.0 / static_cast<double>(ds_.size())); }

  const TrainView& ds_;
  TrainConfig cfg_;
  SeedStreams seeds_;
  ViewPolicies policies_;
  std::vector<int> noisy_;
};

// Runs W warm-up epochs and returns their results.
template <typename T>
std::vector<EpochResult> warmup(ModelPair<T>& pair, const Trainer<T>& trainer, int W) {
  if (W < 0) throw ConfigError("warmup: W must be non-negative");
  std::vector<EpochResult> out;
  for (int e = 0; e < W; ++e) out.push_back(trainer.warmup_epoch(pair, e));
  return out;
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

// One line of epochs.jsonl.
struct EpochRecord {
  int epoch = 0;
  std::string phase;
  bool evaluated = false;
  std::array<std::optional<double>, 2> accuracy;
  std::optional<double> accuracy_ensemble;
  std::array<LossBreakdown, 2> loss;
  std::array<double, 2> reconcile_err{};
  std::optional<double> m_embed;
  std::optional<double> m_logit;
  std::optional<double> variance_entropy;
  std::optional<double> lca;
  std::array<std::optional<double>, 2> label_recovery;
  std::array<std::optional<double>, 2> omega_mean;
  std::array<std::optional<double>, 2> omega_clean_mean;
  std::array<std::optional<double>, 2> omega_noisy_mean;
  std::array<std::optional<double>, 2> gmm_mean_low;
  std::array<std::optional<double>, 2> gmm_mean_high;
  std::vector<std::string> warnings;
  std::uint64_t shuffle_seed = 0;
  std::uint64_t augment_seed = 0;
  double wall_time_s = 0;
};

namespace detail {

inline nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json opt2(const std::array<std::optional<double>, 2>& v) {
  return nlohmann::ordered_json::array({opt(v[0]), opt(v[1])});
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const LossBreakdown& b) {
  return {{"total", b.total}, {"ce", b.ce},       {"pg", b.pg},   {"acl", b.acl},   {"vm", b.vm},
          {"xce", b.xce},     {"cclrl", b.cclrl}, {"mm", b.mm},   {"div", b.div},   {"cvl", b.cvl},
          {"cml", b.cml},     {"pseudo", b.pseudo}};
}

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["phase"] = r.phase;
  j["evaluated"] = r.evaluated;
  j["accuracy"] = {{"model0", detail::opt(r.accuracy[0])},
                   {"model1", detail::opt(r.accuracy[1])},
                   {"ensemble", detail::opt(r.accuracy_ensemble)}};
  j["loss"] = nlohmann::ordered_json::array({to_json(r.loss[0]), to_json(r.loss[1])});
  j["reconcile_err"] = r.reconcile_err;
  j["metrics"] = {{"m_embed", detail::opt(r.m_embed)},
                  {"m_logit", detail::opt(r.m_logit)},
                  {"variance_entropy", detail::opt(r.variance_entropy)},
                  {"lca", detail::opt(r.lca)},
                  {"label_recovery", detail::opt2(r.label_recovery)},
                  {"omega_mean", detail::opt2(r.omega_mean)},
                  {"omega_clean_mean", detail::opt2(r.omega_clean_mean)},
                  {"omega_noisy_mean", detail::opt2(r.omega_noisy_mean)},
                  {"gmm_mean_low", detail::opt2(r.gmm_mean_low)},
                  {"gmm_mean_high", detail::opt2(r.gmm_mean_high)}};
  std::string w;
  for (const auto& s : r.warnings) w += (w.empty() ? "" : "; ") + s;
  j["warnings"] = w;
  j["rng"] = {{"shuffle", r.shuffle_seed}, {"augment", r.augment_seed}};
  j["wall_time_s"] = r.wall_time_s;
  return j;
}

struct Summary {
  std::size_t epochs_recorded = 0;
  std::size_t averaged_over = 0;            // records in the final-accuracy mean
  std::optional<double> final_accuracy;     // mean ensemble accuracy over those records
  std::array<std::optional<double>, 2> final_accuracy_model;
  std::optional<EpochRecord> last;          // metrics at the final evaluated epoch
};

// Mean of the last min(10, E−W) evaluated main-loop records; warm-up records
// stand in when there is no main loop.
inline Summary summarize(const std::vector<EpochRecord>& records, int warmup_epochs) {
  Summary s;
  s.epochs_recorded = records.size();
  std::vector<const EpochRecord*> main, warm;
  for (const auto& r : records) {
    if (!r.evaluated) continue;
    (r.epoch >= warmup_epochs ? main : warm).push_back(&r);
  }
  auto& pool = main.empty() ? warm : main;
  if (pool.empty()) return s;
  const std::size_t k = main.empty() ? 1 : std::min<std::size_t>(10, pool.size());
  double acc = 0;
  std::array<double, 2> per{};
  for (std::size_t i = pool.size() - k; i < pool.size(); ++i) {
    acc += *pool[i]->accuracy_ensemble;
    for (int m = 0; m < 2; ++m) per[static_cast<std::size_t>(m)] += *pool[i]->accuracy[static_cast<std::size_t>(m)];
  }
  s.averaged_over = k;
  s.final_accuracy = acc / static_cast<double>(k);
  for (int m = 0; m < 2; ++m) s.final_accuracy_model[static_cast<std::size_t>(m)] = per[static_cast<std::size_t>(m)] / static_cast<double>(k);
  s.last = *pool.back();
  return s;
}

inline nlohmann::ordered_json to_json(const Summary& s) {
  nlohmann::ordered_json j;
  j["epochs_recorded"] = s.epochs_recorded;
  j["averaged_over"] = s.averaged_over;
  j["final_accuracy"] = detail::opt(s.final_accuracy);
  j["final_accuracy_model"] = detail::opt2(s.final_accuracy_model);
  j["final_metrics"] = s.last ? to_json(*s.last)["metrics"] : nlohmann::ordered_json(nullptr);
  return j;
}

// Builds the dataset an experiment trains on: generated or loaded, then noised.
inline LabeledDataset build_dataset(const ExperimentConfig& cfg, const SeedStreams& seeds) {
  LabeledDataset ds = cfg.data.source == "container"
                          ? load_container(cfg.data.path)
                          : gen_blobs(cfg.data.classes, cfg.data.n_per_class, cfg.data.dim, cfg.data.separation,
                                      cfg.data.spread, seeds.data, cfg.data.test_fraction);
  if (cfg.noise.kind == "none") return ds;
  if (cfg.noise.kind == "instance") return inject_instance_noise(ds, cfg.noise.tau0, seeds.noise, cfg.noise.rate_sd);
  const auto kind = cfg.noise.kind == "pair" ? NoiseKind::pair : NoiseKind::symmetric;
  std::optional<std::vector<std::size_t>> map;
  if (!cfg.noise.pair_map.empty()) map = cfg.noise.pair_map;
  return inject_label_noise(ds, build_transition_matrix(kind, cfg.noise.tau0, ds.classes, map), seeds.noise);
}

// Evaluation-side view of an epoch: accuracy and contamination diagnostics.
// This is the only place clean labels meet training output.
template <typename T>
EpochRecord evaluate_epoch(const ModelPair<T>& pair, const LabeledDataset& ds, const EpochResult& er,
                           const ExperimentConfig& cfg, const SeedStreams& seeds,
                           const std::optional<Taxonomy>& taxonomy) {
  EpochRecord r;
  r.epoch = er.epoch;
  r.phase = er.phase;
  r.evaluated = true;
  r.warnings = er.warnings;
  r.shuffle_seed = er.shuffle_seed;
  r.augment_seed = er.augment_seed;
  for (std::size_t m = 0; m < 2; ++m) {
    r.loss[m] = er.models[m].loss;
    r.reconcile_err[m] = er.models[m].reconcile_err;
  }

  const auto test = split_data(ds, Split::test);
  const auto x = as_matrix<T>(test.features, test.d);
  const auto o0 = infer(pair.models[0], x);
  const auto o1 = infer(pair.models[1], x);
  r.accuracy[0] = accuracy_of(argmax_rows(o0.probs), test.labels);
  r.accuracy[1] = accuracy_of(argmax_rows(o1.probs), test.labels);
  const auto p_ens = scalar_mul(add(o0.probs, o1.probs), T(0.5));
  r.accuracy_ensemble = accuracy_of(argmax_rows(p_ens), test.labels);

  const auto train = ds.indices_of(Split::train);
  for (std::size_t m = 0; m < 2; ++m) {
    const auto& st = er.models[m];
    if (!st.refurbished.y_hard.empty()) r.label_recovery[m] = label_recovery_rate(st.refurbished, ds);
    if (!st.omega.empty()) {
      double all = 0, clean = 0, noisy = 0;
      std::size_t nc = 0, nn = 0;
      for (std::size_t k = 0; k < train.size(); ++k) {
        all += st.omega[k];
        if (ds.noisy_labels[train[k]] == ds.clean_labels[train[k]])
          clean += st.omega[k], ++nc;
        else
          noisy += st.omega[k], ++nn;
      }
      r.omega_mean[m] = all / static_cast<double>(train.size());
      if (nc) r.omega_clean_mean[m] = clean / static_cast<double>(nc);
      if (nn) r.omega_noisy_mean[m] = noisy / static_cast<double>(nn);
    }
    if (st.gmm) {
      r.gmm_mean_low[m] = st.gmm->means[0];
      r.gmm_mean_high[m] = st.gmm->means[1];
    }
  }

  if (cfg.metrics.enabled) {
    r.m_embed = m_embed(std::span<const float>(test.features), test.d, pair.models[0], pair.models[1],
                        cfg.metrics.m_embed_pairs, derive_seed(seeds.metrics, {static_cast<std::uint64_t>(er.epoch)}))
                    .value;
    r.m_logit = m_logit(o0.logits, o1.logits);
    const bool logits_var = cfg.metrics.variance_of == "logits";
    r.variance_entropy = 0.5 * (class_variance_entropy(logits_var ? o0.logits : o0.probs) +
                                class_variance_entropy(logits_var ? o1.logits : o1.probs));
    if (taxonomy) {
      auto names = cfg.metrics.class_names.empty() ? taxonomy->classes() : cfg.metrics.class_names;
      if (names.empty())
        for (std::size_t c = 0; c < ds.classes; ++c) names.push_back(std::to_string(c));
      const auto [top1, top2] = top2_rows(p_ens);
      r.lca = lca_distance(*taxonomy, names, top1, top2);
    }
  }
  return r;
}

template <typename T>
struct ExperimentResult {
  LabeledDataset dataset;
  ModelPair<T> pair;
  std::vector<EpochRecord> records;
  Summary summary;
};

using EpochCallback = std::function<void(const EpochRecord&, const EpochResult&, const LabeledDataset&)>;

// Data → noise → two models → warm-up → main loop, one record per evaluated epoch.
template <typename T>
ExperimentResult<T> run_experiment(const ExperimentConfig& cfg, std::uint64_t master_seed,
                                   const EpochCallback& on_epoch = {}) {
  validate(cfg);
  const auto seeds = SeedStreams::from_master(master_seed);
  ExperimentResult<T> out;
  out.dataset = build_dataset(cfg, seeds);
  if (out.dataset.indices_of(Split::test).empty()) throw ConfigError("data: the test split is empty");
  std::optional<Taxonomy> taxonomy;
  if (!cfg.metrics.taxonomy.empty()) taxonomy = Taxonomy::load(cfg.metrics.taxonomy);

  const TrainView view(out.dataset);
  const Trainer<T> trainer(view, cfg.train, seeds);
  out.pair = init_pair<T>(seeds.init0, seeds.init1, cfg.architecture(out.dataset.d, out.dataset.classes),
                          cfg.train.adam);
  const int E = cfg.train.epochs;
  for (int e = 0; e < E; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto er = trainer.run_epoch(out.pair, e);
    const bool eval = (e + 1) % cfg.train.eval_every == 0 || e + 1 == E || e + 1 == cfg.train.warmup;
    EpochRecord rec;
    if (eval) {
      rec = evaluate_epoch(out.pair, out.dataset, er, cfg, seeds, taxonomy);
    } else {
      rec.epoch = er.epoch;
      rec.phase = er.phase;
      rec.warnings = er.warnings;
      rec.shuffle_seed = er.shuffle_seed;
      rec.augment_seed = er.augment_seed;
      for (std::size_t m = 0; m < 2; ++m) {
        rec.loss[m] = er.models[m].loss;
        rec.reconcile_err[m] = er.models[m].reconcile_err;
      }
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.records.push_back(rec);
    if (on_epoch) on_epoch(rec, er, out.dataset);
  }
  out.summary = summarize(out.records, cfg.train.warmup);
  return out;
}

}  // namespace ccl
