#pragma once

// Label confidence from the small-loss split and label refurbishment.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccl/augment.hpp"
#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/losses.hpp"
#include "ccl/model.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

enum class LossView { plain, weak };

// ℓ_i = −log p_{ŷ_i} under `peer` for every train sample, in TrainView order.
// The weak view draws sample i's augmentation from derive_seed(seed, {i}).
template <typename T>
std::vector<double> per_sample_losses(const Model<T>& peer, const TrainView& ds, LossView view = LossView::plain,
                                      const AugmentPolicy& weak = {}, std::uint64_t seed = 0) {
  const std::size_t n = ds.size(), d = ds.dim();
  std::vector<float> feats;
  if (view == LossView::weak) {
    feats.reserve(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      auto v = weak_view(ds.row(i), weak, derive_seed(seed, {i}));
      feats.insert(feats.end(), v.begin(), v.end());
    }
  }
  const auto probs = infer(peer, as_matrix<T>(view == LossView::weak ? std::span<const float>(feats) : ds.features(), d)).probs;
  const std::size_t C = probs.cols();
  const auto& p = probs.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(ds.noisy_label(i));
    out[i] = -std::log(std::max(static_cast<double>(p[i * C + y]), 1e-12));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Two-component 1D Gaussian mixture
// ---------------------------------------------------------------------------

struct GmmParams {
  std::array<double, 2> means{};      // means[0] <= means[1]
  std::array<double, 2> variances{};  // floored at 1e-6
  std::array<double, 2> weights{};
  std::vector<double> log_likelihood;  // mean per-sample log-likelihood after each iteration
  int iterations = 0;
  bool converged = false;
};

inline constexpr double kGmmVarianceFloor = 1e-6;

namespace detail {

inline double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline double log_normal_pdf(double x, double mu, double var) {
  const double z = x - mu;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + z * z / var);
}

inline double log_add(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Log of π_k·N(x; μ_k, σ_k²) for both components.
inline std::array<double, 2> component_logs(const GmmParams& g, double x) {
  std::array<double, 2> l{};
  for (int k = 0; k < 2; ++k)
    l[k] = (g.weights[k] > 0 ? std::log(g.weights[k]) : -std::numeric_limits<double>::infinity()) +
           log_normal_pdf(x, g.means[k], g.variances[k]);
  return l;
}

}  // namespace detail

// Mean per-sample log-likelihood of `x` under `g`.
inline double gmm_log_likelihood(const GmmParams& g, std::span<const double> x) {
  double ll = 0;
  for (double v : x) {
    const auto l = detail::component_logs(g, v);
    ll += detail::log_add(l[0], l[1]);
  }
  return x.empty() ? 0.0 : ll / static_cast<double>(x.size());
}

// EM on a two-component mixture. Means start at the 10th and 90th percentiles
// (min and max if those coincide), variances at the pooled variance, weights at
// 1/2. Stops once the mean log-likelihood gains less than `tol`.
inline GmmParams gmm_fit_1d(std::span<const double> x, int max_iters = 100, double tol = 1e-6) {
  if (x.size() < 2) throw ContractError("gmm_fit_1d: need at least 2 values");
  if (max_iters < 1) throw ConfigError("gmm_fit_1d: max_iters must be positive");
  for (double v : x)
    if (!std::isfinite(v)) throw DomainError("gmm_fit_1d: non-finite value");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) throw DegenerateFitError("gmm_fit_1d: all values identical");

  const auto n = static_cast<double>(x.size());
  GmmParams g;
  g.means = {detail::quantile_sorted(sorted, 0.1), detail::quantile_sorted(sorted, 0.9)};
  if (g.means[0] == g.means[1]) g.means = {sorted.front(), sorted.back()};
  double mu = 0, ss = 0;
  for (double v : x) mu += v;
  mu /= n;
  for (double v : x) ss += (v - mu) * (v - mu);
  const double pooled = std::max(ss / n, kGmmVarianceFloor);
  g.variances = {pooled, pooled};
  g.weights = {0.5, 0.5};

  std::vector<double> r0(x.size());
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iters; ++it) {
    // E-step; its log-likelihood belongs to the parameters from the previous M-step.
    double ll = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto l = detail::component_logs(g, x[i]);
      const double lse = detail::log_add(l[0], l[1]);
      r0[i] = std::exp(l[0] - lse);
      ll += lse;
    }
    ll /= n;
    g.log_likelihood.push_back(ll);
    if (it > 0 && ll - prev < tol) {
      g.converged = true;
      break;
    }
    prev = ll;

    // M-step.
    std::array<double, 2> nk{}, sx{}, sxx{};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w[2] = {r0[i], 1.0 - r0[i]};
      for (int k = 0; k < 2; ++k) {
        nk[k] += w[k];
        sx[k] += w[k] * x[i];
      }
    }
    for (int k = 0; k < 2; ++k) {
      if (nk[k] > 0) g.means[k] = sx[k] / nk[k];
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w[2] = {r0[i], 1.0 - r0[i]};
      for (int k = 0; k < 2; ++k) sxx[k] += w[k] * (x[i] - g.means[k]) * (x[i] - g.means[k]);
    }
    for (int k = 0; k < 2; ++k) {
      g.variances[k] = nk[k] > 0 ? std::max(sxx[k] / nk[k], kGmmVarianceFloor) : g.variances[k];
      g.weights[k] = nk[k] / n;
    }
    g.iterations = it + 1;
  }
  if (!g.converged) g.log_likelihood.push_back(gmm_log_likelihood(g, x));
  if (g.means[0] > g.means[1]) {
    std::swap(g.means[0], g.means[1]);
    std::swap(g.variances[0], g.variances[1]);
    std::swap(g.weights[0], g.weights[1]);
  }
  return g;
}

// Posterior of the lower-mean component for every loss value.
inline std::vector<double> confidence(const GmmParams& g, std::span<const double> losses) {
  std::vector<double> omega(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const auto l = detail::component_logs(g, losses[i]);
    omega[i] = 1.0 / (1.0 + std::exp(l[1] - l[0]));
    if (std::isnan(omega[i])) omega[i] = 0.5;
  }
  return omega;
}

// ω for every train sample together with what produced it.
struct ConfidenceEstimate {
  std::vector<double> omega;
  std::vector<double> losses;
  std::optional<GmmParams> gmm;  // absent when the fit was degenerate and ω fell back to 1/2
};

struct ConfidenceOptions {
  LossView view = LossView::plain;
  int max_iters = 100;
  double tol = 1e-6;
};

template <typename T>
ConfidenceEstimate estimate_confidence(const Model<T>& peer, const TrainView& ds, const ConfidenceOptions& opt = {},
                                       const AugmentPolicy& weak = {}, std::uint64_t seed = 0) {
  ConfidenceEstimate e;
  e.losses = per_sample_losses(peer, ds, opt.view, weak, seed);
  try {
    e.gmm = gmm_fit_1d(e.losses, opt.max_iters, opt.tol);
    e.omega = confidence(*e.gmm, e.losses);
  } catch (const DegenerateFitError&) {
    e.gmm.reset();
    e.omega.assign(e.losses.size(), 0.5);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Refurbished labels
// ---------------------------------------------------------------------------

struct RefurbishedLabels {
  std::size_t n = 0;
  std::size_t classes = 0;
  std::vector<double> y_soft;  // n×C, rows on the simplex
  std::vector<int> y_hard;     // argmax rows of y_soft
};

// y′ = ω·onehot(ŷ) + (1−ω)·sharpen(p_w_peer, T), row-wise.
template <typename T>
RefurbishedLabels collaborative_labels(std::span<const double> omega, std::span<const int> y_noisy,
                                       const Tensor<T>& p_w_peer, double sharpen_T, bool apply_sharpen = true) {
  const std::size_t n = p_w_peer.rows(), C = p_w_peer.cols();
  if (omega.size() != n || y_noisy.size() != n) throw DimensionError("collaborative_labels: length mismatch");
  for (double w : omega)
    if (!(w >= 0.0 && w <= 1.0)) throw ContractError("collaborative_labels: omega outside [0,1]");
  auto peer = cast<double>(p_w_peer.detach());
  if (apply_sharpen) peer = sharpen(peer, sharpen_T);
  const auto& q = peer.values();
  RefurbishedLabels r;
  r.n = n;
  r.classes = C;
  r.y_soft.resize(n * C);
  r.y_hard.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (y_noisy[i] < 0 || static_cast<std::size_t>(y_noisy[i]) >= C)
      throw ContractError("collaborative_labels: label out of range");
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double onehot = static_cast<std::size_t>(y_noisy[i]) == c ? 1.0 : 0.0;
      s += r.y_soft[i * C + c] = omega[i] * onehot + (1.0 - omega[i]) * q[i * C + c];
    }
    std::size_t best = 0;
    for (std::size_t c = 0; c < C; ++c) {
      r.y_soft[i * C + c] /= s;
      if (r.y_soft[i * C + c] > r.y_soft[i * C + best]) best = c;
    }
    r.y_hard[i] = static_cast<int>(best);
  }
  return r;
}

// ỹ = sharpen((p_w_0 + p_w_1)/2, T), cut from autodiff.
template <typename T>
Tensor<T> rolr_pseudo_labels(const Tensor<T>& p_w_0, const Tensor<T>& p_w_1, T sharpen_T) {
  require_same_shape("rolr_pseudo_labels", p_w_0, p_w_1);
  return sharpen(scalar_mul(add(p_w_0.detach(), p_w_1.detach()), T(0.5)), sharpen_T);
}

}  // namespace ccl
