#pragma once

// Loss terms of collaborative cross learning, built from tensor ops so that
// every term is differentiable end to end.
//
// Functions suffixed _per_sample return an [N×1] column; the unsuffixed
// versions are batch means. Contrastive terms L2-normalize embeddings and
// divide similarities by the temperature tau.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ccl/errors.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

template <typename T>
constexpr T simplex_tolerance() {
  return sizeof(T) >= 8 ? T(1e-6) : T(1e-4);
}

template <typename T>
void require_simplex_rows(const char* op, const Tensor<T>& t) {
  const std::size_t rows = t.rows(), cols = t.cols();
  const auto& v = t.values();
  const T tol = simplex_tolerance<T>();
  for (std::size_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      const T x = v[r * cols + c];
      if (x < -tol) throw ContractError(std::string(op) + ": negative entry in row " + std::to_string(r));
      s += x;
    }
    if (std::abs(s - T(1)) > tol * T(cols))
      throw ContractError(std::string(op) + ": row " + std::to_string(r) + " is not on the simplex");
  }
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
}

// p_i^{1/T} / Σ_j p_j^{1/T}, row-wise.
template <typename T>
Tensor<T> sharpen(const Tensor<T>& p, T temperature) {
  if (!(temperature > T(0))) throw ConfigError("sharpen: temperature must be positive");
  if (temperature == T(1)) return p;
  return softmax_rows(scalar_mul(log(clamp_min(p, kLogEps<T>)), T(1) / temperature));
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

// −Σ_i target_i log p_i per row. Targets must lie on the simplex.
template <typename T>
Tensor<T> cross_entropy_per_sample(const Tensor<T>& p, const Tensor<T>& target) {
  require_same_shape("cross_entropy", p, target);
  require_simplex_rows("cross_entropy", target);
  return scalar_mul(row_sum(mul(target, log(clamp_min(p, kLogEps<T>)))), T(-1));
}

template <typename T>
Tensor<T> cross_entropy_per_sample(const Tensor<T>& p, std::span<const int> labels) {
  if (labels.size() != p.rows()) throw DimensionError("cross_entropy: label count does not match batch");
  return cross_entropy_per_sample(p, one_hot<T>(labels, p.cols()));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& p, const Tensor<T>& target) {
  return mean(cross_entropy_per_sample(p, target));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& p, std::span<const int> labels) {
  return mean(cross_entropy_per_sample(p, labels));
}

namespace detail {

template <typename T>
void require_unit_interval(const char* op, std::span<const double> w, std::size_t n) {
  if (w.size() != n) throw DimensionError(std::string(op) + ": weight count does not match batch");
  for (double x : w)
    if (!(x >= 0.0 && x <= 1.0)) throw ContractError(std::string(op) + ": weight outside [0,1]");
}

template <typename T>
Tensor<T> weight_column(std::span<const double> w, bool complement, double scale = 1.0) {
  std::vector<T> v(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) v[i] = static_cast<T>(scale * (complement ? 1.0 - w[i] : w[i]));
  const std::size_t n = v.size();
  return Tensor<T>(Shape{n, 1}, std::move(v));
}

}  // namespace detail

// ω·CE(p_s, ŷ) + (1−ω)·CE(p_s, ỹ) per sample, ỹ being the pseudo-label distribution.
template <typename T>
Tensor<T> rolr_per_sample(const Tensor<T>& p_s, std::span<const int> y_noisy, std::span<const double> omega,
                          const Tensor<T>& pseudo) {
  detail::require_unit_interval<T>("rolr_loss", omega, p_s.rows());
  auto w1 = detail::weight_column<T>(omega, false);
  auto w0 = detail::weight_column<T>(omega, true);
  return add(mul(cross_entropy_per_sample(p_s, y_noisy), w1), mul(cross_entropy_per_sample(p_s, pseudo), w0));
}

template <typename T>
Tensor<T> rolr_loss(const Tensor<T>& p_s, std::span<const int> y_noisy, std::span<const double> omega,
                    const Tensor<T>& pseudo) {
  return mean(rolr_per_sample(p_s, y_noisy, omega, pseudo));
}

// ---------------------------------------------------------------------------
// Contrastive distributions
// ---------------------------------------------------------------------------

enum class ContrastDirection { strong_to_weak, weak_to_strong };
enum class ContrastScope { within_model, cross_model };

// ⟨â_j, ĉ_k⟩/τ for unit-normalized rows.
template <typename T>
Tensor<T> similarity_logits(const Tensor<T>& anchors, const Tensor<T>& candidates, T tau) {
  if (!(tau > T(0))) throw ConfigError("contrastive: temperature must be positive");
  if (anchors.rank() != 2 || candidates.rank() != 2 || anchors.shape()[1] != candidates.shape()[1])
    throw DimensionError("contrastive: embedding shapes " + shape_str(anchors.shape()) + " and " +
                         shape_str(candidates.shape()) + " do not conform");
  if (anchors.shape()[0] == 0) throw ContractError("contrastive: empty batch");
  return scalar_mul(matmul(l2_normalize_rows(anchors), transpose(l2_normalize_rows(candidates))), T(1) / tau);
}

// Row-stochastic q with q_jk = softmax_k(⟨a_j, c_k⟩/τ).
template <typename T>
struct ContrastiveDistribution {
  Tensor<T> q;
  ContrastDirection direction = ContrastDirection::strong_to_weak;
  ContrastScope scope = ContrastScope::within_model;
  T tau = T(0.1);
};

template <typename T>
ContrastiveDistribution<T> contrastive_distribution(const Tensor<T>& anchors, const Tensor<T>& candidates, T tau,
                                                    ContrastDirection dir = ContrastDirection::strong_to_weak,
                                                    ContrastScope scope = ContrastScope::within_model) {
  return {softmax_rows(similarity_logits(anchors, candidates, tau)), dir, scope, tau};
}

namespace detail {

template <typename T>
void require_paired(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": embedding shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " must match");
}

}  // namespace detail

// −log q^{s→w}_{jj}: strong views anchor, weak views are candidates.
template <typename T>
Tensor<T> acl_per_sample(const Tensor<T>& emb_s, const Tensor<T>& emb_w, T tau) {
  detail::require_paired("acl_loss", emb_s, emb_w);
  auto logq = log_softmax_rows(similarity_logits(emb_s, emb_w, tau));
  return scalar_mul(row_sum(mul(logq, Tensor<T>::identity(emb_s.shape()[0]))), T(-1));
}

template <typename T>
Tensor<T> acl_loss(const Tensor<T>& emb_s, const Tensor<T>& emb_w, T tau) {
  return mean(acl_per_sample(emb_s, emb_w, tau));
}

// KL(q^{a→b}_j ‖ q^{b→a}_j) per row, where q^{a→b} = softmax_rows(S/τ) and
// q^{b→a} = softmax_rows(Sᵀ/τ) for S = âb̂ᵀ. Both sides stay differentiable.
template <typename T>
Tensor<T> mimicry_per_sample(const Tensor<T>& a, const Tensor<T>& b, T tau) {
  detail::require_paired("mimicry", a, b);
  auto s = similarity_logits(a, b, tau);
  auto log_fwd = log_softmax_rows(s);
  auto log_bwd = log_softmax_rows(transpose(s));
  return row_sum(mul(exp(log_fwd), sub(log_fwd, log_bwd)));
}

// View-wise mimicry: KL(q^{s→w} ‖ q^{w→s}) within one model.
template <typename T>
Tensor<T> vm_loss(const Tensor<T>& emb_s, const Tensor<T>& emb_w, T tau) {
  return mean(mimicry_per_sample(emb_s, emb_w, tau));
}

// Model-wise mimicry: KL(q^{s→w}_{m→peer} ‖ q^{w→s}_{peer→m}).
template <typename T>
Tensor<T> mm_loss(const Tensor<T>& emb_s_m, const Tensor<T>& emb_w_peer, T tau) {
  return mean(mimicry_per_sample(emb_s_m, emb_w_peer, tau));
}

// Confident prediction guidance: CE(p_s, p_w) for rows whose weak prediction
// peaks at or above `c`, zero elsewhere. The target carries no gradient; with
// `hard` it is the one-hot argmax instead of the weak distribution.
template <typename T>
Tensor<T> pg_per_sample(const Tensor<T>& p_w, const Tensor<T>& p_s, T c, bool hard = false) {
  require_same_shape("pg_loss", p_w, p_s);
  const std::size_t rows = p_w.rows(), cols = p_w.cols();
  std::vector<T> target(p_w.numel(), T(0));
  const auto& w = p_w.values();
  for (std::size_t r = 0; r < rows; ++r) {
    auto b = w.begin() + static_cast<std::ptrdiff_t>(r * cols);
    auto it = std::max_element(b, b + static_cast<std::ptrdiff_t>(cols));
    if (*it < c) continue;
    if (hard)
      target[r * cols + static_cast<std::size_t>(it - b)] = T(1);
    else
      std::copy(b, b + static_cast<std::ptrdiff_t>(cols), target.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  Tensor<T> t(p_w.shape(), std::move(target));
  return scalar_mul(row_sum(mul(t, log(clamp_min(p_s, kLogEps<T>)))), T(-1));
}

template <typename T>
Tensor<T> pg_loss(const Tensor<T>& p_w, const Tensor<T>& p_s, T c, bool hard = false) {
  return mean(pg_per_sample(p_w, p_s, c, hard));
}

// Cross-model supervised contrast: −log Σ_{k: y_k = y_j} q_jk with anchors from the
// current model's strong view and candidates from the peer's weak view.
template <typename T>
Tensor<T> cclrl_per_sample(const Tensor<T>& emb_s_m, const Tensor<T>& emb_w_peer, std::span<const int> labels_hard,
                           T tau) {
  detail::require_paired("cclrl_loss", emb_s_m, emb_w_peer);
  const std::size_t n = emb_s_m.shape()[0];
  if (labels_hard.size() != n) throw DimensionError("cclrl_loss: label count does not match batch");
  std::vector<T> mask(n * n, T(0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k)
      if (labels_hard[j] == labels_hard[k]) mask[j * n + k] = T(1);
  auto q = softmax_rows(similarity_logits(emb_s_m, emb_w_peer, tau));
  auto positive = row_sum(mul(q, Tensor<T>::matrix(n, n, std::move(mask))));
  return scalar_mul(log(clamp_min(positive, kLogEps<T>)), T(-1));
}

template <typename T>
Tensor<T> cclrl_loss(const Tensor<T>& emb_s_m, const Tensor<T>& emb_w_peer, std::span<const int> labels_hard, T tau) {
  return mean(cclrl_per_sample(emb_s_m, emb_w_peer, labels_hard, tau));
}

// KL(uniform ‖ batch-mean prediction) = Σ_i (1/C)·log((1/C) / p̄_i).
template <typename T>
Tensor<T> div_loss(const Tensor<T>& p_s) {
  if (p_s.rank() != 2 || p_s.shape()[0] == 0) throw ContractError("div_loss: need a non-empty batch");
  const auto C = static_cast<T>(p_s.shape()[1]);
  auto log_mean = log(clamp_min(col_mean(p_s), kLogEps<T>));
  return add_scalar(scalar_mul(sum(log_mean), T(-1) / C), -std::log(C));
}

// ---------------------------------------------------------------------------
// Overall objective
// ---------------------------------------------------------------------------

struct LossSettings {
  double c = 0.95;          // confidence threshold of the prediction-guidance term
  double sharpen_T = 0.5;   // temperature T of sharpening
  double tau = 0.1;         // contrastive temperature
  bool pg_hard = false;     // hard argmax target in prediction guidance
  bool sharpen_cross_target = true;  // sharpen the peer's weak prediction before cross-model CE
  bool operator==(const LossSettings&) const = default;
};

// Component values of one evaluation of the overall objective.
// 
// `ce` is mean_j ω_j·CE_j; pg, acl, vm, xce, cclrl and mm are mean_j (1−ω_j)·term_j;
// cvl = pg + acl + vm, cml = xce + cclrl + mm; div is unweighted. Hence
// total = ce + (cvl + cml)/2 + div. RoLR epochs fill `ce` and `pseudo`
// (mean_j (1−ω_j)·CE(p_s, ỹ)_j) and total = ce + pseudo.
struct LossBreakdown {
  double ce = 0, pg = 0, acl = 0, vm = 0, xce = 0, cclrl = 0, mm = 0, div = 0, cvl = 0, cml = 0, pseudo = 0,
         total = 0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    ce += o.ce, pg += o.pg, acl += o.acl, vm += o.vm, xce += o.xce, cclrl += o.cclrl, mm += o.mm, div += o.div,
        cvl += o.cvl, cml += o.cml, pseudo += o.pseudo, total += o.total;
    return *this;
  }
  LossBreakdown scaled(double s) const {
    LossBreakdown b = *this;
    b.ce *= s, b.pg *= s, b.acl *= s, b.vm *= s, b.xce *= s, b.cclrl *= s, b.mm *= s, b.div *= s, b.cvl *= s,
        b.cml *= s, b.pseudo *= s, b.total *= s;
    return b;
  }
  // The overall objective recomposed from the components.
  double composed() const { return ce + 0.5 * (cvl + cml) + div + pseudo; }
};

// Everything the overall objective needs for one batch of model θm.
template <typename T>
struct CclBatch {
  Tensor<T> p_s, p_w;            // θm predictions on strong / weak views
  Tensor<T> emb_s, emb_w;        // θm embeddings on strong / weak views
  Tensor<T> p_w_peer;            // θ(1−m) prediction on the weak view
  Tensor<T> emb_w_peer;          // θ(1−m) embedding of the weak view
  std::vector<int> noisy;        // given labels ŷ
  std::vector<double> omega;     // label confidence per sample
  std::vector<int> collab_hard;  // argmax of the collaborative labels y′
};

template <typename T>
struct LossResult {
  Tensor<T> loss;
  LossBreakdown parts;
};

namespace detail {

template <typename T>
double weighted_mean(const Tensor<T>& per_sample, std::span<const double> w, bool complement) {
  const auto& v = per_sample.values();
  if (v.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < v.size(); ++i) s += (complement ? 1.0 - w[i] : w[i]) * static_cast<double>(v[i]);
  return s / static_cast<double>(v.size());
}

}  // namespace detail

// ω·CE(p_s, ŷ) + (1−ω)/2·(L_CVL + L_CML) + L_div with
// L_CVL = L_PG + L_ACL + L_VM and L_CML = CE(p_s, sharpen(p_w_peer)) + L_CCLRL + L_MM.
template <typename T>
LossResult<T> total_loss(const CclBatch<T>& b, const LossSettings& s) {
  const std::size_t n = b.p_s.rows();
  detail::require_unit_interval<T>("total_loss", b.omega, n);
  if (b.noisy.size() != n || b.collab_hard.size() != n) throw DimensionError("total_loss: label count mismatch");
  const T tau = static_cast<T>(s.tau);

  auto ce = cross_entropy_per_sample(b.p_s, std::span<const int>(b.noisy));
  auto pg = pg_per_sample(b.p_w.detach(), b.p_s, static_cast<T>(s.c), s.pg_hard);
  auto acl = acl_per_sample(b.emb_s, b.emb_w, tau);
  auto vm = mimicry_per_sample(b.emb_s, b.emb_w, tau);
  auto cross_target = s.sharpen_cross_target ? sharpen(b.p_w_peer.detach(), static_cast<T>(s.sharpen_T))
                                             : b.p_w_peer.detach();
  auto xce = cross_entropy_per_sample(b.p_s, cross_target);
  auto cclrl = cclrl_per_sample(b.emb_s, b.emb_w_peer, std::span<const int>(b.collab_hard), tau);
  auto mm = mimicry_per_sample(b.emb_s, b.emb_w_peer, tau);
  auto div = div_loss(b.p_s);

  auto w1 = detail::weight_column<T>(b.omega, false);
  auto w0_half = detail::weight_column<T>(b.omega, true, 0.5);
  auto cvl = add(add(pg, acl), vm);
  auto cml = add(add(xce, cclrl), mm);
  auto loss = add(add(mean(mul(ce, w1)), mean(mul(add(cvl, cml), w0_half))), div);

  LossBreakdown parts;
  parts.ce = detail::weighted_mean(ce, b.omega, false);
  parts.pg = detail::weighted_mean(pg, b.omega, true);
  parts.acl = detail::weighted_mean(acl, b.omega, true);
  parts.vm = detail::weighted_mean(vm, b.omega, true);
  parts.xce = detail::weighted_mean(xce, b.omega, true);
  parts.cclrl = detail::weighted_mean(cclrl, b.omega, true);
  parts.mm = detail::weighted_mean(mm, b.omega, true);
  parts.div = static_cast<double>(div.item());
  parts.cvl = parts.pg + parts.acl + parts.vm;
  parts.cml = parts.xce + parts.cclrl + parts.mm;
  parts.total = static_cast<double>(loss.item());
  return {loss, parts};
}

}  // namespace ccl
