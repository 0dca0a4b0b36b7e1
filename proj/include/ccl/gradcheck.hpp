#pragma once

// Finite-difference checks of every loss at random points, in double precision.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ccl/losses.hpp"
#include "ccl/rng.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

struct GradCheckResult {
  std::string name;
  double max_error = 0;
  int points = 0;
};

struct GradSuiteOptions {
  int points = 50;
  std::uint64_t seed = 7;
  double eps = 1e-6;
  std::size_t batch = 6;
  std::size_t classes = 4;
  std::size_t embed = 5;
};

namespace detail {

inline Tensor<double> random_matrix(std::size_t r, std::size_t c, double sd, Rng& rng) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor<double>::matrix(r, c, std::move(v));
}

inline std::vector<std::size_t> range(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i < to; ++i) v.push_back(i);
  return v;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
  std::vector<int> y(n);
  for (auto& v : y) v = u(rng);
  return y;
}

// Weak predictions where roughly half of the rows clear the threshold by a margin.
inline Tensor<double> confident_rows(std::size_t n, std::size_t C, double c, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n * C);
  for (std::size_t i = 0; i < n; ++i) {
    const bool confident = i % 2 == 0;
    const double top = confident ? c + (1 - c) * (0.2 + 0.6 * u(rng)) : 0.3 + 0.5 * u(rng) * c;
    const auto k = static_cast<std::size_t>(u(rng) * static_cast<double>(C)) % C;
    for (std::size_t j = 0; j < C; ++j) v[i * C + j] = j == k ? top : (1 - top) / static_cast<double>(C - 1);
  }
  return Tensor<double>::matrix(n, C, std::move(v));
}

}  // namespace detail

// Maximum relative error per loss over `points` random inputs.
inline std::vector<GradCheckResult> run_gradient_suite(const GradSuiteOptions& o = {}) {
  using Tn = Tensor<double>;
  Rng rng(o.seed);
  const std::size_t N = o.batch, C = o.classes, D = o.embed;
  const auto top = detail::range(0, N), mid = detail::range(N, 2 * N), low = detail::range(2 * N, 3 * N);
  const double tau = 0.5, T = 0.5, c = 0.95;

  std::vector<GradCheckResult> out;
  auto run = [&](const std::string& name, auto make_point, auto make_fn) {
    GradCheckResult r{name, 0.0, 0};
    for (int k = 0; k < o.points; ++k) {
      Tn point = make_point();
      auto fn = make_fn();
      r.max_error = std::max(r.max_error, finite_difference_check<double>(fn, point, o.eps));
      ++r.points;
    }
    out.push_back(r);
  };

  // CE against a sharpened target: rows [0,N) are logits of p, rows [N,2N) logits of the target.
  run("ce_sharpen", [&] { return detail::random_matrix(2 * N, C, 1.0, rng); },
      [&] {
        return [&](const Tn& x) {
          auto p = softmax_rows(select_rows(x, std::span<const std::size_t>(top)));
          auto q = sharpen(softmax_rows(select_rows(x, std::span<const std::size_t>(mid))), T);
          return cross_entropy(p, q);
        };
      });
  run("pg", [&] { return detail::random_matrix(N, C, 1.0, rng); },
      [&] {
        auto p_w = detail::confident_rows(N, C, c, rng);
        return [p_w, c](const Tn& x) { return pg_loss(p_w, softmax_rows(x), c); };
      });
  run("acl", [&] { return detail::random_matrix(2 * N, D, 1.0, rng); },
      [&] {
        return [&](const Tn& x) {
          return acl_loss(select_rows(x, std::span<const std::size_t>(top)),
                          select_rows(x, std::span<const std::size_t>(mid)), tau);
        };
      });
  run("vm", [&] { return detail::random_matrix(2 * N, D, 1.0, rng); },
      [&] {
        return [&](const Tn& x) {
          return vm_loss(select_rows(x, std::span<const std::size_t>(top)),
                         select_rows(x, std::span<const std::size_t>(mid)), tau);
        };
      });
  run("cclrl", [&] { return detail::random_matrix(2 * N, D, 1.0, rng); },
      [&] {
        auto y = detail::random_labels(N, C, rng);
        return [&, y](const Tn& x) {
          return cclrl_loss(select_rows(x, std::span<const std::size_t>(top)),
                            select_rows(x, std::span<const std::size_t>(mid)), std::span<const int>(y), tau);
        };
      });
  run("mm", [&] { return detail::random_matrix(2 * N, D, 1.0, rng); },
      [&] {
        return [&](const Tn& x) {
          return mm_loss(select_rows(x, std::span<const std::size_t>(top)),
                         select_rows(x, std::span<const std::size_t>(mid)), tau);
        };
      });
  run("div", [&] { return detail::random_matrix(N, C, 1.0, rng); },
      [&] { return [](const Tn& x) { return div_loss(softmax_rows(x)); }; });

  // Whole objective: rows are strong, weak and peer-weak embeddings and a fixed
  // linear head turns strong views into predictions. Weak and peer predictions
  // only ever enter as detached targets, so they are held constant here.
  run("total", [&] { return detail::random_matrix(3 * N, D, 1.0, rng); },
      [&] {
        auto head = detail::random_matrix(D, C, 1.5, rng);
        auto p_w = detail::confident_rows(N, C, 0.6, rng);
        auto p_peer = softmax_rows(detail::random_matrix(N, C, 1.5, rng));
        auto y = detail::random_labels(N, C, rng);
        auto hard = detail::random_labels(N, C, rng);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> omega(N);
        for (auto& w : omega) w = u(rng);
        LossSettings s;
        s.c = 0.6;
        s.tau = tau;
        return [&, head, p_w, p_peer, y, hard, omega, s](const Tn& x) {
          CclBatch<double> b;
          b.emb_s = select_rows(x, std::span<const std::size_t>(top));
          b.emb_w = select_rows(x, std::span<const std::size_t>(mid));
          b.emb_w_peer = select_rows(x, std::span<const std::size_t>(low));
          b.p_s = softmax_rows(matmul(b.emb_s, head));
          b.p_w = p_w;
          b.p_w_peer = p_peer;
          b.noisy = y;
          b.omega = omega;
          b.collab_hard = hard;
          return total_loss(b, s).loss;
        };
      });
  return out;
}

}  // namespace ccl
