#pragma once

// Two views of unequal strength for vector-valued samples.
//
// weak:   Gaussian jitter; for image-shaped samples also a shift of at most one
//         cell and a horizontal flip with probability 1/2.
// strong: n_strong_ops ops drawn uniformly from {per-coordinate scaling by a
//         factor in [1−m, 1+m], additive shift of up to ±m·rms(x), sign-preserving
//         gamma on |x|/max|x| with exponent e^{±m}}, then jitter, then one
//         contiguous block of ⌈mask_fraction·d⌉ coordinates set to zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ccl/errors.hpp"
#include "ccl/rng.hpp"

namespace ccl {

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  bool operator==(const ImageShape&) const = default;
};

enum class AugmentKind { weak, strong };

struct AugmentPolicy {
  AugmentKind kind = AugmentKind::weak;
  double jitter_sd = 0.0;
  double mask_fraction = 0.0;
  int n_strong_ops = 0;
  double op_magnitude = 0.0;
  std::optional<ImageShape> image;

  static AugmentPolicy weak(double jitter_sd) {
    AugmentPolicy p;
    p.kind = AugmentKind::weak;
    p.jitter_sd = jitter_sd;
    return p;
  }
  static AugmentPolicy strong(double jitter_sd, int n_ops, double magnitude, double mask_fraction) {
    AugmentPolicy p;
    p.kind = AugmentKind::strong;
    p.jitter_sd = jitter_sd;
    p.n_strong_ops = n_ops;
    p.op_magnitude = magnitude;
    p.mask_fraction = mask_fraction;
    return p;
  }

  void validate() const {
    if (!(jitter_sd >= 0)) throw ConfigError("augment: jitter_sd must be non-negative");
    if (!(mask_fraction >= 0 && mask_fraction < 1)) throw ConfigError("augment: mask_fraction must lie in [0,1)");
    if (n_strong_ops < 0) throw ConfigError("augment: n_strong_ops must be non-negative");
    if (!(op_magnitude >= 0 && op_magnitude < 1)) throw ConfigError("augment: op_magnitude must lie in [0,1)");
    if (kind == AugmentKind::weak && (mask_fraction != 0 || n_strong_ops != 0))
      throw ConfigError("augment: a weak policy cannot mask or apply strong ops");
  }
  bool operator==(const AugmentPolicy&) const = default;
};

namespace detail {

inline void jitter(std::vector<float>& x, double sd, Rng& rng) {
  if (sd <= 0) return;
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : x) v = static_cast<float>(v + n(rng));
}

inline void shift_and_flip(std::vector<float>& x, const ImageShape& img, Rng& rng) {
  const std::size_t h = img.height, w = img.width, ch = img.channels;
  if (h * w * ch != x.size()) throw DimensionError("augment: image shape does not match sample width");
  std::uniform_int_distribution<int> step(-1, 1);
  std::bernoulli_distribution coin(0.5);
  const int dy = step(rng), dx = step(rng);
  const bool flip = coin(rng);
  std::vector<float> out(x.size(), 0.0f);
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) {
        const long sr = static_cast<long>(r) - dy;
        long sc = static_cast<long>(col) - dx;
        if (sr < 0 || sc < 0 || sr >= static_cast<long>(h) || sc >= static_cast<long>(w)) continue;
        if (flip) sc = static_cast<long>(w) - 1 - sc;
        out[(c * h + r) * w + col] = x[(c * h + static_cast<std::size_t>(sr)) * w + static_cast<std::size_t>(sc)];
      }
  x = std::move(out);
}

}  // namespace detail

inline std::vector<float> weak_view(std::span<const float> x, const AugmentPolicy& policy, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> out(x.begin(), x.end());
  if (policy.image) detail::shift_and_flip(out, *policy.image, rng);
  detail::jitter(out, policy.jitter_sd, rng);
  return out;
}

inline std::vector<float> strong_view(std::span<const float> x, const AugmentPolicy& policy, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> out(x.begin(), x.end());
  const double m = policy.op_magnitude;
  std::uniform_int_distribution<int> pick(0, 2);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  for (int k = 0; k < policy.n_strong_ops; ++k) {
    switch (pick(rng)) {
      case 0:  // coordinate scaling
        for (auto& v : out) v = static_cast<float>(v * (1.0 + m * sym(rng)));
        break;
      case 1: {  // additive shift
        double ss = 0;
        for (float v : out) ss += double(v) * double(v);
        const double rms = out.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(out.size()));
        const double s = m * rms * sym(rng);
        for (auto& v : out) v = static_cast<float>(v + s);
        break;
      }
      default: {  // sign-preserving gamma
        double mx = 0;
        for (float v : out) mx = std::max(mx, std::abs(double(v)));
        const double gamma = std::exp(m * sym(rng));
        if (mx > 0)
          for (auto& v : out) {
            const double z = std::abs(double(v)) / mx;
            v = static_cast<float>(std::copysign(std::pow(z, gamma) * mx, double(v)));
          }
        break;
      }
    }
  }
  detail::jitter(out, policy.jitter_sd, rng);
  if (policy.mask_fraction > 0 && !out.empty()) {
    const auto len = std::min(out.size(), static_cast<std::size_t>(
                                              std::ceil(policy.mask_fraction * static_cast<double>(out.size()) - 1e-9)));
    std::uniform_int_distribution<std::size_t> start(0, out.size() - len);
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(start(rng)), len, 0.0f);
  }
  return out;
}

inline std::vector<float> apply_view(std::span<const float> x, const AugmentPolicy& policy, std::uint64_t seed) {
  return policy.kind == AugmentKind::weak ? weak_view(x, policy, seed) : strong_view(x, policy, seed);
}

}  // namespace ccl
