// Rotary position embedding (interleaved pairs) and its long-term decay bound.
#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "atnt/numerics.hpp"

namespace atnt {

struct RopeConfig {
  std::size_t head_dim = 16;
  double theta_base = 10000.0;
  std::size_t max_pos = 256;

  void validate() const {
    if (head_dim == 0 || head_dim % 2 != 0) {
      throw DimensionError("RopeConfig: head_dim must be even and positive, got " +
                           std::to_string(head_dim));
    }
    if (!(theta_base > 1.0)) throw DomainError("RopeConfig: theta_base must exceed 1");
  }

  /// Frequency of pair j (0-based): base^(-2j/d).
  double theta(std::size_t j) const {
    return std::pow(theta_base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
  }

  friend bool operator==(const RopeConfig&, const RopeConfig&) = default;
};

/// Rotates each pair (x[2j], x[2j+1]) by angle m * theta_j.
inline void apply_rotary_inplace(std::span<double> x, std::size_t m, const RopeConfig& cfg) {
  if (x.size() != cfg.head_dim || x.size() % 2 != 0) {
    throw DimensionError("apply_rotary: vector of length " + std::to_string(x.size()) +
                         " for head_dim " + std::to_string(cfg.head_dim));
  }
  const double pos = static_cast<double>(m);
  for (std::size_t j = 0; j < x.size() / 2; ++j) {
    const double ang = pos * cfg.theta(j);
    const double c = std::cos(ang), s = std::sin(ang);
    const double a = x[2 * j], b = x[2 * j + 1];
    x[2 * j] = a * c - b * s;
    x[2 * j + 1] = b * c + a * s;
  }
}

inline std::vector<double> apply_rotary(std::span<const double> x, std::size_t m,
                                        const RopeConfig& cfg) {
  std::vector<double> out(x.begin(), x.end());
  apply_rotary_inplace(out, m, cfg);
  return out;
}

inline double rotary_dot(std::span<const double> q, std::span<const double> k, std::size_t m,
                         std::size_t n, const RopeConfig& cfg) {
  if (q.size() != k.size()) {
    throw DimensionError("rotary_dot: lengths " + std::to_string(q.size()) + " and " +
                         std::to_string(k.size()));
  }
  const auto rq = apply_rotary(q, m, cfg);
  const auto rk = apply_rotary(k, n, cfg);
  double acc = 0.0;
  for (std::size_t i = 0; i < rq.size(); ++i) acc += rq[i] * rk[i];
  return acc;
}

/// Mean over j of |sum_{k<=j} exp(i * rel_dist * theta_k)|. Peaks at
/// rel_dist = 0 with value (d/2 + 1) / 2.
inline double decay_upper_bound(std::size_t rel_dist, const RopeConfig& cfg) {
  const std::size_t half = cfg.head_dim / 2;
  const double r = static_cast<double>(rel_dist);
  std::complex<double> partial{0.0, 0.0};
  double acc = 0.0;
  for (std::size_t j = 0; j < half; ++j) {
    partial += std::polar(1.0, r * cfg.theta(j));
    acc += std::abs(partial);
  }
  return acc / static_cast<double>(half);
}

}  // namespace atnt
