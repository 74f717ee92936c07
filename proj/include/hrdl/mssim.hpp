#pragma once

// Maxwell-Slip friction: a parallel bank of elasto-slide elements driven by a
// common displacement. Each element sticks like a linear spring while
// |z - zeta| < delta and slips at its saturation force otherwise.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "hrdl/core.hpp"

namespace hrdl {

struct MSElement {
  double k = 1.0;     // stiffness
  double W = 1.0;     // saturation force
  double zeta = 0.0;  // element position

  double delta() const { return W / k; }

  /// Force for displacement z with the current element position (no update).
  double force_at(double z) const {
    const double f = k * (z - zeta);
    return std::clamp(f, -W, W);
  }
};

struct MSBank {
  std::vector<MSElement> elements;
  double z_last = 0.0;

  /// Unloaded bank at rest: every element position equals z0.
  void reset(double z0) {
    for (auto& e : elements) e.zeta = z0;
    z_last = z0;
  }

  double max_force() const {
    double s = 0.0;
    for (const auto& e : elements) s += e.W;
    return s;
  }

  /// Total force at z without updating element positions.
  double force_at(double z) const {
    double s = 0.0;
    for (const auto& e : elements) s += e.force_at(z);
    return s;
  }

  /// Moves every element position toward z by the fraction `rate`, which
  /// scales the stored spring force by (1 - rate).
  void relax(double z, double rate) {
    for (auto& e : elements) e.zeta += rate * (z - e.zeta);
  }

  void validate() const {
    if (elements.empty()) throw Error("MS bank needs at least one element");
    for (const auto& e : elements)
      if (!(e.k > 0.0) || !(e.W > 0.0)) throw Error("MS element requires k > 0 and W > 0");
  }
};

/// Builds a bank from saturation forces and saturation displacements.
inline MSBank make_bank(std::span<const double> W, std::span<const double> delta, double z0 = 0.0) {
  if (W.size() != delta.size()) throw Error("make_bank: size mismatch");
  MSBank b;
  for (std::size_t i = 0; i < W.size(); ++i) b.elements.push_back({W[i] / delta[i], W[i], z0});
  b.validate();
  b.reset(z0);
  return b;
}

/// Default per-joint bank: W = [1, 1.5, 2, 2.5] %Use, delta = [2, 5, 10, 20] mrad.
inline MSBank default_bank(double z0 = 0.0) {
  const double W[] = {1.0, 1.5, 2.0, 2.5};
  const double delta[] = {0.002, 0.005, 0.01, 0.02};
  return make_bank(W, delta, z0);
}

/// Advances the bank to displacement z and returns the total friction force.
/// At |z - zeta| == delta the element is treated as slipping. "Equal" allows
/// for the rounding of z - zeta, so revisiting the displacement of a slipping
/// element reproduces its saturation force exactly.
inline double ms_step(MSBank& bank, double z) {
  if (!std::isfinite(z)) throw Error("ms_step: non-finite displacement");
  double total = 0.0;
  for (auto& e : bank.elements) {
    const double d = z - e.zeta;
    const double delta = e.delta();
    const double slack = 4.0 * std::numeric_limits<double>::epsilon() *
                         (std::abs(z) + std::abs(e.zeta) + delta);
    if (std::abs(d) < delta - slack) {
      total += std::clamp(e.k * d, -e.W, e.W);
    } else {
      const double s = d > 0.0 ? 1.0 : -1.0;
      total += s * e.W;
      e.zeta = z - s * delta;
    }
  }
  bank.z_last = z;
  return total;
}

inline std::vector<double> ms_run(MSBank& bank, std::span<const double> z_seq) {
  if (z_seq.empty()) throw Error("ms_run: empty displacement sequence");
  std::vector<double> out;
  out.reserve(z_seq.size());
  for (double z : z_seq) out.push_back(ms_step(bank, z));
  return out;
}

}  // namespace hrdl
