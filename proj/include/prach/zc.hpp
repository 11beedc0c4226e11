#pragma once

#include <Eigen/Dense>

#include <numeric>
#include <stdexcept>

#include "prach/dft.hpp"

namespace prach {

/// Preamble numerology: sequence length, root index, cyclic-shift step.
struct ZcConfig {
  int l_ra = 139;  ///< sequence length (prime for the short format)
  int u = 1;       ///< root index, 1 <= u < l_ra, coprime with l_ra
  int n_cs = 13;   ///< cyclic-shift step between adjacent preamble ids

  void validate() const {
    if (l_ra < 2) throw std::invalid_argument("zc: l_ra must be >= 2");
    if (u < 1 || u >= l_ra) throw std::invalid_argument("zc: root index out of range");
    if (std::gcd(u, l_ra) != 1) throw std::invalid_argument("zc: root index not coprime with l_ra");
    if (n_cs < 1 || l_ra / n_cs < 1) throw std::invalid_argument("zc: invalid n_cs");
  }
};

/// Number of preamble ids one base sequence carries: floor(l_ra / n_cs).
inline int num_rapids(const ZcConfig& cfg) {
  cfg.validate();
  return cfg.l_ra / cfg.n_cs;
}

/// One preamble choice: id v and its cyclic shift c_v = v * n_cs.
struct Preamble {
  int v;    ///< preamble id, 0 <= v < num_rapids
  int c_v;  ///< cyclic shift in samples

  static Preamble from_index(int v, const ZcConfig& cfg) {
    if (v < 0 || v >= num_rapids(cfg)) throw std::invalid_argument("preamble id out of range");
    return {v, v * cfg.n_cs};
  }
};

/// Zadoff-Chu base sequence x(n) = exp(-i*pi*u*n*(n+1)/l_ra), n = 0..l_ra-1.
/// Every element has unit magnitude.
inline VecXc generate_base_sequence(const ZcConfig& cfg) {
  cfg.validate();
  const long long l = cfg.l_ra;
  VecXc x(l);
  for (long long n = 0; n < l; ++n) {
    // exp(-i*pi*m/l) has period 2l in m; reduce exactly in integers first
    const long long m = (static_cast<long long>(cfg.u) * n % (2 * l)) * ((n + 1) % (2 * l)) % (2 * l);
    x[n] = std::polar(1.0, -kTwoPi * 0.5 * static_cast<double>(m) / static_cast<double>(l));
  }
  return x;
}

/// Cyclic rotation: out(n) = x((n + c_v) mod l_ra).
inline VecXc apply_cyclic_shift(const VecXc& x, const Preamble& p) {
  const Eigen::Index l = x.size();
  if (l == 0) throw std::invalid_argument("apply_cyclic_shift: empty sequence");
  VecXc out(l);
  const Eigen::Index shift = ((p.c_v % l) + l) % l;
  for (Eigen::Index n = 0; n < l; ++n) out[n] = x[(n + shift) % l];
  return out;
}

/// Frequency-domain image of a (possibly shifted) sequence: plain l_ra-point
/// unnormalized DFT. An input cyclic shift of c appears as the per-bin phase
/// ramp exp(+2*pi*i*k*c/l_ra) on the base spectrum.
inline VecXc to_frequency_domain(const VecXc& x) {
  return dft(x);
}

}  // namespace prach
