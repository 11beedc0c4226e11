#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "prach/zc.hpp"
#include "prach/waveform.hpp"

namespace prach {

/// Combined correlation magnitudes over the l_ra lag positions.
/// peak_index is window-aligned: the fractional peak location is refined to
/// sub-lag precision and the index just at/above it is reported, so a delay
/// of d samples reads out as exactly floor(d * l_ra / n_fft) lag steps.
struct CorrelationProfile {
  Eigen::VectorXd magnitudes;  ///< length l_ra, non-negative
  int peak_index = 0;          ///< in [0, l_ra)
  double peak_value = 0.0;     ///< max of magnitudes
};

/// Decoded preamble id and window-local timing offset.
struct Detection {
  int rapid = 0;           ///< in [0, num_rapids)
  int ta = 0;              ///< in [0, n_cs)
  double peak_metric = 0;  ///< peak correlation magnitude (or NN confidence)
  bool slack = false;      ///< peak fell outside every window and was clamped
};

namespace detail {

// Golden-section search for the maximum of f on [lo, hi]; f unimodal there.
template <typename F>
double golden_max(F&& f, double lo, double hi, int iters = 80) {
  const double inv_phi = 0.6180339887498948482;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int i = 0; i < iters; ++i) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

/// Correlates the received grid against the base-sequence spectrum:
/// z(k) = rx(k) * conj(base(k)) per symbol, transformed to the lag domain
/// and combined non-coherently (sum of magnitudes across symbols).
///
/// The integer-lag profile quantizes the peak to the nearest lag, which
/// mis-reads delays whose fractional lag offset exceeds one half. The peak
/// location is therefore refined to sub-lag precision around the strongest
/// lag, and peak_index reports ceil(position): the window-aligned index
/// whose offset from the window start is the floor of the true lag shift.
inline CorrelationProfile correlate(const RxGrid& rx, const VecXc& base_freq) {
  const Eigen::Index l = base_freq.size();
  if (rx.rows() != l) throw std::invalid_argument("correlate: grid/base length mismatch");
  const Eigen::Index n_sym = rx.cols();

  std::vector<VecXc> z(static_cast<std::size_t>(n_sym));
  CorrelationProfile prof;
  prof.magnitudes = Eigen::VectorXd::Zero(l);
  for (Eigen::Index s = 0; s < n_sym; ++s) {
    z[s] = rx.col(s).cwiseProduct(base_freq.conjugate());
    // forward transform: a cyclic advance of c_v peaks at lag +c_v,
    // a propagation delay moves the peak downward
    prof.magnitudes += dft(z[s]).cwiseAbs();
  }

  Eigen::Index m0 = 0;
  prof.peak_value = prof.magnitudes.maxCoeff(&m0);

  // sub-lag refinement around the strongest integer lag
  auto combined = [&](double rho) {
    double acc = 0.0;
    for (const auto& zs : z) acc += dirichlet_mag_at(zs, -rho);
    return acc;
  };
  const double m0d = static_cast<double>(m0);
  double rho = detail::golden_max(combined, m0d - 1.0, m0d + 1.0);
  const double nearest = std::round(rho);
  if (std::abs(rho - nearest) < 1e-6) rho = nearest;  // integer-lag peak
  const auto ld = static_cast<double>(l);
  rho = rho - std::floor(rho / ld) * ld;  // wrap into [0, l)
  prof.peak_index = static_cast<int>(std::ceil(rho)) % static_cast<int>(l);
  return prof;
}

/// Maps a peak position to (rapid, ta): window v covers lags
/// {c_v, c_v-1, ..., c_v-n_cs+1} (mod l_ra) and ta is the downward offset
/// from the window start c_v. The l_ra - num_rapids*n_cs positions outside
/// every window are clamped to the nearest window edge with ta = n_cs-1 and
/// flagged.
inline Detection map_peak(const CorrelationProfile& prof, const ZcConfig& cfg) {
  const int l = cfg.l_ra;
  const int p = prof.peak_index;
  if (p < 0 || p >= l) throw std::invalid_argument("map_peak: peak index out of range");
  const int r = num_rapids(cfg);
  Detection det;
  det.peak_metric = prof.peak_value;
  for (int v = 0; v < r; ++v) {
    const int t = ((v * cfg.n_cs - p) % l + l) % l;
    if (t < cfg.n_cs) {
      det.rapid = v;
      det.ta = t;
      return det;
    }
  }
  // slack region between the last window's start and the wrap of window 0
  const int hi_edge = (r - 1) * cfg.n_cs;        // top lag of the last window
  const int lo_edge = l - (cfg.n_cs - 1);        // lowest lag of window 0's wrap
  det.slack = true;
  det.ta = cfg.n_cs - 1;
  det.rapid = (p - hi_edge <= lo_edge - p) ? r - 1 : 0;
  return det;
}

/// Full conventional receiver: correlation, peak search, window mapping.
inline Detection decode(const RxGrid& rx, const ZcConfig& cfg) {
  const VecXc base_freq = to_frequency_domain(generate_base_sequence(cfg));
  return map_peak(correlate(rx, base_freq), cfg);
}

}  // namespace prach
