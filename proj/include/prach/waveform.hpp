#pragma once

#include <Eigen/Dense>

#include <stdexcept>

#include "prach/dft.hpp"

namespace prach {

/// OFDM numerology for the preamble occasion.
struct WaveformConfig {
  int n_fft = 4096;       ///< FFT size
  double scs_hz = 30000;  ///< subcarrier spacing
  int n_symbols = 2;      ///< preamble OFDM symbols (repeated content)
  int cp_len = 288;       ///< cyclic prefix length in samples
  int k0 = -1;            ///< first mapped subcarrier; -1 = centered

  double sample_rate_hz() const { return static_cast<double>(n_fft) * scs_hz; }

  int first_subcarrier(int l_ra) const {
    const int k = k0 >= 0 ? k0 : (n_fft - l_ra) / 2;
    if (k < 0 || k + l_ra > n_fft)
      throw std::invalid_argument("waveform: subcarrier mapping exceeds the grid");
    return k;
  }

  int symbol_len() const { return cp_len + n_fft; }
  int frame_len() const { return n_symbols * symbol_len(); }
};

/// Complex baseband stream.
struct TimeSignal {
  VecXc samples;
  double sample_rate_hz = 0.0;
};

/// Received frequency-domain resource elements, l_ra x n_symbols.
using RxGrid = Eigen::MatrixXcd;

/// Maps the frequency-domain preamble onto the OFDM grid and modulates:
/// per symbol, subcarriers k0..k0+l_ra-1 carry the preamble, the rest are
/// zero; inverse FFT (1/N) and cyclic prefix; symbols are concatenated.
inline TimeSignal modulate(const VecXc& freq_preamble, const WaveformConfig& cfg) {
  const int l_ra = static_cast<int>(freq_preamble.size());
  const int k0 = cfg.first_subcarrier(l_ra);
  VecXc grid = VecXc::Zero(cfg.n_fft);
  grid.segment(k0, l_ra) = freq_preamble;
  const VecXc body = ifft_pow2(grid);

  TimeSignal sig;
  sig.sample_rate_hz = cfg.sample_rate_hz();
  sig.samples.resize(cfg.frame_len());
  for (int s = 0; s < cfg.n_symbols; ++s) {
    const Eigen::Index at = static_cast<Eigen::Index>(s) * cfg.symbol_len();
    sig.samples.segment(at, cfg.cp_len) = body.tail(cfg.cp_len);
    sig.samples.segment(at + cfg.cp_len, cfg.n_fft) = body;
  }
  return sig;
}

/// Prefixes the signal with `delay_samples` zeros.
inline TimeSignal apply_delay(const TimeSignal& sig, int delay_samples) {
  if (delay_samples < 0) throw std::invalid_argument("apply_delay: negative delay");
  TimeSignal out;
  out.sample_rate_hz = sig.sample_rate_hz;
  out.samples = VecXc::Zero(sig.samples.size() + delay_samples);
  out.samples.tail(sig.samples.size()) = sig.samples;
  return out;
}

/// Receiver-side OFDM demodulation with fixed nominal symbol windows: the
/// receiver does not know the propagation delay, so each symbol window is
/// taken at its zero-delay position and any delay shows up as a per-bin
/// phase ramp (plus inter-symbol leakage once the delay exceeds the CP).
inline RxGrid demodulate_extract(const TimeSignal& sig, const WaveformConfig& cfg, int l_ra) {
  const int k0 = cfg.first_subcarrier(l_ra);
  RxGrid grid(l_ra, cfg.n_symbols);
  for (int s = 0; s < cfg.n_symbols; ++s) {
    const Eigen::Index start = static_cast<Eigen::Index>(s) * cfg.symbol_len() + cfg.cp_len;
    if (start + cfg.n_fft > sig.samples.size())
      throw std::invalid_argument("demodulate_extract: signal too short for symbol window");
    VecXc win = sig.samples.segment(start, cfg.n_fft);
    fft_pow2_inplace(win, false);
    grid.col(s) = win.segment(k0, l_ra);
  }
  return grid;
}

}  // namespace prach
