#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "prach/rng.hpp"
#include "prach/waveform.hpp"

namespace prach {

/// Sentinel for noise-free operation.
inline constexpr double kNoNoiseSnrDb = std::numeric_limits<double>::infinity();

enum class ChannelProfile { AwgnOnly, Tdlc };

struct ChannelConfig {
  ChannelProfile profile = ChannelProfile::AwgnOnly;
  double delay_spread_ns = 0.0;  ///< RMS delay spread, > 0 for Tdlc
  double snr_db = kNoNoiseSnrDb;
  std::uint64_t seed = 0;

  void validate() const {
    if (profile == ChannelProfile::Tdlc && !(delay_spread_ns > 0.0))
      throw std::invalid_argument("channel: Tdlc requires a positive delay spread");
  }
};

/// One quasi-static multipath realization.
struct TapSet {
  Eigen::VectorXd delays_samples;  ///< ascending, first is 0
  VecXc gains;
};

/// Normalized TDL-C power-delay profile: {normalized delay, power dB},
/// 24 NLOS taps. Real delays are normalized delay x RMS delay spread.
inline constexpr std::array<std::array<double, 2>, 24> kTdlcProfile = {{
    {0.0000, -4.4},  {0.2099, -1.2},  {0.2219, -3.5},  {0.2329, -5.2},
    {0.2176, -2.5},  {0.6366, 0.0},   {0.6448, -2.2},  {0.6560, -3.9},
    {0.6584, -7.4},  {0.7935, -7.1},  {0.8213, -10.7}, {0.9336, -11.1},
    {1.2285, -5.1},  {1.3083, -6.8},  {2.1704, -8.7},  {2.7105, -13.2},
    {4.2589, -13.9}, {4.6003, -13.9}, {5.4902, -15.8}, {5.6077, -17.1},
    {6.3065, -16.0}, {6.6374, -15.7}, {7.0427, -21.6}, {8.6523, -22.8},
}};

/// Draws one quasi-static channel realization. For Tdlc, tap powers are the
/// normalized profile scaled to unit total power and each gain is drawn as a
/// circularly-symmetric complex Gaussian with that variance (Rayleigh
/// fading). AwgnOnly is the single-tap identity and consumes no randomness.
inline TapSet realize_channel(const ChannelConfig& cfg, Rng& rng, double sample_rate_hz) {
  cfg.validate();
  TapSet taps;
  if (cfg.profile == ChannelProfile::AwgnOnly) {
    taps.delays_samples = Eigen::VectorXd::Zero(1);
    taps.gains = VecXc::Ones(1);
    return taps;
  }
  const int n = static_cast<int>(kTdlcProfile.size());
  taps.delays_samples.resize(n);
  taps.gains.resize(n);
  Eigen::VectorXd powers(n);
  for (int i = 0; i < n; ++i) {
    taps.delays_samples[i] = kTdlcProfile[i][0] * cfg.delay_spread_ns * 1e-9 * sample_rate_hz;
    powers[i] = std::pow(10.0, kTdlcProfile[i][1] / 10.0);
  }
  powers /= powers.sum();  // unit mean channel power
  for (int i = 0; i < n; ++i) taps.gains[i] = std::sqrt(powers[i]) * rng.cnormal();
  return taps;
}

/// Tapped-delay-line convolution. Fractional tap delays are rounded to the
/// nearest sample (< 4.1 ns error at 122.88 Msps, far below the delay
/// spreads in use). Output length = input length + max rounded tap delay.
inline TimeSignal apply_channel(const TimeSignal& sig, const TapSet& taps) {
  Eigen::Index max_d = 0;
  for (Eigen::Index i = 0; i < taps.delays_samples.size(); ++i)
    max_d = std::max(max_d, static_cast<Eigen::Index>(std::llround(taps.delays_samples[i])));
  TimeSignal out;
  out.sample_rate_hz = sig.sample_rate_hz;
  out.samples = VecXc::Zero(sig.samples.size() + max_d);
  for (Eigen::Index i = 0; i < taps.delays_samples.size(); ++i) {
    const Eigen::Index d = static_cast<Eigen::Index>(std::llround(taps.delays_samples[i]));
    out.samples.segment(d, sig.samples.size()) += taps.gains[i] * sig.samples;
  }
  return out;
}

/// Adds i.i.d. circular complex Gaussian noise with variance
/// signal_power_ref / 10^(snr_db/10) to every sample. snr_db = +inf
/// returns the signal unchanged (and consumes no randomness).
inline TimeSignal add_awgn(const TimeSignal& sig, double snr_db, double signal_power_ref, Rng& rng) {
  if (std::isinf(snr_db) && snr_db > 0) return sig;
  if (!(signal_power_ref > 0.0)) throw std::invalid_argument("add_awgn: non-positive power reference");
  const double noise_var = signal_power_ref * std::pow(10.0, -snr_db / 10.0);
  const double sigma = std::sqrt(noise_var);
  TimeSignal out;
  out.sample_rate_hz = sig.sample_rate_hz;
  out.samples.resize(sig.samples.size());
  for (Eigen::Index i = 0; i < sig.samples.size(); ++i)
    out.samples[i] = sig.samples[i] + sigma * rng.cnormal();
  return out;
}

/// Mean power of the occupied span [first, size): the reference point for
/// the SNR definition (post-channel, pre-noise).
inline double mean_power_from(const TimeSignal& sig, Eigen::Index first) {
  if (first < 0 || first >= sig.samples.size())
    throw std::invalid_argument("mean_power_from: span out of range");
  const Eigen::Index n = sig.samples.size() - first;
  return sig.samples.tail(n).squaredNorm() / static_cast<double>(n);
}

}  // namespace prach
