#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "prach/channel.hpp"
#include "prach/nn/parallel.hpp"
#include "prach/rng.hpp"
#include "prach/waveform.hpp"
#include "prach/zc.hpp"

namespace prach {

/// Channel scenario codes stored per record. Hardware is reserved for
/// over-the-air captures; no generator exists for it here.
enum class ChannelCode : std::uint8_t {
  Awgn = 0,
  Tdlc10 = 1,
  Tdlc150 = 2,
  Tdlc300 = 3,
  Hardware = 255,
};

inline const char* channel_code_name(ChannelCode c) {
  switch (c) {
    case ChannelCode::Awgn: return "awgn";
    case ChannelCode::Tdlc10: return "tdlc10";
    case ChannelCode::Tdlc150: return "tdlc150";
    case ChannelCode::Tdlc300: return "tdlc300";
    case ChannelCode::Hardware: return "hardware";
  }
  return "unknown";
}

inline ChannelCode channel_code_from_name(const std::string& name) {
  if (name == "awgn") return ChannelCode::Awgn;
  if (name == "tdlc10") return ChannelCode::Tdlc10;
  if (name == "tdlc150") return ChannelCode::Tdlc150;
  if (name == "tdlc300") return ChannelCode::Tdlc300;
  if (name == "hardware") return ChannelCode::Hardware;
  throw std::invalid_argument("unknown channel name: " + name);
}

inline ChannelConfig channel_config_for(ChannelCode code, double snr_db, std::uint64_t seed) {
  ChannelConfig cfg;
  cfg.snr_db = snr_db;
  cfg.seed = seed;
  switch (code) {
    case ChannelCode::Awgn:
      cfg.profile = ChannelProfile::AwgnOnly;
      break;
    case ChannelCode::Tdlc10:
      cfg.profile = ChannelProfile::Tdlc;
      cfg.delay_spread_ns = 10.0;
      break;
    case ChannelCode::Tdlc150:
      cfg.profile = ChannelProfile::Tdlc;
      cfg.delay_spread_ns = 150.0;
      break;
    case ChannelCode::Tdlc300:
      cfg.profile = ChannelProfile::Tdlc;
      cfg.delay_spread_ns = 300.0;
      break;
    case ChannelCode::Hardware:
      throw std::invalid_argument("hardware records cannot be generated");
  }
  return cfg;
}

using GridF = Eigen::Matrix<std::complex<float>, Eigen::Dynamic, Eigen::Dynamic>;

/// One labeled transmission: the extracted grid plus ground truth.
struct PrachInstance {
  GridF grid;  ///< l_ra x n_symbols received resource elements
  float snr_db = 0.0f;
  ChannelCode channel = ChannelCode::Awgn;
  std::uint8_t rapid_label = 0;
  std::uint8_t ta_label = 0;
  std::uint16_t delay_samples = 0;
  std::uint64_t seed = 0;  ///< per-instance stream; regenerates channel+noise
};

inline constexpr int kTaClasses = 12;

/// Ground-truth timing-advance class: floor(delay * l_ra / n_fft), exact in
/// integer arithmetic.
inline int ta_label_for_delay(int delay_samples, const ZcConfig& zc, const WaveformConfig& wf) {
  if (delay_samples < 0) throw std::invalid_argument("negative delay");
  return static_cast<int>(
      (static_cast<long long>(delay_samples) * zc.l_ra) / wf.n_fft);
}

/// Largest delay whose label is still < n_classes (353 at defaults).
inline int max_delay_for_classes(int n_classes, const ZcConfig& zc, const WaveformConfig& wf) {
  // smallest d with label == n_classes, minus one
  const long long d = (static_cast<long long>(n_classes) * wf.n_fft + zc.l_ra - 1) / zc.l_ra;
  return static_cast<int>(d - 1);
}

/// Runs the full chain for one instance: sequence, shift, OFDM modulation,
/// delay, channel, noise at the configured SNR (referenced to the mean
/// power of the occupied post-channel samples), demodulation, extraction.
/// The per-instance rng drives the channel realization then the noise.
inline PrachInstance generate_instance(int rapid, double snr_db, ChannelCode channel,
                                       int delay_samples, std::uint64_t seed, const ZcConfig& zc,
                                       const WaveformConfig& wf) {
  const int max_delay = max_delay_for_classes(kTaClasses, zc, wf);
  if (delay_samples < 0 || delay_samples > max_delay)
    throw std::invalid_argument("generate_instance: delay out of range [0, " +
                                std::to_string(max_delay) + "]");
  Rng rng(seed);
  const ChannelConfig ccfg = channel_config_for(channel, snr_db, seed);
  const Preamble p = Preamble::from_index(rapid, zc);
  const VecXc freq = to_frequency_domain(apply_cyclic_shift(generate_base_sequence(zc), p));
  TimeSignal sig = apply_delay(modulate(freq, wf), delay_samples);
  const TapSet taps = realize_channel(ccfg, rng, wf.sample_rate_hz());
  sig = apply_channel(sig, taps);
  const double power_ref = mean_power_from(sig, delay_samples);
  sig = add_awgn(sig, snr_db, power_ref, rng);
  const RxGrid grid = demodulate_extract(sig, wf, zc.l_ra);

  PrachInstance inst;
  inst.grid = grid.cast<std::complex<float>>();
  inst.snr_db = static_cast<float>(snr_db);
  inst.channel = channel;
  inst.rapid_label = static_cast<std::uint8_t>(rapid);
  inst.ta_label = static_cast<std::uint8_t>(ta_label_for_delay(delay_samples, zc, wf));
  inst.delay_samples = static_cast<std::uint16_t>(delay_samples);
  inst.seed = seed;
  return inst;
}

/// Dataset request: one stratum per (channel, snr) pair.
struct GenerationSpec {
  std::vector<ChannelCode> channels;
  std::vector<double> snr_grid_db;
  int count_per_snr = 0;  ///< instances per (channel, snr) stratum
  std::uint64_t seed = 1;
  ZcConfig zc{};
  WaveformConfig wf{};

  long long total() const {
    return static_cast<long long>(channels.size()) * static_cast<long long>(snr_grid_db.size()) *
           count_per_snr;
  }
};

/// Generates the full stratified dataset. Each instance derives its own rng
/// stream from (seed, flat index), so the output is byte-identical for a
/// given spec regardless of thread count. Preamble id and delay are drawn
/// uniformly per instance.
inline std::vector<PrachInstance> generate_dataset(const GenerationSpec& spec) {
  if (spec.count_per_snr < 1) throw std::invalid_argument("generate_dataset: count_per_snr < 1");
  if (spec.channels.empty() || spec.snr_grid_db.empty())
    throw std::invalid_argument("generate_dataset: empty channel or snr grid");
  const int rapids = num_rapids(spec.zc);
  const int max_delay = max_delay_for_classes(kTaClasses, spec.zc, spec.wf);
  const long long total = spec.total();
  std::vector<PrachInstance> out(static_cast<std::size_t>(total));
  const long long per_channel = static_cast<long long>(spec.snr_grid_db.size()) * spec.count_per_snr;
  nn::parallel_chunks(total, 64, [&](Eigen::Index b, Eigen::Index e, Eigen::Index) {
    for (Eigen::Index idx = b; idx < e; ++idx) {
      const std::size_t ci = static_cast<std::size_t>(idx / per_channel);
      const long long rem = idx % per_channel;
      const std::size_t si = static_cast<std::size_t>(rem / spec.count_per_snr);
      Rng pick(derive_seed(spec.seed, static_cast<std::uint64_t>(idx)));
      const int rapid = static_cast<int>(pick.uniform_int(static_cast<std::uint64_t>(rapids)));
      const int delay = static_cast<int>(pick.uniform_int(static_cast<std::uint64_t>(max_delay) + 1));
      const std::uint64_t inst_seed = pick.next_u64();
      out[static_cast<std::size_t>(idx)] =
          generate_instance(rapid, spec.snr_grid_db[si], spec.channels[ci], delay, inst_seed,
                            spec.zc, spec.wf);
    }
  });
  return out;
}

// ---- splits ----

struct SplitFractions {
  double train = 0.525;  // 75/25 outer split, then 30% of the train side held out
  double val = 0.225;
  double test = 0.25;
};

struct SplitResult {
  std::vector<PrachInstance> train, val, test;
  std::vector<std::string> warnings;  ///< empty-stratum notes, non-fatal
};

/// Deterministic disjoint exhaustive split with exact largest-remainder
/// counts. Parts keep the input's relative record order.
SplitResult split_records(const std::vector<PrachInstance>& records, const SplitFractions& fr,
                          std::uint64_t seed);

// ---- binary record file + manifest sidecar ----

inline constexpr std::uint16_t kRecordFormatVersion = 1;

struct DatasetManifest {
  std::uint16_t format_version = kRecordFormatVersion;
  std::uint64_t record_count = 0;
  std::uint64_t generator_seed = 0;
  std::vector<std::string> channels;
  std::vector<double> snr_grid_db;
  long long count_per_snr = 0;
  int max_delay = 0;
  SplitFractions split;
  bool has_split = false;
  std::vector<std::string> strata;  ///< "channel/snr=count" bookkeeping lines
};

std::string manifest_path_for(const std::string& record_path);
void write_records(const std::string& path, const std::vector<PrachInstance>& records,
                   const DatasetManifest& manifest);
std::vector<PrachInstance> read_records(const std::string& path);
DatasetManifest read_manifest(const std::string& record_path);
DatasetManifest make_manifest(const GenerationSpec& spec, const std::vector<PrachInstance>& records);

// ---- model input features ----

/// Input views the classifiers consume. RawFreq is the grid itself;
/// Idft139 applies a per-symbol unnormalized-inverse (1/l_ra) transform of
/// each grid column back to the lag domain.
enum class InputTransform : std::uint8_t { RawFreq = 0, Idft139 = 1 };

inline const char* transform_name(InputTransform t) {
  return t == InputTransform::RawFreq ? "raw_freq" : "idft_139";
}

/// One instance as a (l_ra * n_symbols) x 2 real matrix: row k*n_symbols+s
/// holds {Re, Im} of subcarrier (or lag) k in symbol s.
template <typename S>
nn::MatX<S> instance_features(const GridF& grid, InputTransform transform) {
  const Eigen::Index l = grid.rows(), n_sym = grid.cols();
  nn::MatX<S> out(l * n_sym, 2);
  for (Eigen::Index s = 0; s < n_sym; ++s) {
    if (transform == InputTransform::RawFreq) {
      for (Eigen::Index k = 0; k < l; ++k) {
        out(k * n_sym + s, 0) = static_cast<S>(grid(k, s).real());
        out(k * n_sym + s, 1) = static_cast<S>(grid(k, s).imag());
      }
    } else {
      const VecXc t = idft(grid.col(s).cast<std::complex<double>>());
      for (Eigen::Index k = 0; k < l; ++k) {
        out(k * n_sym + s, 0) = static_cast<S>(t[k].real());
        out(k * n_sym + s, 1) = static_cast<S>(t[k].imag());
      }
    }
  }
  return out;
}

/// Stacked features for a whole record set (examples back to back) plus the
/// labels for the requested task.
template <typename S>
void build_features(const std::vector<PrachInstance>& records, InputTransform transform,
                    nn::MatX<S>& features, std::vector<int>& labels) {
  if (records.empty()) {
    features.resize(0, 2);
    labels.clear();
    return;
  }
  const Eigen::Index rpe = records.front().grid.rows() * records.front().grid.cols();
  features.resize(rpe * static_cast<Eigen::Index>(records.size()), 2);
  labels.resize(records.size());
  nn::parallel_chunks(static_cast<Eigen::Index>(records.size()), 64,
                      [&](Eigen::Index b, Eigen::Index e, Eigen::Index) {
                        for (Eigen::Index i = b; i < e; ++i) {
                          const auto& r = records[static_cast<std::size_t>(i)];
                          features.middleRows(i * rpe, rpe) =
                              instance_features<S>(r.grid, transform);
                          labels[static_cast<std::size_t>(i)] =
                              transform == InputTransform::RawFreq ? r.rapid_label : r.ta_label;
                        }
                      });
}

/// Deterministic shuffled batch index stream over a record set.
class BatchIterator {
 public:
  BatchIterator(Eigen::Index count, Eigen::Index batch_size, std::uint64_t shuffle_seed)
      : batch_(batch_size), order_(static_cast<std::size_t>(count)) {
    if (batch_size < 1) throw std::invalid_argument("batch iterator: batch_size < 1");
    for (Eigen::Index i = 0; i < count; ++i) order_[static_cast<std::size_t>(i)] = i;
    Rng rng(shuffle_seed);
    rng.shuffle(order_);
  }

  /// Fills `out` with the next batch of example indices; false when done.
  bool next(std::vector<Eigen::Index>& out) {
    if (at_ >= static_cast<Eigen::Index>(order_.size())) return false;
    const Eigen::Index n =
        std::min<Eigen::Index>(batch_, static_cast<Eigen::Index>(order_.size()) - at_);
    out.assign(order_.begin() + at_, order_.begin() + at_ + n);
    at_ += n;
    return true;
  }

 private:
  Eigen::Index batch_ = 0;
  Eigen::Index at_ = 0;
  std::vector<Eigen::Index> order_;
};

}  // namespace prach
