#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

#include "prach/dataset.hpp"
#include "prach/receivers_nn.hpp"

namespace prach {

/// Accuracy table for the four receivers over one test set, with per-class
/// confusion matrices and an embedded config fingerprint.
struct EvalReport {
  std::vector<float> snrs;              ///< ascending
  std::vector<std::string> receivers;   ///< fixed order
  // cells[receiver][snr] = {correct, total}
  std::vector<std::vector<std::pair<long, long>>> cells;
  std::map<std::string, Eigen::MatrixXi> confusion;  ///< rows true, cols predicted
  std::string fingerprint;
  std::vector<std::pair<std::string, std::string>> notes;  ///< emitted as comment lines

  double accuracy(const std::string& receiver, float snr) const;
  double mean_accuracy(const std::string& receiver) const;
  long total_count(const std::string& receiver) const;
};

inline const std::vector<std::string>& receiver_names() {
  static const std::vector<std::string> names = {"corr_rapid", "corr_ta", "nn_rapid", "nn_ta"};
  return names;
}

/// FNV-1a over a canonical config string; stable across runs and builds.
std::uint64_t fingerprint64(const std::string& text);

/// Runs the conventional and the neural receivers over every instance and
/// aggregates per-SNR accuracy plus confusion counts.
EvalReport evaluate_receivers(const std::vector<PrachInstance>& test, const PrachModel& rapid,
                              const PrachModel& ta, const ZcConfig& zc,
                              std::vector<std::pair<std::string, std::string>> notes = {});

std::string report_to_string(const EvalReport& report);
void write_report(const std::string& path, const EvalReport& report);

/// Training front end shared by the CLI and the experiment matrix.
struct TrainRunConfig {
  int max_epochs = 40;
  int batch_size = 256;
  int patience = 10;
  double val_fraction = 0.3;  ///< held out of the provided training pool
  std::uint64_t split_seed = 17;
  std::uint64_t rapid_seed = 101;
  std::uint64_t ta_seed = 202;
  bool train_rapid = true;
  bool train_ta = true;
};

struct TrainOutcome {
  PrachModel rapid;
  PrachModel ta;
  std::string rapid_log;
  std::string ta_log;
};

/// Splits the pool train/val, trains the requested models with their bound
/// optimizers, returns best-validation parameters and formatted logs.
TrainOutcome train_models(const std::vector<PrachInstance>& pool, const TrainRunConfig& cfg);

/// Experiment matrix: same-channel references, mixed-channel training and
/// the cross-channel generalization case, all derived from one seed.
struct SweepConfig {
  std::string out_dir;
  std::uint64_t seed = 1;
  int train_count_per_snr = 1000;
  int test_count_per_snr = 500;
  std::vector<double> snr_grid_db = {-15, -10, -5, 0, 5, 10, 15, 20};
  TrainRunConfig train{};
  ZcConfig zc{};
  WaveformConfig wf{};
  bool keep_datasets = true;  ///< write record files next to the reports
};

struct SweepResult {
  std::vector<std::string> scenario_names;
  std::vector<std::string> report_paths;
  std::string summary_path;
};

SweepResult run_sweep(const SweepConfig& cfg);

}  // namespace prach
