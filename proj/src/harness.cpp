#include "prach/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace prach {

double EvalReport::accuracy(const std::string& receiver, float snr) const {
  for (std::size_t r = 0; r < receivers.size(); ++r) {
    if (receivers[r] != receiver) continue;
    for (std::size_t s = 0; s < snrs.size(); ++s)
      if (snrs[s] == snr) {
        const auto& [c, t] = cells[r][s];
        return t == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(t);
      }
    throw std::invalid_argument("report: no cell at that snr");
  }
  throw std::invalid_argument("report: unknown receiver " + receiver);
}

double EvalReport::mean_accuracy(const std::string& receiver) const {
  for (std::size_t r = 0; r < receivers.size(); ++r) {
    if (receivers[r] != receiver) continue;
    long c = 0, t = 0;
    for (const auto& [ci, ti] : cells[r]) {
      c += ci;
      t += ti;
    }
    return t == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(t);
  }
  throw std::invalid_argument("report: unknown receiver " + receiver);
}

long EvalReport::total_count(const std::string& receiver) const {
  for (std::size_t r = 0; r < receivers.size(); ++r) {
    if (receivers[r] != receiver) continue;
    long t = 0;
    for (const auto& cell : cells[r]) t += cell.second;
    return t;
  }
  throw std::invalid_argument("report: unknown receiver " + receiver);
}

std::uint64_t fingerprint64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

std::string fmt_snr(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(v));
  return buf;
}

}  // namespace

EvalReport evaluate_receivers(const std::vector<PrachInstance>& test, const PrachModel& rapid,
                              const PrachModel& ta, const ZcConfig& zc,
                              std::vector<std::pair<std::string, std::string>> notes) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (!rapid.trained || !ta.trained) throw std::logic_error("evaluate: untrained model");

  EvalReport rep;
  rep.receivers = receiver_names();
  rep.notes = std::move(notes);

  std::set<float> snr_set;
  for (const auto& r : test) snr_set.insert(r.snr_db);
  rep.snrs.assign(snr_set.begin(), snr_set.end());
  std::map<float, std::size_t> snr_idx;
  for (std::size_t i = 0; i < rep.snrs.size(); ++i) snr_idx[rep.snrs[i]] = i;

  const Eigen::Index n = static_cast<Eigen::Index>(test.size());

  // conventional receiver, batch-parallel
  std::vector<Detection> corr(static_cast<std::size_t>(n));
  const VecXc base_freq = to_frequency_domain(generate_base_sequence(zc));
  nn::parallel_chunks(n, 64, [&](Eigen::Index b, Eigen::Index e, Eigen::Index) {
    for (Eigen::Index i = b; i < e; ++i) {
      const RxGrid grid = test[static_cast<std::size_t>(i)].grid.cast<std::complex<double>>();
      corr[static_cast<std::size_t>(i)] = map_peak(correlate(grid, base_freq), zc);
    }
  });

  // neural receivers, batched eval over the whole set
  nn::MatX<float> feat;
  std::vector<int> labels_unused;
  build_features<float>(test, rapid.spec.transform, feat, labels_unused);
  nn::DataView<float> rapid_view{&feat, &labels_unused, rapid.rows_per_example()};
  const std::vector<int> nn_rapid = nn::predict(rapid.net, rapid.params, rapid_view);
  nn::MatX<float> feat_ta;
  build_features<float>(test, ta.spec.transform, feat_ta, labels_unused);
  nn::DataView<float> ta_view{&feat_ta, &labels_unused, ta.rows_per_example()};
  const std::vector<int> nn_ta = nn::predict(ta.net, ta.params, ta_view);

  const int n_rapid_classes = num_rapids(zc);
  const int n_ta_classes = zc.n_cs;  // decoded ta can reach n_cs-1
  rep.cells.assign(rep.receivers.size(),
                   std::vector<std::pair<long, long>>(rep.snrs.size(), {0, 0}));
  rep.confusion["corr_rapid"] = Eigen::MatrixXi::Zero(n_rapid_classes, n_rapid_classes);
  rep.confusion["nn_rapid"] = Eigen::MatrixXi::Zero(n_rapid_classes, n_rapid_classes);
  rep.confusion["corr_ta"] = Eigen::MatrixXi::Zero(n_ta_classes, n_ta_classes);
  rep.confusion["nn_ta"] = Eigen::MatrixXi::Zero(n_ta_classes, n_ta_classes);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& inst = test[static_cast<std::size_t>(i)];
    const std::size_t s = snr_idx[inst.snr_db];
    const int true_rapid = inst.rapid_label;
    const int true_ta = inst.ta_label;
    const int preds[4] = {corr[static_cast<std::size_t>(i)].rapid,
                          corr[static_cast<std::size_t>(i)].ta,
                          nn_rapid[static_cast<std::size_t>(i)], nn_ta[static_cast<std::size_t>(i)]};
    const int truths[4] = {true_rapid, true_ta, true_rapid, true_ta};
    for (int rcv = 0; rcv < 4; ++rcv) {
      auto& cell = rep.cells[static_cast<std::size_t>(rcv)][s];
      cell.second++;
      if (preds[rcv] == truths[rcv]) cell.first++;
      rep.confusion[rep.receivers[static_cast<std::size_t>(rcv)]](truths[rcv], preds[rcv])++;
    }
  }

  std::ostringstream fp;
  fp << "zc:" << zc.l_ra << "," << zc.u << "," << zc.n_cs << ";rapid_seed:" << rapid.params.init_seed
     << ";ta_seed:" << ta.params.init_seed << ";test_n:" << n;
  for (const auto& [k, v] : rep.notes) fp << ";" << k << ":" << v;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(fingerprint64(fp.str())));
  rep.fingerprint = hex;
  return rep;
}

std::string report_to_string(const EvalReport& rep) {
  std::ostringstream out;
  out << "# prach-eval v1\n";
  out << "# fingerprint=" << rep.fingerprint << "\n";
  for (const auto& [k, v] : rep.notes) out << "# " << k << "=" << v << "\n";
  out << "snr_db\treceiver\tmetric\tvalue\n";
  char buf[64];
  for (std::size_t s = 0; s < rep.snrs.size(); ++s) {
    for (std::size_t r = 0; r < rep.receivers.size(); ++r) {
      const auto& [c, t] = rep.cells[r][s];
      std::snprintf(buf, sizeof(buf), "%.6f",
                    t == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(t));
      out << fmt_snr(rep.snrs[s]) << "\t" << rep.receivers[r] << "\taccuracy\t" << buf << "\n";
    }
  }
  for (const auto& name : rep.receivers) {
    const auto it = rep.confusion.find(name);
    if (it == rep.confusion.end()) continue;
    const auto& m = it->second;
    out << "# confusion " << name << " rows=true cols=predicted " << m.rows() << "x" << m.cols()
        << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "\t" : "") << m(i, j);
      out << "\n";
    }
  }
  return out.str();
}

void write_report(const std::string& path, const EvalReport& rep) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  const std::string text = report_to_string(rep);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

TrainOutcome train_models(const std::vector<PrachInstance>& pool, const TrainRunConfig& cfg) {
  if (pool.empty()) throw std::invalid_argument("train_models: empty pool");
  SplitFractions fr;
  fr.train = 1.0 - cfg.val_fraction;
  fr.val = cfg.val_fraction;
  fr.test = 0.0;
  const SplitResult split = split_records(pool, fr, cfg.split_seed);

  TrainOutcome out;
  out.rapid = build_rapid_model(cfg.rapid_seed);
  out.ta = build_ta_model(cfg.ta_seed);

  for (PrachModel* model : {&out.rapid, &out.ta}) {
    const bool wanted = model->spec.name == "rapid" ? cfg.train_rapid : cfg.train_ta;
    if (!wanted) continue;
    nn::MatX<float> tr_feat, va_feat;
    std::vector<int> tr_lab, va_lab;
    build_features<float>(split.train, model->spec.transform, tr_feat, tr_lab);
    build_features<float>(split.val, model->spec.transform, va_feat, va_lab);
    nn::DataView<float> tr{&tr_feat, &tr_lab, model->rows_per_example()};
    nn::DataView<float> va{&va_feat, &va_lab, model->rows_per_example()};
    nn::TrainConfig tc;
    tc.optimizer = model->spec.optimizer;
    tc.learning_rate = model->spec.learning_rate;
    tc.batch_size = cfg.batch_size;
    tc.max_epochs = cfg.max_epochs;
    tc.patience = cfg.patience;
    tc.seed = model->params.init_seed;
    auto result = nn::train(model->net, model->params, tr, va, tc);
    model->params = result.best_params;
    model->trained = true;
    std::ostringstream hdr;
    hdr << "model=" << model->spec.name << " optimizer=" << nn::optimizer_name(tc.optimizer)
        << " lr=" << tc.learning_rate << " batch=" << tc.batch_size << " epochs=" << tc.max_epochs
        << " patience=" << tc.patience << " seed=" << tc.seed << " train_n=" << split.train.size()
        << " val_n=" << split.val.size() << " best_epoch=" << result.best_epoch << " best_val_acc="
        << result.best_val_accuracy;
    const std::string log = nn::format_train_log(result.log, hdr.str());
    (model->spec.name == "rapid" ? out.rapid_log : out.ta_log) = log;
  }
  return out;
}

namespace {

struct Scenario {
  std::string name;
  std::string train_tag;
  std::string test_tag;
};

}  // namespace

SweepResult run_sweep(const SweepConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  const std::vector<ChannelCode> train_channels = {ChannelCode::Tdlc10, ChannelCode::Tdlc150,
                                                   ChannelCode::Tdlc300};

  // datasets
  std::map<std::string, std::vector<PrachInstance>> trains;
  int idx = 0;
  for (ChannelCode ch : train_channels) {
    GenerationSpec spec;
    spec.channels = {ch};
    spec.snr_grid_db = cfg.snr_grid_db;
    spec.count_per_snr = cfg.train_count_per_snr;
    spec.seed = derive_seed(cfg.seed, 10 + static_cast<std::uint64_t>(idx));
    spec.zc = cfg.zc;
    spec.wf = cfg.wf;
    trains[channel_code_name(ch)] = generate_dataset(spec);
    if (cfg.keep_datasets) {
      const std::string path =
          (fs::path(cfg.out_dir) / ("train_" + std::string(channel_code_name(ch)) + ".bin")).string();
      write_records(path, trains[channel_code_name(ch)], make_manifest(spec, trains[channel_code_name(ch)]));
    }
    ++idx;
  }
  std::map<std::string, std::vector<PrachInstance>> tests;
  idx = 0;
  for (ChannelCode ch : {ChannelCode::Tdlc150, ChannelCode::Tdlc300}) {
    GenerationSpec spec;
    spec.channels = {ch};
    spec.snr_grid_db = cfg.snr_grid_db;
    spec.count_per_snr = cfg.test_count_per_snr;
    spec.seed = derive_seed(cfg.seed, 30 + static_cast<std::uint64_t>(idx));
    spec.zc = cfg.zc;
    spec.wf = cfg.wf;
    tests[channel_code_name(ch)] = generate_dataset(spec);
    if (cfg.keep_datasets) {
      const std::string path =
          (fs::path(cfg.out_dir) / ("test_" + std::string(channel_code_name(ch)) + ".bin")).string();
      write_records(path, tests[channel_code_name(ch)], make_manifest(spec, tests[channel_code_name(ch)]));
    }
    ++idx;
  }
  // mixed training pool is the concatenation of the per-channel pools
  std::vector<PrachInstance> mixed;
  for (ChannelCode ch : train_channels) {
    const auto& part = trains[channel_code_name(ch)];
    mixed.insert(mixed.end(), part.begin(), part.end());
  }

  // model pairs
  std::map<std::string, TrainOutcome> models;
  const std::vector<std::pair<std::string, const std::vector<PrachInstance>*>> pools = {
      {"tdlc150", &trains["tdlc150"]}, {"tdlc300", &trains["tdlc300"]}, {"mixed", &mixed}};
  int midx = 0;
  for (const auto& [tag, pool] : pools) {
    TrainRunConfig tc = cfg.train;
    tc.split_seed = derive_seed(cfg.seed, 50 + static_cast<std::uint64_t>(midx));
    tc.rapid_seed = derive_seed(cfg.seed, 60 + static_cast<std::uint64_t>(midx));
    tc.ta_seed = derive_seed(cfg.seed, 70 + static_cast<std::uint64_t>(midx));
    models.emplace(tag, train_models(*pool, tc));
    const auto& outcome = models.at(tag);
    for (const auto& [fname, text] :
         {std::pair<std::string, const std::string*>{"train_" + tag + "_rapid.log", &outcome.rapid_log},
          std::pair<std::string, const std::string*>{"train_" + tag + "_ta.log", &outcome.ta_log}}) {
      std::ofstream log((fs::path(cfg.out_dir) / fname).string(), std::ios::trunc);
      log << *text;
    }
    ++midx;
  }

  const std::vector<Scenario> scenarios = {
      {"same_tdlc150", "tdlc150", "tdlc150"},
      {"same_tdlc300", "tdlc300", "tdlc300"},
      {"mixed_to_tdlc150", "mixed", "tdlc150"},
      {"tdlc300_to_tdlc150", "tdlc300", "tdlc150"},
  };

  SweepResult result;
  std::vector<std::pair<std::string, EvalReport>> reports;
  for (const auto& sc : scenarios) {
    const auto& outcome = models.at(sc.train_tag);
    std::vector<std::pair<std::string, std::string>> notes = {
        {"scenario", sc.name},
        {"train_channels", sc.train_tag},
        {"test_channel", sc.test_tag},
        {"train_count_per_snr", std::to_string(cfg.train_count_per_snr)},
        {"test_count_per_snr", std::to_string(cfg.test_count_per_snr)},
        {"seed", std::to_string(cfg.seed)},
    };
    EvalReport rep = evaluate_receivers(tests.at(sc.test_tag), outcome.rapid, outcome.ta, cfg.zc,
                                        std::move(notes));
    const std::string path = (fs::path(cfg.out_dir) / ("scenario_" + sc.name + ".tsv")).string();
    write_report(path, rep);
    result.scenario_names.push_back(sc.name);
    result.report_paths.push_back(path);
    reports.emplace_back(sc.name, std::move(rep));
  }

  // summary: receivers ordered by mean accuracy, ties broken by name
  struct Row {
    std::string scenario, receiver;
    double mean_acc;
  };
  std::vector<Row> rows;
  for (const auto& [name, rep] : reports)
    for (const auto& rcv : rep.receivers) rows.push_back({name, rcv, rep.mean_accuracy(rcv)});
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.mean_acc != b.mean_acc) return a.mean_acc > b.mean_acc;
    if (a.receiver != b.receiver) return a.receiver < b.receiver;
    return a.scenario < b.scenario;
  });
  std::ostringstream sum;
  sum << "# prach-sweep v1\n";
  sum << "# seed=" << cfg.seed << " train_count_per_snr=" << cfg.train_count_per_snr
      << " test_count_per_snr=" << cfg.test_count_per_snr << "\n";
  sum << "# mixed_train_size=" << mixed.size() << " (sum of component sets)\n";
  sum << "scenario\treceiver\tmean_accuracy\n";
  char buf[64];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", row.mean_acc);
    sum << row.scenario << "\t" << row.receiver << "\t" << buf << "\n";
  }
  result.summary_path = (fs::path(cfg.out_dir) / "summary.tsv").string();
  std::ofstream out(result.summary_path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + result.summary_path);
  const std::string text = sum.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  return result;
}

}  // namespace prach
