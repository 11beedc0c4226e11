#include "prach/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace prach {

namespace {

using json = nlohmann::json;

// little-endian packers, host-order independent
void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}
void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& b, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t at = 0;

  void need(std::size_t n) const {
    if (at + n > buf.size()) throw std::runtime_error("record file: truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[at++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[at++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[at++])) << (8 * i);
    return v;
  }
  float f32() {
    need(4);
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[at++])) << (8 * i);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
};

constexpr char kMagic[4] = {'P', 'R', 'C', 'H'};

json snr_to_json(double v) {
  if (std::isinf(v)) return json(v > 0 ? "inf" : "-inf");
  return json(v);
}

double snr_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw std::runtime_error("manifest: bad snr value " + s);
  }
  return j.get<double>();
}

}  // namespace

std::string manifest_path_for(const std::string& record_path) {
  return record_path + ".manifest.json";
}

DatasetManifest make_manifest(const GenerationSpec& spec, const std::vector<PrachInstance>& records) {
  DatasetManifest m;
  m.record_count = records.size();
  m.generator_seed = spec.seed;
  for (auto c : spec.channels) m.channels.emplace_back(channel_code_name(c));
  m.snr_grid_db = spec.snr_grid_db;
  m.count_per_snr = spec.count_per_snr;
  m.max_delay = max_delay_for_classes(kTaClasses, spec.zc, spec.wf);
  std::map<std::pair<std::uint8_t, float>, long long> strata;
  for (const auto& r : records) strata[{static_cast<std::uint8_t>(r.channel), r.snr_db}]++;
  for (const auto& [key, count] : strata) {
    std::ostringstream oss;
    oss << channel_code_name(static_cast<ChannelCode>(key.first)) << "/" << key.second << "="
        << count;
    m.strata.push_back(oss.str());
  }
  return m;
}

void write_records(const std::string& path, const std::vector<PrachInstance>& records,
                   const DatasetManifest& manifest) {
  std::string buf;
  const std::size_t grid_elems =
      records.empty() ? 0
                      : static_cast<std::size_t>(records.front().grid.rows()) *
                            static_cast<std::size_t>(records.front().grid.cols());
  buf.reserve(14 + records.size() * (17 + grid_elems * 8));
  buf.append(kMagic, 4);
  put_u16(buf, kRecordFormatVersion);
  put_u64(buf, records.size());
  for (const auto& r : records) {
    put_f32(buf, r.snr_db);
    buf.push_back(static_cast<char>(r.channel));
    buf.push_back(static_cast<char>(r.rapid_label));
    buf.push_back(static_cast<char>(r.ta_label));
    put_u16(buf, r.delay_samples);
    put_u64(buf, r.seed);
    for (Eigen::Index k = 0; k < r.grid.rows(); ++k)
      for (Eigen::Index s = 0; s < r.grid.cols(); ++s) {
        put_f32(buf, r.grid(k, s).real());
        put_f32(buf, r.grid(k, s).imag());
      }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path);

  json j;
  j["format_version"] = manifest.format_version;
  j["record_count"] = manifest.record_count;
  j["generator_seed"] = manifest.generator_seed;
  j["channels"] = manifest.channels;
  json snrs = json::array();
  for (double v : manifest.snr_grid_db) snrs.push_back(snr_to_json(v));
  j["snr_grid_db"] = snrs;
  j["count_per_snr"] = manifest.count_per_snr;
  j["max_delay"] = manifest.max_delay;
  if (manifest.has_split)
    j["split"] = {{"train", manifest.split.train}, {"val", manifest.split.val}, {"test", manifest.split.test}};
  else
    j["split"] = nullptr;
  j["strata"] = manifest.strata;
  std::ofstream mout(manifest_path_for(path), std::ios::trunc);
  if (!mout) throw std::runtime_error("cannot open for write: " + manifest_path_for(path));
  mout << j.dump(2) << "\n";
}

std::vector<PrachInstance> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(4);
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw std::runtime_error("record file: bad magic");
  r.at = 4;
  const std::uint16_t version = r.u16();
  if (version != kRecordFormatVersion)
    throw std::runtime_error("record file: unsupported version " + std::to_string(version));
  const std::uint64_t count = r.u64();
  // grid geometry is fixed by the format
  const Eigen::Index l_ra = 139, n_sym = 2;
  std::vector<PrachInstance> records(count);
  for (auto& rec : records) {
    rec.snr_db = r.f32();
    rec.channel = static_cast<ChannelCode>(r.u8());
    rec.rapid_label = r.u8();
    rec.ta_label = r.u8();
    rec.delay_samples = r.u16();
    rec.seed = r.u64();
    rec.grid.resize(l_ra, n_sym);
    for (Eigen::Index k = 0; k < l_ra; ++k)
      for (Eigen::Index s = 0; s < n_sym; ++s) {
        const float re = r.f32();
        const float im = r.f32();
        rec.grid(k, s) = {re, im};
      }
  }
  if (r.at != buf.size()) throw std::runtime_error("record file: trailing bytes");
  return records;
}

DatasetManifest read_manifest(const std::string& record_path) {
  std::ifstream in(manifest_path_for(record_path));
  if (!in) throw std::runtime_error("cannot open: " + manifest_path_for(record_path));
  json j = json::parse(in);
  DatasetManifest m;
  m.format_version = j.at("format_version").get<std::uint16_t>();
  m.record_count = j.at("record_count").get<std::uint64_t>();
  m.generator_seed = j.at("generator_seed").get<std::uint64_t>();
  m.channels = j.at("channels").get<std::vector<std::string>>();
  for (const auto& v : j.at("snr_grid_db")) m.snr_grid_db.push_back(snr_from_json(v));
  m.count_per_snr = j.at("count_per_snr").get<long long>();
  m.max_delay = j.at("max_delay").get<int>();
  if (!j.at("split").is_null()) {
    m.has_split = true;
    m.split.train = j["split"]["train"].get<double>();
    m.split.val = j["split"]["val"].get<double>();
    m.split.test = j["split"]["test"].get<double>();
  }
  m.strata = j.at("strata").get<std::vector<std::string>>();
  return m;
}

SplitResult split_records(const std::vector<PrachInstance>& records, const SplitFractions& fr,
                          std::uint64_t seed) {
  const double sum = fr.train + fr.val + fr.test;
  if (fr.train < 0 || fr.val < 0 || fr.test < 0 || std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must be non-negative and sum to 1");
  const std::size_t n = records.size();

  // exact part sizes by largest remainder
  const double want[3] = {fr.train * n, fr.val * n, fr.test * n};
  std::size_t sizes[3];
  double rem[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    sizes[i] = static_cast<std::size_t>(std::floor(want[i]));
    rem[i] = want[i] - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++sizes[best];
    rem[best] = -1.0;
    ++assigned;
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  // membership by shuffled position, parts emitted in original order
  std::vector<int> part(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const int p = i < sizes[0] ? 0 : (i < sizes[0] + sizes[1] ? 1 : 2);
    part[order[i]] = p;
  }
  SplitResult out;
  out.train.reserve(sizes[0]);
  out.val.reserve(sizes[1]);
  out.test.reserve(sizes[2]);
  for (std::size_t i = 0; i < n; ++i) {
    if (part[i] == 0)
      out.train.push_back(records[i]);
    else if (part[i] == 1)
      out.val.push_back(records[i]);
    else
      out.test.push_back(records[i]);
  }

  // warn when a populated stratum misses a non-empty part
  std::map<std::pair<std::uint8_t, float>, std::array<long, 3>> strata;
  for (std::size_t i = 0; i < n; ++i)
    strata[{static_cast<std::uint8_t>(records[i].channel), records[i].snr_db}][static_cast<std::size_t>(part[i])]++;
  const char* part_names[3] = {"train", "val", "test"};
  const double fracs[3] = {fr.train, fr.val, fr.test};
  for (const auto& [key, counts] : strata)
    for (int p = 0; p < 3; ++p)
      if (fracs[p] > 0.0 && counts[static_cast<std::size_t>(p)] == 0) {
        std::ostringstream oss;
        oss << "stratum " << channel_code_name(static_cast<ChannelCode>(key.first)) << "/"
            << key.second << " is empty in " << part_names[p];
        out.warnings.push_back(oss.str());
      }
  return out;
}

}  // namespace prach
