#include "prach/receivers_nn.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace prach {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'N', 'N', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32_vec(std::string& b, const nn::VecX<float>& v) {
  put_u64(b, static_cast<std::uint64_t>(v.size()));
  const std::size_t at = b.size();
  b.resize(at + static_cast<std::size_t>(v.size()) * 4);
  std::memcpy(b.data() + at, v.data(), static_cast<std::size_t>(v.size()) * 4);
}

struct Reader {
  const std::string& buf;
  std::size_t at = 0;
  void need(std::size_t n) const {
    if (at + n > buf.size()) throw std::runtime_error("checkpoint: truncated");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[at++])) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[at++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[at++])) << (8 * i);
    return v;
  }
  nn::VecX<float> f32_vec() {
    const std::uint64_t n = u64();
    need(n * 4);
    nn::VecX<float> v(static_cast<Eigen::Index>(n));
    std::memcpy(v.data(), buf.data() + at, n * 4);
    at += n * 4;
    return v;
  }
};

json spec_to_json(const PrachModelSpec& s) {
  const auto& g = s.graph;
  return json{{"name", s.name},
              {"transform", transform_name(s.transform)},
              {"optimizer", nn::optimizer_name(s.optimizer)},
              {"learning_rate", s.learning_rate},
              {"graph",
               {{"h", g.h},
                {"w", g.w},
                {"c_in", g.c_in},
                {"conv_channels", g.conv_channels},
                {"n_hidden_convs", g.n_hidden_convs},
                {"kh", g.kh},
                {"kw", g.kw},
                {"dense_width", g.dense_width},
                {"n_out", g.n_out},
                {"dropout_p", g.dropout_p},
                {"lrelu_slope", g.lrelu_slope}}}};
}

PrachModelSpec spec_from_json(const json& j) {
  PrachModelSpec s;
  s.name = j.at("name").get<std::string>();
  const auto tr = j.at("transform").get<std::string>();
  if (tr == "raw_freq")
    s.transform = InputTransform::RawFreq;
  else if (tr == "idft_139")
    s.transform = InputTransform::Idft139;
  else
    throw std::runtime_error("checkpoint: unknown transform " + tr);
  const auto op = j.at("optimizer").get<std::string>();
  if (op == "sgd")
    s.optimizer = nn::OptimizerKind::Sgd;
  else if (op == "adam")
    s.optimizer = nn::OptimizerKind::Adam;
  else
    throw std::runtime_error("checkpoint: unknown optimizer " + op);
  s.learning_rate = j.at("learning_rate").get<double>();
  const auto& g = j.at("graph");
  s.graph.h = g.at("h").get<int>();
  s.graph.w = g.at("w").get<int>();
  s.graph.c_in = g.at("c_in").get<int>();
  s.graph.conv_channels = g.at("conv_channels").get<int>();
  s.graph.n_hidden_convs = g.at("n_hidden_convs").get<int>();
  s.graph.kh = g.at("kh").get<int>();
  s.graph.kw = g.at("kw").get<int>();
  s.graph.dense_width = g.at("dense_width").get<int>();
  s.graph.n_out = g.at("n_out").get<int>();
  s.graph.dropout_p = g.at("dropout_p").get<double>();
  s.graph.lrelu_slope = g.at("lrelu_slope").get<double>();
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const PrachModel& model,
                     const nn::Adam<float>* adam_state) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u16(buf, kVersion);
  const std::string cfg = spec_to_json(model.spec).dump();
  put_u32(buf, static_cast<std::uint32_t>(cfg.size()));
  buf += cfg;
  buf.push_back(model.trained ? 1 : 0);
  put_u64(buf, model.params.init_seed);
  put_f32_vec(buf, model.params.theta);
  put_f32_vec(buf, model.params.state);
  const bool with_opt = adam_state != nullptr && adam_state->m.size() > 0;
  buf.push_back(with_opt ? 1 : 0);
  if (with_opt) {
    put_u64(buf, static_cast<std::uint64_t>(adam_state->t));
    put_f32_vec(buf, adam_state->m);
    put_f32_vec(buf, adam_state->v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

PrachModel load_checkpoint(const std::string& path, nn::Adam<float>* adam_state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(4);
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  r.at = 4;
  if (r.u16() != kVersion) throw std::runtime_error("checkpoint: unsupported version");
  const std::uint32_t cfg_len = r.u32();
  r.need(cfg_len);
  const json j = json::parse(buf.substr(r.at, cfg_len));
  r.at += cfg_len;

  PrachModel m;
  m.spec = spec_from_json(j);
  m.net = make_classifier<float>(m.spec.graph);
  r.need(1);
  m.trained = buf[r.at++] != 0;
  m.params.init_seed = r.u64();
  m.params.theta = r.f32_vec();
  m.params.state = r.f32_vec();
  if (m.params.theta.size() != m.net.theta_size() || m.params.state.size() != m.net.state_size())
    throw std::runtime_error("checkpoint: parameter size mismatch with graph config");
  r.need(1);
  const bool with_opt = buf[r.at++] != 0;
  if (with_opt) {
    const auto t = static_cast<long>(r.u64());
    auto mvec = r.f32_vec();
    auto vvec = r.f32_vec();
    if (adam_state != nullptr) {
      adam_state->t = t;
      adam_state->m = std::move(mvec);
      adam_state->v = std::move(vvec);
    }
  }
  return m;
}

}  // namespace prach
