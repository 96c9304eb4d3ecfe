#include "phlie/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace phlie {

using nlohmann::json;

namespace {

constexpr char kMagic[5] = {'P', 'H', 'L', 'W', '1'};

// JSON has no NaN; the epoch-0 row carries no train loss.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num_back(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace

json to_json(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"lr0", c.lr0},
              {"plateau_factor", c.plateau_factor},
              {"plateau_patience", c.plateau_patience},
              {"plateau_rel_margin", c.plateau_rel_margin},
              {"stop_patience", c.stop_patience},
              {"noise", c.noise},
              {"seeds", c.seeds},
              {"optimizer", optimizer_name(c.optimizer)},
              {"window_stride", c.window_stride},
              {"target_mode", target_mode_name(c.target_mode)},
              {"base_seed", c.base_seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (k == "max_epochs") c.max_epochs = v.get<std::size_t>();
    else if (k == "lr0") c.lr0 = v.get<double>();
    else if (k == "plateau_factor") c.plateau_factor = v.get<double>();
    else if (k == "plateau_patience") c.plateau_patience = v.get<std::size_t>();
    else if (k == "plateau_rel_margin") c.plateau_rel_margin = v.get<double>();
    else if (k == "stop_patience") c.stop_patience = v.get<std::size_t>();
    else if (k == "noise") c.noise = v.get<double>();
    else if (k == "seeds") c.seeds = v.get<std::size_t>();
    else if (k == "optimizer") c.optimizer = parse_optimizer(v.get<std::string>());
    else if (k == "window_stride") c.window_stride = v.get<std::size_t>();
    else if (k == "target_mode") c.target_mode = parse_target_mode(v.get<std::string>());
    else if (k == "base_seed") c.base_seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown training option '" + k + "'");
  }
  c.validate();
  return c;
}

json to_json(const TargetSpec& t) {
  json j{{"kind", target_kind_name(t.kind)}, {"input_dim", t.input_dim}, {"output_dim", t.output_dim}, {"isl", t.isl}};
  switch (t.kind) {
    case TargetKind::tcnn_cd:
      j["kernel"] = t.kernel;
      j["channels"] = t.channels;
      if (t.input_dim > 0) j["layers"] = t.layers();
      break;
    case TargetKind::lstm: j["hidden"] = t.lstm_hidden; break;
    case TargetKind::ffnn: j["hidden"] = t.ffnn_hidden; break;
  }
  return j;
}

json to_json(const ModelSpec& m) {
  json j{{"name", m.name}, {"variant", variant_name(m.variant)}, {"target", to_json(m.target)}};
  if (m.variant == Variant::phlienet) {
    j["lie"] = {{"n_e", m.n_e}, {"d_e", m.d_e}, {"sigma", m.sigma}};
    j["hypernet"] = {{"hidden", m.hnn_hidden}};
  }
  return j;
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec m;
  m.name = j.at("name").get<std::string>();
  m.variant = parse_variant(j.at("variant").get<std::string>());
  const json& t = j.at("target");
  m.target.kind = parse_target_kind(t.at("kind").get<std::string>());
  m.target.isl = t.value("isl", m.target.isl);
  m.target.input_dim = t.value("input_dim", std::size_t{0});
  m.target.output_dim = t.value("output_dim", std::size_t{0});
  switch (m.target.kind) {
    case TargetKind::tcnn_cd:
      m.target.kernel = t.value("kernel", m.target.kernel);
      m.target.channels = t.value("channels", m.target.channels);
      break;
    case TargetKind::lstm: m.target.lstm_hidden = t.value("hidden", m.target.lstm_hidden); break;
    case TargetKind::ffnn:
      m.target.ffnn_hidden = t.value("hidden", m.target.ffnn_hidden);
      if (!t.contains("isl")) m.target.isl = 1;
      break;
  }
  if (j.contains("lie")) {
    const json& l = j.at("lie");
    m.n_e = l.value("n_e", m.n_e);
    m.d_e = l.value("d_e", m.d_e);
    m.sigma = l.value("sigma", m.sigma);
  }
  if (j.contains("hypernet")) m.hnn_hidden = j.at("hypernet").value("hidden", m.hnn_hidden);
  return m;
}

json to_json(const Scaler& s) {
  return json{{"x_mean", s.x_mean}, {"x_std", s.x_std}, {"dx_mean", s.dx_mean}, {"dx_std", s.dx_std}};
}

Scaler scaler_from_json(const json& j) {
  Scaler s;
  s.x_mean = j.at("x_mean").get<std::vector<double>>();
  s.x_std = j.at("x_std").get<std::vector<double>>();
  s.dx_mean = j.at("dx_mean").get<std::vector<double>>();
  s.dx_std = j.at("dx_std").get<std::vector<double>>();
  return s;
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void save_checkpoint(const TrainResult& r, const TrainConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Model& m = r.model;
  json j;
  j["format"] = "phlie-model";
  j["version"] = 1;
  j["spec"] = to_json(m.spec);
  j["state_dim"] = m.state_dim;
  j["param_range"] = {m.lo, m.hi};
  j["scaler"] = to_json(m.scaler);
  json layout = json::array();
  for (const auto& t : weight_layout(m.spec.target)) layout.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
  j["target_layout"] = layout;
  if (m.spec.variant == Variant::phlienet) {
    std::vector<double> pos(m.bank.positions.data(), m.bank.positions.data() + m.bank.positions.size());
    j["anchor_positions"] = pos;
    j["hypernet_output_dim"] = m.hnn.output_dim;
  }
  json tensors = json::array();
  std::size_t off = 0;
  for (const auto& e : m.params.entries()) {
    tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", off}});
    off += e.values.size();
  }
  j["tensors"] = tensors;
  json hist = json::array();
  for (const auto& h : r.history) hist.push_back({h.epoch, num(h.train_loss), num(h.val_loss), h.lr});
  j["history"] = hist;
  j["history_columns"] = {"epoch", "train_loss", "val_loss", "lr"};
  j["best_val"] = num(r.best_val);
  j["best_epoch"] = r.best_epoch;
  j["failed"] = r.failed;
  j["failure"] = r.failure;
  j["seed"] = r.seed;
  j["seed_index"] = r.seed_index;
  j["train_config"] = to_json(cfg);
  j["config_hash"] = config_hash(json{{"spec", j["spec"]}, {"train", j["train_config"]}});
  {
    std::ofstream f(dir / "model.json");
    if (!f) throw std::runtime_error("cannot write " + (dir / "model.json").string());
    f << j.dump(2) << '\n';
  }
  std::ofstream b(dir / "weights.bin", std::ios::binary);
  b.write(kMagic, sizeof kMagic);
  for (const auto& e : m.params.entries())
    b.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * sizeof(double)));
  if (!b) throw std::runtime_error("short write to " + (dir / "weights.bin").string());
}

TrainResult load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "model.json");
  if (!f) throw std::runtime_error("missing checkpoint " + (dir / "model.json").string());
  json j;
  f >> j;
  if (j.value("format", "") != "phlie-model" || j.value("version", 0) != 1) {
    throw std::runtime_error("not a phlie model checkpoint: " + dir.string());
  }
  TrainResult r;
  Model& m = r.model;
  m.spec = model_spec_from_json(j.at("spec"));
  m.state_dim = j.at("state_dim").get<std::size_t>();
  m.lo = j.at("param_range").at(0).get<double>();
  m.hi = j.at("param_range").at(1).get<double>();
  m.scaler = scaler_from_json(j.at("scaler"));
  m.rebuild_structure();

  std::ifstream b(dir / "weights.bin", std::ios::binary);
  if (!b) throw std::runtime_error("missing " + (dir / "weights.bin").string());
  char magic[sizeof kMagic];
  b.read(magic, sizeof magic);
  if (!b || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error("bad magic in weights.bin");
  for (const auto& t : j.at("tensors")) {
    const auto shape = t.at("shape").get<Shape>();
    std::vector<double> v(shape_size(shape));
    b.seekg(static_cast<std::streamoff>(sizeof kMagic + t.at("offset").get<std::size_t>() * sizeof(double)));
    b.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!b) throw std::runtime_error("truncated weights.bin");
    m.params.add(t.at("name").get<std::string>(), shape, std::move(v));
  }
  for (const auto& h : j.at("history")) {
    r.history.push_back({h.at(0).get<std::size_t>(), num_back(h.at(1)), num_back(h.at(2)), h.at(3).get<double>()});
  }
  r.best_val = num_back(j.at("best_val"));
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.failed = j.at("failed").get<bool>();
  r.failure = j.at("failure").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.seed_index = j.at("seed_index").get<std::size_t>();
  return r;
}

}  // namespace phlie
