#include "phlie/sysgen.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace phlie {

namespace {

using nlohmann::json;

constexpr char kMagic[5] = {'P', 'H', 'L', 'D', '1'};
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "data.bin is written in native little-endian order");

json spec_json(const SystemSpec& s) {
  return json{{"name", s.name},
              {"state_dim", s.state_dim},
              {"param_dim", s.param_dim},
              {"param_name", s.param_name},
              {"range", {s.lo, s.hi}},
              {"fixed_params", s.fixed_params},
              {"solver_step", s.solver_step},
              {"sample_interval", s.sample_interval},
              {"t_trans", s.t_trans},
              {"t_end", s.t_end},
              {"nonautonomous", s.nonautonomous}};
}

SystemSpec spec_from_json(const json& j) {
  SystemSpec s;
  s.name = j.at("name").get<std::string>();
  s.state_dim = j.at("state_dim").get<std::size_t>();
  s.param_dim = j.at("param_dim").get<std::size_t>();
  s.param_name = j.at("param_name").get<std::string>();
  s.lo = j.at("range").at(0).get<double>();
  s.hi = j.at("range").at(1).get<double>();
  s.fixed_params = j.at("fixed_params").get<std::map<std::string, double>>();
  s.solver_step = j.at("solver_step").get<double>();
  s.sample_interval = j.at("sample_interval").get<double>();
  s.t_trans = j.at("t_trans").get<double>();
  s.t_end = j.at("t_end").get<double>();
  s.nonautonomous = j.at("nonautonomous").get<bool>();
  return s;
}

}  // namespace

void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json m;
  m["format"] = "phlie-dataset";
  m["version"] = kVersion;
  m["system"] = spec_json(ds.system);
  m["split"] = split_name(ds.split);
  m["params"] = ds.params;
  m["shape"] = {ds.params.size(), ds.n_ics, ds.n_steps, ds.dim()};
  m["t0"] = ds.t0;
  m["scaler"] = {{"x_mean", ds.scaler.x_mean},
                 {"x_std", ds.scaler.x_std},
                 {"dx_mean", ds.scaler.dx_mean},
                 {"dx_std", ds.scaler.dx_std}};
  m["noise_level"] = ds.noise_level;
  m["seed"] = ds.seed;
  m["layout"] = "X then dX, float64 little-endian, row-major [param][ic][time][dim], oldest sample first";
  {
    std::ofstream f(dir / "manifest.json");
    if (!f) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    f << m.dump(2) << '\n';
  }
  std::ofstream b(dir / "data.bin", std::ios::binary);
  if (!b) throw std::runtime_error("cannot write " + (dir / "data.bin").string());
  b.write(kMagic, sizeof kMagic);
  b.write(reinterpret_cast<const char*>(ds.X.data()), static_cast<std::streamsize>(ds.X.size() * sizeof(double)));
  b.write(reinterpret_cast<const char*>(ds.dX.data()), static_cast<std::streamsize>(ds.dX.size() * sizeof(double)));
  if (!b) throw std::runtime_error("short write to " + (dir / "data.bin").string());
}

TrajectoryDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw DatasetFormatError("missing manifest: " + (dir / "manifest.json").string());
  json m;
  try {
    f >> m;
  } catch (const json::exception& e) {
    throw DatasetFormatError("unreadable manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  TrajectoryDataset ds;
  try {
    if (m.at("version").get<int>() != kVersion) throw DatasetFormatError("unsupported dataset version");
    ds.system = spec_from_json(m.at("system"));
    ds.split = parse_split(m.at("split").get<std::string>());
    ds.params = m.at("params").get<std::vector<double>>();
    const auto shape = m.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 4 || shape[0] != ds.params.size() || shape[3] != ds.system.state_dim) {
      throw DatasetFormatError("manifest shape disagrees with params/system");
    }
    ds.n_ics = shape[1];
    ds.n_steps = shape[2];
    ds.t0 = m.at("t0").get<double>();
    const auto& sc = m.at("scaler");
    ds.scaler.x_mean = sc.at("x_mean").get<std::vector<double>>();
    ds.scaler.x_std = sc.at("x_std").get<std::vector<double>>();
    ds.scaler.dx_mean = sc.at("dx_mean").get<std::vector<double>>();
    ds.scaler.dx_std = sc.at("dx_std").get<std::vector<double>>();
    ds.noise_level = m.at("noise_level").get<double>();
    ds.seed = m.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DatasetFormatError(std::string("bad manifest: ") + e.what());
  }

  std::ifstream b(dir / "data.bin", std::ios::binary);
  if (!b) throw DatasetFormatError("missing data.bin in " + dir.string());
  char magic[sizeof kMagic];
  b.read(magic, sizeof magic);
  if (!b || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DatasetFormatError("bad magic in data.bin");
  const std::size_t n = ds.params.size() * ds.n_ics * ds.n_steps * ds.dim();
  b.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(b.tellg()) - sizeof kMagic;
  if (bytes != 2 * n * sizeof(double)) {
    throw DatasetFormatError("data.bin holds " + std::to_string(bytes / sizeof(double)) + " floats, manifest declares " +
                             std::to_string(2 * n));
  }
  b.seekg(sizeof kMagic);
  ds.X.resize(n);
  ds.dX.resize(n);
  b.read(reinterpret_cast<char*>(ds.X.data()), static_cast<std::streamsize>(n * sizeof(double)));
  b.read(reinterpret_cast<char*>(ds.dX.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!b) throw DatasetFormatError("truncated data.bin");
  return ds;
}

}  // namespace phlie
