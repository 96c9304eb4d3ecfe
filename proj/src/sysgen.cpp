#include "phlie/sysgen.hpp"

#include "phlie/parallel.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace phlie {

std::size_t SystemSpec::substeps() const {
  const double ratio = sample_interval / solver_step;
  const double r = std::round(ratio);
  if (r < 1.0 || std::abs(ratio - r) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigError(name + ": sample interval " + std::to_string(sample_interval) +
                      " is not an integer multiple of the solver step " + std::to_string(solver_step));
  }
  return static_cast<std::size_t>(r);
}

void SystemSpec::validate() const {
  if (!(solver_step > 0.0)) throw ConfigError(name + ": solver step must be positive");
  if (!(lo <= hi)) throw ConfigError(name + ": parameter range is inverted");
  if (state_dim == 0) throw ConfigError(name + ": zero state dimension");
  substeps();
}

const std::vector<std::string>& system_names() {
  static const std::vector<std::string> names{"vanderpol", "roessler", "finance", "lorenz3d", "chua", "duffing"};
  return names;
}

SystemSpec system_spec(const std::string& name) {
  SystemSpec s;
  s.name = name;
  s.solver_step = 1e-3;
  if (name == "vanderpol") {
    s.state_dim = 2;
    s.param_name = "mu";
    s.lo = 1.0, s.hi = 8.0;
    s.sample_interval = 0.05;
    s.t_trans = 0.0;
    s.t_end = 20.0;
  } else if (name == "roessler") {
    s.state_dim = 3;
    s.param_name = "c";
    s.lo = 3.0, s.hi = 9.0;
    s.fixed_params = {{"a", 0.2}, {"b", 0.2}};
    s.sample_interval = 0.1;
    s.t_trans = 300.0;
    s.t_end = 20.0;
  } else if (name == "finance") {
    s.state_dim = 3;
    s.param_name = "a";
    s.lo = 1.0, s.hi = 3.5;
    s.fixed_params = {{"b", 0.2}, {"c", 1.0}};
    s.sample_interval = 0.1;
    s.t_trans = 200.0;
    s.t_end = 100.0;
  } else if (name == "lorenz3d") {
    s.state_dim = 3;
    s.param_name = "rho";
    s.lo = 10.0, s.hi = 35.0;
    s.fixed_params = {{"sigma", 10.0}, {"beta", 8.0 / 3.0}};
    s.sample_interval = 0.02;
    s.t_trans = 0.0;
    s.t_end = 20.0;
  } else if (name == "chua") {
    s.state_dim = 3;
    s.param_name = "a";
    s.lo = 8.5, s.hi = 10.5;
    s.fixed_params = {{"b", 15.0}, {"mu0", -1.143}, {"mu1", -0.714}};
    s.sample_interval = 0.05;
    s.t_trans = 100.0;
    s.t_end = 20.0;
  } else if (name == "duffing") {
    s.state_dim = 2;
    s.param_name = "gamma";
    s.lo = 0.1, s.hi = 0.8;
    s.fixed_params = {{"alpha", -1.0}, {"beta", 1.0}, {"delta", 0.3}, {"omega", 1.2}};
    s.sample_interval = 0.02;
    s.t_trans = 200.0;
    s.t_end = 50.0;
    s.nonautonomous = true;
  } else {
    throw ConfigError("unknown system '" + name + "'");
  }
  return s;
}

std::vector<std::pair<double, double>> ic_box(const std::string& name) {
  if (name == "vanderpol" || name == "duffing") return {{-2, 2}, {-2, 2}};
  if (name == "roessler") return {{-5, 5}, {-5, 5}, {-5, 5}};
  if (name == "finance") return {{-1, 1}, {-1, 1}, {-1, 1}};
  if (name == "lorenz3d") return {{-10, 10}, {-10, 10}, {5, 30}};
  if (name == "chua") return {{-0.5, 0.5}, {-0.5, 0.5}, {-0.5, 0.5}};
  throw ConfigError("unknown system '" + name + "'");
}

namespace {

double fixed(const SystemSpec& s, const char* key) {
  auto it = s.fixed_params.find(key);
  if (it == s.fixed_params.end()) throw ConfigError(s.name + ": missing fixed parameter " + key);
  return it->second;
}

}  // namespace

Eigen::VectorXd vector_field(const SystemSpec& s, const Eigen::VectorXd& x, double p, double t) {
  if (static_cast<std::size_t>(x.size()) != s.state_dim) {
    throw std::invalid_argument(s.name + ": state has dimension " + std::to_string(x.size()));
  }
  Eigen::VectorXd d(x.size());
  const std::string& n = s.name;
  if (n == "vanderpol") {
    d << x(1), p * (1.0 - x(0) * x(0)) * x(1) - x(0);
  } else if (n == "roessler") {
    const double a = fixed(s, "a"), b = fixed(s, "b");
    d << -x(1) - x(2), x(0) + a * x(1), b + x(2) * (x(0) - p);
  } else if (n == "finance") {
    const double b = fixed(s, "b"), c = fixed(s, "c");
    d << (1.0 / b - p) * x(0) + x(2) + x(0) * x(1), -b * x(1) - x(0) * x(0), -x(0) - c * x(2);
  } else if (n == "lorenz3d") {
    const double sg = fixed(s, "sigma"), beta = fixed(s, "beta");
    d << sg * (x(1) - x(0)), x(0) * (p - x(2)) - x(1), x(0) * x(1) - beta * x(2);
  } else if (n == "chua") {
    const double b = fixed(s, "b"), m0 = fixed(s, "mu0"), m1 = fixed(s, "mu1");
    const double h = m1 * x(0) + 0.5 * (m0 - m1) * (std::abs(x(0) + 1.0) - std::abs(x(0) - 1.0));
    d << p * (x(1) - x(0) - h), x(0) - x(1) + x(2), -b * x(1);
  } else if (n == "duffing") {
    const double al = fixed(s, "alpha"), be = fixed(s, "beta"), de = fixed(s, "delta"), om = fixed(s, "omega");
    d << x(1), -de * x(1) - al * x(0) - be * x(0) * x(0) * x(0) + p * std::cos(om * t);
  } else {
    throw ConfigError("unknown system '" + n + "'");
  }
  return d;
}

Eigen::MatrixXd rk4_record(const Field& f, const Eigen::VectorXd& x0, double t0, double step,
                           std::size_t substeps, std::size_t samples) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(samples), x0.size());
  Eigen::VectorXd x = x0;
  std::size_t k = 0;  // global step counter, t = t0 + k * step avoids drift
  for (std::size_t s = 0; s < samples; ++s) {
    if (s > 0) {
      for (std::size_t m = 0; m < substeps; ++m, ++k) {
        const double t = t0 + static_cast<double>(k) * step;
        const Eigen::VectorXd k1 = f(x, t);
        const Eigen::VectorXd k2 = f(x + 0.5 * step * k1, t + 0.5 * step);
        const Eigen::VectorXd k3 = f(x + 0.5 * step * k2, t + 0.5 * step);
        const Eigen::VectorXd k4 = f(x + step * k3, t + step);
        x += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      if (!x.allFinite() || x.norm() > 1e8) {
        std::ostringstream os;
        os << "trajectory diverged at t=" << t0 + static_cast<double>(k) * step;
        throw DivergenceError(os.str());
      }
    }
    out.row(static_cast<Eigen::Index>(s)) = x.transpose();
  }
  return out;
}

Trajectory integrate(const SystemSpec& system, double p, const Eigen::VectorXd& x0, double t_span) {
  if (!x0.allFinite()) throw std::invalid_argument("integrate: non-finite initial state");
  if (t_span < 0.0) throw std::invalid_argument("integrate: negative time span");
  const std::size_t m = system.substeps();
  Field f = [&](const Eigen::VectorXd& x, double t) { return vector_field(system, x, p, t); };
  auto describe = [&] {
    std::ostringstream os;
    os << system.name << " p=" << p << " x0=[" << x0.transpose() << "]";
    return os.str();
  };
  try {
    Eigen::VectorXd start = x0;
    const auto trans_steps = static_cast<std::size_t>(std::llround(system.t_trans / system.solver_step));
    if (trans_steps > 0) {
      // one record per solver step is wasteful; step in one chunk
      const Eigen::MatrixXd tr = rk4_record(f, x0, 0.0, system.solver_step, trans_steps, 2);
      start = tr.row(1).transpose();
    }
    const double t0 = static_cast<double>(trans_steps) * system.solver_step;
    const auto samples = static_cast<std::size_t>(std::floor(t_span / system.sample_interval + 1e-9)) + 1;
    Trajectory traj;
    traj.t0 = t0;
    traj.states = rk4_record(f, start, t0, system.solver_step, m, samples);
    return traj;
  } catch (const DivergenceError& e) {
    throw DivergenceError(describe() + ": " + e.what());
  }
}

std::vector<double> sobol_sample(double lo, double hi, std::size_t n, std::size_t seed_offset) {
  if (n == 0) throw std::invalid_argument("sobol_sample: n must be at least 1");
  // First Sobol dimension: direction numbers v_k = 2^(32-k), Gray-code order.
  std::vector<double> out;
  out.reserve(n);
  std::uint32_t x = 0;
  const std::size_t first = 1 + seed_offset;
  for (std::size_t i = 1; i < first + n; ++i) {
    std::size_t c = 0;
    std::size_t v = i - 1;
    while (v & 1U) {
      v >>= 1;
      ++c;
    }
    x ^= (c < 32) ? (std::uint32_t{1} << (31 - c)) : 0U;
    if (i >= first) out.push_back(lo + (hi - lo) * (static_cast<double>(x) / 4294967296.0));
  }
  return out;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test_interp: return "test-interp";
    case Split::test_extrap: return "test-extrap";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test-interp" || s == "test_interp") return Split::test_interp;
  if (s == "test-extrap" || s == "test_extrap") return Split::test_extrap;
  throw ConfigError("unknown split '" + s + "'");
}

Eigen::MatrixXd TrajectoryDataset::trajectory(std::size_t i, std::size_t j) const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n_steps), static_cast<Eigen::Index>(dim()));
  for (std::size_t t = 0; t < n_steps; ++t)
    for (std::size_t d = 0; d < dim(); ++d) m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d)) = state(i, j, t)[d];
  return m;
}

Scaler compute_scaler(const TrajectoryDataset& ds) {
  const std::size_t D = ds.dim();
  Scaler sc;
  auto stats = [&](const std::vector<double>& v, std::vector<double>& mean, std::vector<double>& sd) {
    mean.assign(D, 0.0);
    sd.assign(D, 0.0);
    const std::size_t rows = v.size() / D;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t d = 0; d < D; ++d) mean[d] += v[r * D + d];
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t d = 0; d < D; ++d) sd[d] += (v[r * D + d] - mean[d]) * (v[r * D + d] - mean[d]);
    for (auto& s : sd) {
      s = std::sqrt(s / static_cast<double>(rows));
      if (!(s > 1e-12)) s = 1.0;  // constant feature, keep the transform invertible
    }
  };
  stats(ds.X, sc.x_mean, sc.x_std);
  stats(ds.dX, sc.dx_mean, sc.dx_std);
  return sc;
}

TrajectoryDataset build_dataset(const SystemSpec& system, const DatasetRequest& req) {
  system.validate();
  if (req.params.empty() || req.n_ics == 0) throw ConfigError("build_dataset: counts must be positive");
  TrajectoryDataset ds;
  ds.system = system;
  ds.split = req.split;
  ds.params = req.params;
  ds.n_ics = req.n_ics;
  ds.noise_level = req.noise_level;
  ds.seed = req.seed;
  const double t_end = req.t_end > 0.0 ? req.t_end : system.t_end;
  ds.system.t_end = t_end;
  ds.n_steps = static_cast<std::size_t>(std::floor(t_end / system.sample_interval + 1e-9)) + 1;
  const std::size_t D = system.state_dim;
  const std::size_t per_traj = ds.n_steps * D;
  ds.X.assign(ds.params.size() * ds.n_ics * per_traj, 0.0);
  ds.dX.assign(ds.X.size(), 0.0);
  const auto box = ic_box(system.name);
  const auto split_id = static_cast<std::uint64_t>(req.split);
  double t0 = 0.0;

  parallel_for(ds.params.size() * ds.n_ics, [&](std::size_t job) {
    const std::size_t i = job / ds.n_ics;
    const std::size_t j = job % ds.n_ics;
    const std::uint64_t ic_seed = derive_seed(req.seed, split_id, i, j);
    std::mt19937_64 gen(ic_seed);
    Eigen::VectorXd x0(static_cast<Eigen::Index>(D));
    for (std::size_t d = 0; d < D; ++d) {
      const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
      x0(static_cast<Eigen::Index>(d)) = box[d].first + (box[d].second - box[d].first) * u;
    }
    Trajectory tr;
    try {
      tr = integrate(system, ds.params[i], x0, t_end);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " (ic seed " + std::to_string(ic_seed) + ")");
    }
    if (i == 0 && j == 0) t0 = tr.t0;
    const std::size_t base = ds.offset(i, j, 0);
    for (std::size_t t = 0; t < ds.n_steps; ++t) {
      const Eigen::VectorXd x = tr.states.row(static_cast<Eigen::Index>(t)).transpose();
      const double time = tr.t0 + static_cast<double>(t) * system.sample_interval;
      const Eigen::VectorXd dx = vector_field(system, x, ds.params[i], time);
      for (std::size_t d = 0; d < D; ++d) {
        ds.X[base + t * D + d] = x(static_cast<Eigen::Index>(d));
        ds.dX[base + t * D + d] = dx(static_cast<Eigen::Index>(d));
      }
    }
  });
  ds.t0 = t0;

  if (req.split == Split::train) {
    ds.scaler = compute_scaler(ds);
  } else {
    if (!req.scaler || req.scaler->empty()) throw ConfigError("build_dataset: non-train split needs the train scaler");
    ds.scaler = *req.scaler;
  }
  return ds;
}

}  // namespace phlie
