#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace phlie {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SystemSpec {
  std::string name;
  std::size_t state_dim = 0;
  std::size_t param_dim = 1;
  std::string param_name;
  double lo = 0.0;
  double hi = 1.0;
  std::map<std::string, double> fixed_params;
  double solver_step = 1e-3;
  double sample_interval = 0.05;
  double t_trans = 0.0;
  double t_end = 20.0;
  bool nonautonomous = false;

  /// Solver steps per recorded sample; throws if dt is not a multiple of the step.
  std::size_t substeps() const;
  void validate() const;
};

const std::vector<std::string>& system_names();

/// Benchmark constants for one of the six systems. Unknown names throw ConfigError.
SystemSpec system_spec(const std::string& name);

/// Initial-condition box (per-dimension lo, hi) used for `name`.
std::vector<std::pair<double, double>> ic_box(const std::string& name);

Eigen::VectorXd vector_field(const SystemSpec& system, const Eigen::VectorXd& x, double p, double t = 0.0);

using Field = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, double t)>;

/// Fixed-step classical RK4. Records the state every `substeps` steps,
/// `samples` records in total starting with x0 at time t0.
Eigen::MatrixXd rk4_record(const Field& f, const Eigen::VectorXd& x0, double t0, double step,
                           std::size_t substeps, std::size_t samples);

struct Trajectory {
  Eigen::MatrixXd states;  // samples x D_x
  double t0 = 0.0;         // time of the first recorded sample
};

/// Discards `system.t_trans` of transient, then records floor(t_span / dt) + 1
/// samples every dt. Throws DivergenceError once |x| > 1e8 or x is non-finite.
Trajectory integrate(const SystemSpec& system, double p, const Eigen::VectorXd& x0, double t_span);

/// 1-D Sobol points mapped onto [lo, hi]. Index 0 (the origin) is skipped,
/// `seed_offset` skips that many further points.
std::vector<double> sobol_sample(double lo, double hi, std::size_t n, std::size_t seed_offset = 0);

enum class Split { train, val, test_interp, test_extrap };
std::string split_name(Split s);
Split parse_split(const std::string& s);

struct Scaler {
  std::vector<double> x_mean, x_std;
  std::vector<double> dx_mean, dx_std;
  bool empty() const { return x_mean.empty(); }
};

struct TrajectoryDataset {
  SystemSpec system;
  Split split = Split::train;
  std::vector<double> params;
  std::size_t n_ics = 0;
  std::size_t n_steps = 0;
  double t0 = 0.0;
  std::vector<double> X;   // [param][ic][time][dim]
  std::vector<double> dX;  // same layout
  Scaler scaler;
  double noise_level = 0.05;
  std::uint64_t seed = 0;

  std::size_t n_params() const { return params.size(); }
  std::size_t dim() const { return system.state_dim; }
  std::size_t offset(std::size_t i, std::size_t j, std::size_t t) const {
    return ((i * n_ics + j) * n_steps + t) * dim();
  }
  const double* state(std::size_t i, std::size_t j, std::size_t t) const { return X.data() + offset(i, j, t); }
  const double* deriv(std::size_t i, std::size_t j, std::size_t t) const { return dX.data() + offset(i, j, t); }
  /// Rows are time, columns are dims, for one (param, ic) pair.
  Eigen::MatrixXd trajectory(std::size_t i, std::size_t j) const;
};

Scaler compute_scaler(const TrajectoryDataset& ds);

struct DatasetRequest {
  Split split = Split::train;
  std::vector<double> params;
  std::size_t n_ics = 1;
  double t_end = 0.0;  // <= 0 keeps system.t_end
  std::uint64_t seed = 0;
  double noise_level = 0.05;
  std::optional<Scaler> scaler;  // required for non-train splits
};

TrajectoryDataset build_dataset(const SystemSpec& system, const DatasetRequest& request);

void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& dir);
TrajectoryDataset load_dataset(const std::filesystem::path& dir);

}  // namespace phlie
