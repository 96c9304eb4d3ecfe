#pragma once

#include "phlie/model.hpp"
#include "phlie/sysgen.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace phlie {

inline constexpr double kDivergenceNorm = 1e8;

struct ForecastRun {
  std::string model_id;
  std::string variant;
  double p_raw = 0.0;
  std::size_t param_index = 0;
  std::size_t ic_index = 0;
  double dt = 0.0;
  Eigen::MatrixXd x_true;  // N_T x D_x
  Eigen::MatrixXd x_pred;  // rows after divergence are NaN
  bool diverged = false;
  long diverged_at = -1;
};

/// Rolls out every trajectory of one parameter in lockstep: the first ISL
/// rows are copied from the truth, then x_{t+1} = x_t + dt * f(last ISL states).
std::vector<ForecastRun> forecast_group(const DerivativeModel& model, const std::vector<Eigen::MatrixXd>& truths,
                                        double p_raw, double dt, std::size_t horizon);

ForecastRun forecast(const DerivativeModel& model, const Eigen::MatrixXd& truth, double p_raw, double dt,
                     std::size_t horizon);

/// All (param, ic) runs of a dataset, ordered by param index then ic index.
std::vector<ForecastRun> batch_forecast(const DerivativeModel& model, const TrajectoryDataset& ds,
                                        const std::string& variant = "");

/// CSV (t, true..., pred...) per run plus index.json, under `dir`.
void export_runs(const std::vector<ForecastRun>& runs, double t0, const std::filesystem::path& dir);

}  // namespace phlie
