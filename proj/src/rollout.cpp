#include "phlie/rollout.hpp"

#include "phlie/parallel.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace phlie {

std::vector<ForecastRun> forecast_group(const DerivativeModel& model, const std::vector<Eigen::MatrixXd>& truths,
                                        double p_raw, double dt, std::size_t horizon) {
  std::vector<ForecastRun> runs(truths.size());
  if (truths.empty()) return runs;
  auto pred = model.bind(p_raw);
  const std::size_t isl = pred->isl();
  const auto D = truths[0].cols();
  if (horizon < isl) throw std::invalid_argument("forecast horizon shorter than ISL");
  for (std::size_t r = 0; r < truths.size(); ++r) {
    if (static_cast<std::size_t>(truths[r].rows()) < horizon) throw std::invalid_argument("truth shorter than horizon");
    auto& run = runs[r];
    run.model_id = model.id();
    run.p_raw = p_raw;
    run.ic_index = r;
    run.dt = dt;
    run.x_true = truths[r].topRows(static_cast<Eigen::Index>(horizon));
    run.x_pred = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(horizon), D,
                                           std::numeric_limits<double>::quiet_NaN());
    run.x_pred.topRows(static_cast<Eigen::Index>(isl)) = run.x_true.topRows(static_cast<Eigen::Index>(isl));
  }

  std::vector<std::size_t> active(truths.size());
  for (std::size_t r = 0; r < active.size(); ++r) active[r] = r;
  for (std::size_t t = isl - 1; t + 1 < horizon && !active.empty(); ++t) {
    Matrix windows(static_cast<Eigen::Index>(active.size()), static_cast<Eigen::Index>(isl) * D);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto& xp = runs[active[a]].x_pred;
      for (std::size_t s = 0; s < isl; ++s)
        for (Eigen::Index d = 0; d < D; ++d)
          windows(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(s) * D + d) =
              xp(static_cast<Eigen::Index>(t + 1 - isl + s), d);
    }
    const Matrix f = pred->predict(windows);
    std::vector<std::size_t> still;
    still.reserve(active.size());
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto& run = runs[active[a]];
      const auto ti = static_cast<Eigen::Index>(t);
      Eigen::VectorXd next = run.x_pred.row(ti).transpose() + dt * f.row(static_cast<Eigen::Index>(a)).transpose();
      if (!next.allFinite() || next.norm() > kDivergenceNorm) {
        run.diverged = true;
        run.diverged_at = static_cast<long>(t + 1);
        continue;
      }
      run.x_pred.row(ti + 1) = next.transpose();
      still.push_back(active[a]);
    }
    active.swap(still);
  }
  return runs;
}

ForecastRun forecast(const DerivativeModel& model, const Eigen::MatrixXd& truth, double p_raw, double dt,
                     std::size_t horizon) {
  return forecast_group(model, {truth}, p_raw, dt, horizon).front();
}

std::vector<ForecastRun> batch_forecast(const DerivativeModel& model, const TrajectoryDataset& ds,
                                        const std::string& variant) {
  std::vector<std::vector<ForecastRun>> per_param(ds.n_params());
  parallel_for(ds.n_params(), [&](std::size_t i) {
    std::vector<Eigen::MatrixXd> truths;
    truths.reserve(ds.n_ics);
    for (std::size_t j = 0; j < ds.n_ics; ++j) truths.push_back(ds.trajectory(i, j));
    per_param[i] = forecast_group(model, truths, ds.params[i], ds.system.sample_interval, ds.n_steps);
    for (auto& run : per_param[i]) {
      run.param_index = i;
      run.variant = variant;
    }
  });
  std::vector<ForecastRun> out;
  out.reserve(ds.n_params() * ds.n_ics);
  for (auto& v : per_param)
    for (auto& r : v) out.push_back(std::move(r));
  return out;
}

void export_runs(const std::vector<ForecastRun>& runs, double t0, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& run : runs) {
    std::ostringstream name;
    name << "run_p" << std::setw(3) << std::setfill('0') << run.param_index << "_ic" << std::setw(3) << run.ic_index
         << ".csv";
    std::ofstream f(dir / name.str());
    if (!f) throw std::runtime_error("cannot write " + (dir / name.str()).string());
    f << std::setprecision(17);
    const auto D = run.x_true.cols();
    f << "t";
    for (Eigen::Index d = 0; d < D; ++d) f << ",true" << d;
    for (Eigen::Index d = 0; d < D; ++d) f << ",pred" << d;
    f << '\n';
    for (Eigen::Index t = 0; t < run.x_true.rows(); ++t) {
      f << t0 + static_cast<double>(t) * run.dt;
      for (Eigen::Index d = 0; d < D; ++d) f << ',' << run.x_true(t, d);
      for (Eigen::Index d = 0; d < D; ++d) f << ',' << run.x_pred(t, d);
      f << '\n';
    }
    index.push_back({{"file", name.str()},
                     {"model", run.model_id},
                     {"variant", run.variant},
                     {"p", run.p_raw},
                     {"param_index", run.param_index},
                     {"ic_index", run.ic_index},
                     {"dt", run.dt},
                     {"steps", run.x_true.rows()},
                     {"diverged", run.diverged},
                     {"diverged_at", run.diverged_at}});
  }
  std::ofstream f(dir / "index.json");
  f << index.dump(2) << '\n';
}

}  // namespace phlie
