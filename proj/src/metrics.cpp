#include "phlie/metrics.hpp"

#include <fftw3.h>

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>

namespace phlie {

std::vector<double> nrmse_curve(const Eigen::MatrixXd& x_true, const Eigen::MatrixXd& x_pred, double variance,
                                double eps) {
  if (x_true.rows() != x_pred.rows() || x_true.cols() != x_pred.cols()) {
    throw std::invalid_argument("nrmse: shape mismatch");
  }
  if (variance < 0.0) throw std::invalid_argument("nrmse: negative variance");
  const double denom = std::sqrt(variance) + eps;
  std::vector<double> c(static_cast<std::size_t>(x_true.rows()));
  for (Eigen::Index t = 0; t < x_true.rows(); ++t) {
    const auto row = x_pred.row(t);
    c[static_cast<std::size_t>(t)] =
        row.allFinite() ? (row - x_true.row(t)).norm() / denom : std::numeric_limits<double>::infinity();
  }
  return c;
}

std::vector<double> nrmse_curve(const ForecastRun& run, double variance, double eps) {
  return nrmse_curve(run.x_true, run.x_pred, variance, eps);
}

double truth_variance(const std::vector<const Eigen::MatrixXd*>& truths) {
  double n = 0.0, sum = 0.0;
  for (const auto* m : truths) {
    sum += m->sum();
    n += static_cast<double>(m->size());
  }
  if (n == 0.0) return 0.0;
  const double mean = sum / n;
  double ss = 0.0;
  for (const auto* m : truths) ss += (m->array() - mean).square().sum();
  return ss / n;
}

double ttt(const std::vector<double>& curve, double theta, double dt) {
  if (!(theta > 0.0)) throw std::invalid_argument("ttt: threshold must be positive");
  for (std::size_t t = 0; t < curve.size(); ++t) {
    if (!(curve[t] < theta)) return static_cast<double>(t) * dt;
  }
  return static_cast<double>(curve.size()) * dt;
}

std::vector<double> mean_curve(const std::vector<std::vector<double>>& curves) {
  if (curves.empty()) return {};
  std::vector<double> m(curves[0].size(), 0.0);
  for (const auto& c : curves) {
    if (c.size() != m.size()) throw std::invalid_argument("mean_curve: length mismatch");
    for (std::size_t t = 0; t < m.size(); ++t) m[t] += c[t];
  }
  for (auto& v : m) v /= static_cast<double>(curves.size());
  return m;
}

TttAggregate ttt_aggregate(const std::vector<std::vector<std::vector<double>>>& curves, double theta, double dt) {
  TttAggregate a;
  std::vector<std::vector<double>> all;
  for (const auto& group : curves) {
    for (const auto& c : group) all.push_back(c);
    a.per_param.push_back(ttt(mean_curve(group), theta, dt));
  }
  a.legend = ttt(mean_curve(all), theta, dt);
  if (!a.per_param.empty()) {
    double s = 0.0;
    for (double v : a.per_param) s += v;
    a.mean = s / static_cast<double>(a.per_param.size());
    double ss = 0.0;
    for (double v : a.per_param) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(a.per_param.size()));
  }
  return a;
}

namespace {
std::mutex& fftw_plan_mutex() {
  static std::mutex m;  // FFTW planning is not thread-safe
  return m;
}
}  // namespace

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n == 0) return {};
  const std::size_t F = x.size() / 2 + 1;
  std::vector<double> in(x);
  std::vector<std::complex<double>> out(F);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_plan_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(fftw_plan_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

std::vector<double> power_spectrum_db(const std::vector<double>& x, double eps) {
  const auto X = rfft(x);
  const double scale = 2.0 / static_cast<double>(x.size());
  std::vector<double> p(X.size());
  for (std::size_t f = 0; f < X.size(); ++f) p[f] = 20.0 * std::log10(scale * std::abs(X[f]) + eps);
  return p;
}

double spectrum_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("spectrum_error: shape mismatch");
  if (a.rows() < 8) throw std::invalid_argument("spectrum_error: need at least 8 samples");
  double total = 0.0;
  for (Eigen::Index d = 0; d < a.cols(); ++d) {
    std::vector<double> xa(static_cast<std::size_t>(a.rows())), xb(xa.size());
    for (Eigen::Index t = 0; t < a.rows(); ++t) {
      xa[static_cast<std::size_t>(t)] = a(t, d);
      xb[static_cast<std::size_t>(t)] = b(t, d);
    }
    const auto pa = power_spectrum_db(xa);
    const auto pb = power_spectrum_db(xb);
    double s = 0.0;
    for (std::size_t f = 0; f < pa.size(); ++f) s += std::abs(pa[f] - pb[f]);
    total += s / static_cast<double>(pa.size());
  }
  return total / static_cast<double>(a.cols());
}

std::optional<double> spectrum_error(const ForecastRun& run) {
  if (run.diverged || !run.x_pred.allFinite()) return std::nullopt;
  return spectrum_error(run.x_pred, run.x_true);
}

MetricsReport compute_metrics(const std::string& model, const std::vector<ForecastRun>& runs, double theta) {
  MetricsReport rep;
  rep.model = model;
  rep.theta = theta;
  rep.runs = runs.size();
  if (runs.empty()) return rep;
  rep.dt = runs[0].dt;
  rep.horizon = static_cast<std::size_t>(runs[0].x_true.rows());

  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < runs.size(); ++r) groups[runs[r].param_index].push_back(r);

  rep.run_curves.resize(runs.size());
  rep.run_spectrum.resize(runs.size());
  std::vector<std::vector<std::vector<double>>> grouped;
  double spec_sum = 0.0;
  std::size_t spec_n = 0;
  for (const auto& [pi, idx] : groups) {
    std::vector<const Eigen::MatrixXd*> truths;
    for (auto r : idx) truths.push_back(&runs[r].x_true);
    ParamMetrics pm;
    pm.p = runs[idx[0]].p_raw;
    pm.variance = truth_variance(truths);
    std::vector<std::vector<double>> curves;
    double ps = 0.0;
    std::size_t pn = 0;
    for (auto r : idx) {
      rep.run_curves[r] = nrmse_curve(runs[r], pm.variance);
      curves.push_back(rep.run_curves[r]);
      rep.run_spectrum[r] = spectrum_error(runs[r]);
      if (rep.run_spectrum[r]) {
        ps += *rep.run_spectrum[r];
        ++pn;
      } else {
        ++pm.diverged;
      }
    }
    pm.mean_curve = mean_curve(curves);
    pm.ttt = ttt(pm.mean_curve, theta, rep.dt);
    if (pn > 0) pm.spectrum_error = ps / static_cast<double>(pn);
    spec_sum += ps;
    spec_n += pn;
    rep.diverged += pm.diverged;
    grouped.push_back(std::move(curves));
    rep.params.push_back(std::move(pm));
  }
  rep.ttt = ttt_aggregate(grouped, theta, rep.dt);
  rep.mean_curve = mean_curve(rep.run_curves);
  if (spec_n > 0) rep.spectrum_error = spec_sum / static_cast<double>(spec_n);
  return rep;
}

}  // namespace phlie
