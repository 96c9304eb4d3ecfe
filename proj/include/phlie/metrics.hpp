#pragma once

#include "phlie/rollout.hpp"

#include <Eigen/Dense>

#include <complex>
#include <optional>
#include <vector>

namespace phlie {

inline constexpr double kNrmseEps = 1e-8;
inline constexpr double kLogEps = 1e-12;

/// NRMSE(t) = |x_pred(t) - x_true(t)| / (sqrt(var) + eps); +inf where the
/// prediction is not finite.
std::vector<double> nrmse_curve(const Eigen::MatrixXd& x_true, const Eigen::MatrixXd& x_pred, double variance,
                                double eps = kNrmseEps);
std::vector<double> nrmse_curve(const ForecastRun& run, double variance, double eps = kNrmseEps);

/// Population variance of every value in the given truths (ICs x times x dims).
double truth_variance(const std::vector<const Eigen::MatrixXd*>& truths);

/// First index with curve >= theta, times dt; curve.size() * dt if never.
double ttt(const std::vector<double>& curve, double theta, double dt);

std::vector<double> mean_curve(const std::vector<std::vector<double>>& curves);

struct TttAggregate {
  double legend = 0.0;             // threshold of the grand mean curve
  std::vector<double> per_param;   // threshold of each parameter's IC-mean curve
  double mean = 0.0;
  double std = 0.0;                // population std across parameters
};

/// `curves[k]` holds every IC curve of parameter k.
TttAggregate ttt_aggregate(const std::vector<std::vector<std::vector<double>>>& curves, double theta, double dt);

/// Real FFT (F = N/2 + 1 bins), FFTW-backed.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

/// 20 log10((2/N) |rFFT(x)| + eps) per bin.
std::vector<double> power_spectrum_db(const std::vector<double>& x, double eps = kLogEps);

/// Mean over dims of the mean over bins of |PSD_a - PSD_b|. Requires N >= 8.
double spectrum_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// nullopt for a diverged run.
std::optional<double> spectrum_error(const ForecastRun& run);

struct ParamMetrics {
  double p = 0.0;
  double variance = 0.0;
  double ttt = 0.0;
  std::vector<double> mean_curve;
  std::optional<double> spectrum_error;  // mean over non-diverged runs
  std::size_t diverged = 0;
};

struct MetricsReport {
  std::string model;
  double theta = 0.2;
  double dt = 0.0;
  std::size_t horizon = 0;
  std::vector<std::vector<double>> run_curves;   // batch order
  std::vector<std::optional<double>> run_spectrum;
  std::vector<ParamMetrics> params;
  std::vector<double> mean_curve;
  TttAggregate ttt;
  std::optional<double> spectrum_error;  // mean over non-diverged runs
  std::size_t runs = 0;
  std::size_t diverged = 0;
};

/// Groups runs by param_index (batch order), computes every metric.
MetricsReport compute_metrics(const std::string& model, const std::vector<ForecastRun>& runs, double theta);

}  // namespace phlie
