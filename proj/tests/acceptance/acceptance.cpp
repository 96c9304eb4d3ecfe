// Runs the acceptance criteria and prints one PASS/FAIL line each.
// Usage: phlie_acceptance [workdir] [criterion numbers...]

#include "phlie/analysis.hpp"
#include "phlie/experiment.hpp"
#include "phlie/lie.hpp"
#include "phlie/metrics.hpp"
#include "phlie/rollout.hpp"
#include "phlie/targets.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace phlie;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

Outcome c1_formulas() {
  bool ok = tcnn_layers_for(16, 5) == 3 && tcnn_layers_for(32, 5) == 4;
  std::size_t bad = 0;
  for (std::size_t k = 2; k <= 8; ++k)
    for (std::size_t isl = 1; isl <= 256; ++isl) {
      const auto L = tcnn_layers_for(isl, k);
      if (receptive_field(L, k) < isl || (L > 1 && receptive_field(L - 1, k) >= isl)) ++bad;
    }
  return {ok && bad == 0, "L(16,5)=" + std::to_string(tcnn_layers_for(16, 5)) + " L(32,5)=" +
                              std::to_string(tcnn_layers_for(32, 5)) + ", non-minimal cases " + std::to_string(bad)};
}

Outcome c2_gradients() {
  DatasetRequest r;
  r.params = {2.0, 6.5};
  r.n_ics = 1;
  r.t_end = 1.0;
  r.seed = 1;
  const auto ds = build_dataset(system_spec("vanderpol"), r);
  ModelSpec spec;
  spec.name = "mini";
  spec.variant = Variant::phlienet;
  spec.target.isl = 8;
  spec.target.channels = 6;
  spec.n_e = 4;
  spec.d_e = 8;
  const auto m = Model::create(spec, 2, ds.system.lo, ds.system.hi, ds.scaler, 3);
  WindowSource src(ds, 8, 6, TargetMode::euler);
  std::vector<std::size_t> rows(src.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::mt19937_64 gen(5);
  const Batch b = src.batch(rows, 0.05, &gen);
  const auto rep =
      finite_difference_check([&](Graph& g) { return m.loss_graph(g, b); }, m.params, 1e-5, 1e-4);
  return {rep.max_relative_error < 1e-4, std::to_string(rep.checked) + " scalars, batch " + std::to_string(rows.size()) +
                                             ", max rel err " + fmt(rep.max_relative_error)};
}

Outcome c3_rk4_order() {
  const double w = 20.0, T = 2 * std::numbers::pi;
  Field f = [w](const Eigen::VectorXd& x, double) {
    Eigen::VectorXd d(2);
    d << x(1), -w * w * x(0);
    return d;
  };
  std::vector<double> lh, le;
  for (double h : {4e-3, 2e-3, 1e-3, 5e-4}) {
    const auto n = static_cast<std::size_t>(std::llround(T / h));
    const double step = T / static_cast<double>(n);
    auto rec = rk4_record(f, Eigen::Vector2d(1, 0), 0.0, step, n, 2);
    const double err = (rec.row(1).transpose() - Eigen::Vector2d(std::cos(w * T), -w * std::sin(w * T))).norm();
    lh.push_back(std::log(step));
    le.push_back(std::log(err));
  }
  const double mx = std::accumulate(lh.begin(), lh.end(), 0.0) / 4, my = std::accumulate(le.begin(), le.end(), 0.0) / 4;
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (lh[i] - mx) * (le[i] - my);
    sxx += (lh[i] - mx) * (lh[i] - mx);
  }
  const double slope = sxy / sxx;
  return {slope >= 3.7 && slope <= 4.3, "slope " + fmt(slope)};
}

double rel(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

Outcome c4_metrics() {
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<int> len(16, 300), dim(1, 3);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int N = len(gen), D = dim(gen);
    Eigen::MatrixXd a(N, D), b(N, D);
    const double drift = std::abs(n(gen));
    for (int t = 0; t < N; ++t)
      for (int d = 0; d < D; ++d) {
        a(t, d) = std::sin(0.1 * t * (d + 1)) + 0.3 * n(gen);
        b(t, d) = a(t, d) + drift * 0.02 * t * n(gen);
      }
    // brute-force NRMSE
    double mean = a.mean(), var = 0;
    for (int i = 0; i < a.size(); ++i) var += (a.data()[i] - mean) * (a.data()[i] - mean);
    var /= static_cast<double>(a.size());
    std::vector<const Eigen::MatrixXd*> truths{&a};
    worst = std::max(worst, rel(truth_variance(truths), var));
    const auto curve = nrmse_curve(a, b, var);
    std::vector<double> brute(static_cast<std::size_t>(N));
    for (int t = 0; t < N; ++t) {
      double s = 0;
      for (int d = 0; d < D; ++d) s += (a(t, d) - b(t, d)) * (a(t, d) - b(t, d));
      brute[static_cast<std::size_t>(t)] = std::sqrt(s) / (std::sqrt(var) + 1e-8);
      worst = std::max(worst, rel(curve[static_cast<std::size_t>(t)], brute[static_cast<std::size_t>(t)]));
    }
    // explicit threshold scan
    const double theta = 0.05 + 0.5 * std::abs(n(gen)), dt = 0.05;
    std::size_t first = brute.size();
    for (std::size_t t = 0; t < brute.size(); ++t)
      if (brute[t] >= theta) {
        first = t;
        break;
      }
    worst = std::max(worst, rel(ttt(curve, theta, dt), static_cast<double>(first) * dt));
    // direct DFT spectrum error
    double total = 0;
    for (int d = 0; d < D; ++d) {
      const int F = N / 2 + 1;
      double s = 0;
      for (int q = 0; q < F; ++q) {
        double ra = 0, ia = 0, rb = 0, ib = 0;
        for (int t = 0; t < N; ++t) {
          const double ang = -2 * std::numbers::pi * static_cast<double>((static_cast<long>(q) * t) % N) / N;
          ra += a(t, d) * std::cos(ang);
          ia += a(t, d) * std::sin(ang);
          rb += b(t, d) * std::cos(ang);
          ib += b(t, d) * std::sin(ang);
        }
        const double pa = 20 * std::log10(2.0 / N * std::hypot(ra, ia) + 1e-12);
        const double pb = 20 * std::log10(2.0 / N * std::hypot(rb, ib) + 1e-12);
        s += std::abs(pa - pb);
      }
      total += s / F;
    }
    worst = std::max(worst, rel(spectrum_error(a, b), total / D));
  }

  // aggregation modes on constructed curves
  auto step_curve = [](std::size_t n, std::size_t cross) {
    std::vector<double> c(n, 0.0);
    for (std::size_t t = cross; t < n; ++t) c[t] = 1.0;
    return c;
  };
  bool agg = true;
  const double dt = 0.1;
  // param A: IC crossings 10 and 30 -> mean curve 0.5 from step 10 -> TtT 1.0
  // param B: IC crossings 50 and 50 -> TtT 5.0; grand mean 0.25 at step 10 (< 0.3), 0.5 at 30 -> TtT 3.0
  auto a = ttt_aggregate({{step_curve(80, 10), step_curve(80, 30)}, {step_curve(80, 50), step_curve(80, 50)}}, 0.3, dt);
  agg = agg && std::abs(a.per_param[0] - 1.0) < 1e-12 && std::abs(a.per_param[1] - 5.0) < 1e-12;
  agg = agg && std::abs(a.mean - 3.0) < 1e-12 && std::abs(a.std - 2.0) < 1e-12 && std::abs(a.legend - 3.0) < 1e-12;
  auto single = ttt_aggregate({{step_curve(40, 17)}}, 0.2, dt);
  agg = agg && std::abs(single.legend - 1.7) < 1e-12 && std::abs(single.mean - 1.7) < 1e-12;
  return {worst <= 1e-9 && agg, "100 random pairs, worst rel diff " + fmt(worst) + (agg ? ", aggregation ok" : ", aggregation MISMATCH")};
}

Outcome c5_lie() {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> n;
  // normalized range widened by 20% (covers the extrapolation splits); sigma in [0.05, 1]
  std::uniform_real_distribution<double> u(-0.2, 1.2), us(0.05, 1.0);
  std::size_t bad = 0;
  double worst_sum = 0;
  for (int k = 0; k < 10000; ++k) {
    const std::size_t ne = 2 + gen() % 40, de = 1 + gen() % 16;
    auto bank = make_anchor_bank(ne, de, us(gen), {0.0}, {1.0});
    Matrix E(static_cast<Eigen::Index>(ne), static_cast<Eigen::Index>(de));
    for (Eigen::Index i = 0; i < E.size(); ++i) E.data()[i] = n(gen);
    const double p = u(gen);
    const auto a = rbf_weights(bank, p);
    worst_sum = std::max(worst_sum, std::abs(a.sum() - 1.0));
    if (std::abs(a.sum() - 1.0) > 1e-12 || !(a.minCoeff() > 0.0)) ++bad;
    const auto e = embed(bank, E, p);
    for (Eigen::Index d = 0; d < e.size(); ++d)
      if (e(d) < E.col(d).minCoeff() - 1e-12 || e(d) > E.col(d).maxCoeff() + 1e-12) ++bad;
  }
  auto bank = make_anchor_bank(3, 3, 0.2, {0.0}, {1.0});
  bank.positions << 0.0, 0.5, 1.0;
  const auto a = rbf_weights(bank, 0.25);
  const double z0 = std::exp(-0.78125), z2 = std::exp(-7.03125), s = 2 * z0 + z2;
  const double err = std::max({std::abs(a(0) - z0 / s), std::abs(a(1) - z0 / s), std::abs(a(2) - z2 / s)});
  return {bad == 0 && err < 1e-10, "violations " + std::to_string(bad) + ", max |sum-1| " + fmt(worst_sum) +
                                       ", 3-anchor err " + fmt(err)};
}

ExperimentConfig desk_config(const std::string& system, const fs::path& out) {
  auto j = builtin_profile(system, "desk");
  j["out"] = out.string();
  return parse_config(j);
}

void run_vdp_pipeline(const ExperimentConfig& cfg, std::ostream& log) {
  cmd_generate(cfg, false, log);
  for (const auto& m : cfg.models) cmd_train(cfg, m.spec.name, false, log);
  cmd_evaluate(cfg, {}, Split::test_interp, std::nullopt, log);
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  nlohmann::json j;
  f >> j;
  return j;
}

Outcome c6_vdp(const ExperimentConfig& cfg) {
  const auto m = read_json(cfg.eval_dir(Split::test_interp) / "metrics.json")["models"];
  const auto& ph = m.at("phlienet_16_16");
  const auto& la = m.at("lstm_a");
  const double tp = ph["ttt_mean"], ta = la["ttt_mean"];
  const bool spec_ok = !ph["spectrum_error"].is_null() &&
                       (la["spectrum_error"].is_null() || ph["spectrum_error"].get<double>() < la["spectrum_error"].get<double>());
  const bool ttt_ok = tp >= 1.25 * ta;
  std::ostringstream d;
  d << "TtT phlienet " << tp << " vs lstm_a " << ta << " (ratio " << (ta > 0 ? tp / ta : 0.0) << ", lstm_p "
    << m.at("lstm_p")["ttt_mean"].get<double>() << "); spectrum error phlienet " << ph["spectrum_error"] << " vs lstm_a "
    << la["spectrum_error"];
  return {ttt_ok && spec_ok, d.str()};
}

Outcome c8_smooth(const ExperimentConfig& cfg) {
  const auto ck = load_checkpoint(cfg.model_dir("phlienet_16_16"));
  const auto probes = probe_grid(ck.model.lo, ck.model.hi, 20, 0.0);
  const Matrix D = weight_distance_matrix(ck.model.hnn, ck.model.bank, ck.model.params, probes);
  const double asym = (D - D.transpose()).cwiseAbs().maxCoeff();
  const double diag = D.diagonal().cwiseAbs().maxCoeff();
  const double frac = monotone_row_fraction(D);
  cmd_analyze(cfg, "phlienet_16_16", std::nullopt, std::cout);
  return {asym == 0.0 && diag == 0.0 && frac >= 0.8,
          "max asymmetry " + fmt(asym) + ", max diagonal " + fmt(diag) + ", monotone rows " + fmt(frac)};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome c9_determinism(const ExperimentConfig& a, const ExperimentConfig& b) {
  std::vector<fs::path> files{fs::path("metrics.json")};
  for (const auto& m : a.models) files.push_back(fs::path(m.spec.name) / "metrics.json");
  std::size_t same = 0;
  for (const auto& f : files) {
    const auto x = slurp(a.eval_dir(Split::test_interp) / f), y = slurp(b.eval_dir(Split::test_interp) / f);
    if (!x.empty() && x == y) ++same;
  }
  return {same == files.size(), std::to_string(same) + "/" + std::to_string(files.size()) + " metrics.json files byte-identical"};
}

Outcome c7_lorenz(const fs::path& out) {
  const auto cfg = desk_config("lorenz3d", out);
  cmd_generate(cfg, false, std::cout);
  cmd_train(cfg, "phlienet_16_16", false, std::cout);
  const auto ck = load_checkpoint(cfg.model_dir("phlienet_16_16"));
  const auto ds = load_dataset(cfg.data_dir(Split::test_interp));
  std::size_t pi = ds.n_params();
  for (std::size_t i = 0; i < ds.n_params(); ++i)
    if (ds.params[i] == 16.0) pi = i;
  if (pi == ds.n_params()) return {false, "rho=16 missing from the test split"};
  std::vector<Eigen::MatrixXd> truths;
  for (std::size_t j = 0; j < ds.n_ics; ++j) truths.push_back(ds.trajectory(pi, j));
  const auto runs = forecast_group(ck.model, truths, 16.0, ds.system.sample_interval, ds.n_steps);
  const double q = std::sqrt(8.0 / 3.0 * 15.0);
  const Eigen::Vector3d cp(q, q, 15), cm(-q, -q, 15);
  std::size_t near = 0;
  std::ostringstream d;
  for (const auto& r : runs) {
    const Eigen::Vector3d end = r.x_pred.bottomRows(1).transpose();
    const double dist = end.allFinite() ? std::min((end - cp).norm(), (end - cm).norm()) : std::numeric_limits<double>::infinity();
    if (dist <= 0.5) ++near;
    d << (d.tellp() > 0 ? " " : "") << fmt(dist);
  }
  const double frac = static_cast<double>(near) / static_cast<double>(runs.size());
  return {frac >= 0.7, std::to_string(near) + "/" + std::to_string(runs.size()) + " endpoints within 0.5 of C+/C- (distances " +
                           d.str() + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::current_path() / "acceptance_work";
  std::set<int> want;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (!a.empty() && std::isdigit(static_cast<unsigned char>(a[0]))) want.insert(std::stoi(a));
    else work = a;
  }
  if (want.empty()) want = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  // 8 and 9 build on the criterion 6 pipeline
  if (want.count(8) || want.count(9)) want.insert(6);

  std::vector<std::pair<int, Outcome>> results;
  auto run = [&](int id, const std::function<Outcome()>& fn) {
    if (!want.count(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.detail += " [" + fmt(std::round(s * 10) / 10) + " s]";
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail << std::endl;
    results.emplace_back(id, o);
  };

  run(1, c1_formulas);
  run(2, c2_gradients);
  run(3, c3_rk4_order);
  run(4, c4_metrics);
  run(5, c5_lie);

  const auto cfg_a = desk_config("vanderpol", work / "vdp_a");
  const auto cfg_b = desk_config("vanderpol", work / "vdp_b");
  bool pipeline_a = false;
  if (want.count(6)) {
    fs::remove_all(cfg_a.out);
    try {
      run_vdp_pipeline(cfg_a, std::cout);
      pipeline_a = true;
    } catch (const std::exception& e) {
      std::cout << "van der pol pipeline failed: " << e.what() << std::endl;
    }
  }
  run(6, [&] { return pipeline_a ? c6_vdp(cfg_a) : Outcome{false, "pipeline did not complete"}; });
  run(8, [&] { return pipeline_a ? c8_smooth(cfg_a) : Outcome{false, "pipeline did not complete"}; });
  run(9, [&] {
    if (!pipeline_a) return Outcome{false, "pipeline did not complete"};
    fs::remove_all(cfg_b.out);
    run_vdp_pipeline(cfg_b, std::cout);
    return c9_determinism(cfg_a, cfg_b);
  });
  run(7, [&] {
    fs::remove_all(work / "lorenz");
    return c7_lorenz(work / "lorenz");
  });

  std::cout << "\nsummary\n";
  bool all = true;
  for (const auto& [id, o] : results) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << '\n';
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
