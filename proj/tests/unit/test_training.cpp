#include <doctest.h>

#include "phlie/checkpoint.hpp"
#include "phlie/optimizer.hpp"
#include "phlie/rollout.hpp"
#include "phlie/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

using namespace phlie;

namespace {

// f(window) = vector field at the newest sample
class OracleModel : public DerivativeModel {
 public:
  OracleModel(SystemSpec s, std::size_t isl, bool zero = false) : sys_(std::move(s)), isl_(isl), zero_(zero) {}
  std::string id() const override { return zero_ ? "zero" : "oracle"; }
  std::unique_ptr<Predictor> bind(double p) const override { return std::make_unique<P>(sys_, isl_, p, zero_); }

 private:
  struct P : Predictor {
    P(const SystemSpec& s, std::size_t isl, double p, bool zero) : s(s), n(isl), p(p), zero(zero) {}
    std::size_t isl() const override { return n; }
    Matrix predict(const Matrix& w) const override {
      const auto D = static_cast<Eigen::Index>(s.state_dim);
      Matrix out = Matrix::Zero(w.rows(), D);
      if (zero) return out;
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        Eigen::VectorXd x = w.row(r).tail(D).transpose();
        out.row(r) = vector_field(s, x, p).transpose();
      }
      return out;
    }
    SystemSpec s;
    std::size_t n;
    double p;
    bool zero;
  };
  SystemSpec sys_;
  std::size_t isl_;
  bool zero_;
};

TrajectoryDataset dataset(const std::string& sys, std::vector<double> params, std::size_t ics, double t_end,
                          Split split = Split::train, std::optional<Scaler> sc = {}, std::uint64_t seed = 3) {
  DatasetRequest r;
  r.split = split;
  r.params = std::move(params);
  r.n_ics = ics;
  r.t_end = t_end;
  r.seed = seed;
  r.scaler = std::move(sc);
  return build_dataset(system_spec(sys), r);
}

ModelSpec small_spec(Variant v, TargetKind k, std::size_t isl = 8) {
  ModelSpec m;
  m.name = "m";
  m.variant = v;
  m.target.kind = k;
  m.target.isl = isl;
  m.target.channels = 6;
  m.target.lstm_hidden = 6;
  m.target.ffnn_hidden = {8, 8};
  m.n_e = 4;
  m.d_e = 8;
  m.hnn_hidden = {8, 8};
  return m;
}

// dx/dt = -p x as a one-dimensional "system"
TrajectoryDataset decay_dataset(std::vector<double> ps, std::size_t n, double dt, std::uint64_t seed) {
  TrajectoryDataset ds;
  ds.system = system_spec("vanderpol");
  ds.system.name = "decay";
  ds.system.state_dim = 1;
  ds.system.lo = 0.5;
  ds.system.hi = 2.0;
  ds.system.sample_interval = dt;
  ds.params = std::move(ps);
  ds.n_ics = 3;
  ds.n_steps = n;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-2, 2);
  for (double p : ds.params)
    for (std::size_t j = 0; j < ds.n_ics; ++j) {
      const double x0 = u(gen);
      for (std::size_t t = 0; t < n; ++t) {
        const double x = x0 * std::exp(-p * dt * static_cast<double>(t));
        ds.X.push_back(x);
        ds.dX.push_back(-p * x);
      }
    }
  ds.scaler = compute_scaler(ds);
  return ds;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("batch loss gradients of every variant match finite differences") {
    auto ds = dataset("vanderpol", {1.5, 5.0}, 1, 2.0);
    WindowSource src(ds, 8, 7, TargetMode::euler);
    std::vector<std::size_t> rows(src.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const Batch b = src.batch(rows);
    for (auto [v, k] : {std::pair{Variant::phlienet, TargetKind::tcnn_cd}, {Variant::agnostic, TargetKind::lstm},
                        {Variant::augmented, TargetKind::ffnn}, {Variant::augmented, TargetKind::tcnn_cd}}) {
      auto m = Model::create(small_spec(v, k), 2, 1.0, 8.0, ds.scaler, 5);
      auto rep = finite_difference_check([&](Graph& g) { return m.loss_graph(g, b); }, m.params, 1e-5, 1e-4);
      CHECK(rep.max_relative_error < 1e-4);
    }
  }

  TEST_CASE("two-anchor phlienet gradients") {
    auto ds = dataset("vanderpol", {2.0, 7.0}, 1, 1.5);
    WindowSource src(ds, 8, 5, TargetMode::euler);
    std::vector<std::size_t> rows(src.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const Batch b = src.batch(rows);
    auto spec = small_spec(Variant::phlienet, TargetKind::tcnn_cd);
    spec.n_e = 2;
    spec.d_e = 4;
    auto m = Model::create(spec, 2, 1.0, 8.0, ds.scaler, 1);
    auto loss = [&](Graph& g) { return m.loss_graph(g, b); };
    CHECK(finite_difference_check(loss, m.params, 1e-5, 1e-4).max_relative_error < 1e-4);
    // below ~1e-4 the central difference itself is limited by roundoff (~1e-11 absolute)
    CHECK(finite_difference_check(loss, m.params, 1e-5, 1e-5, 1e-4).max_relative_error < 1e-5);
  }

  TEST_CASE("predictor agrees with the training graph") {
    auto ds = dataset("vanderpol", {3.0}, 1, 2.0);
    auto m = Model::create(small_spec(Variant::phlienet, TargetKind::tcnn_cd), 2, 1.0, 8.0, ds.scaler, 2);
    WindowSource src(ds, 8, 9, TargetMode::euler);
    std::vector<std::size_t> rows{0, 1};
    const Batch b = src.batch(rows);
    Graph g(&m.params, false);
    const Matrix y = g.value(m.predict_graph(g, b));
    Matrix raw(2, 16);
    for (Eigen::Index r = 0; r < 2; ++r)
      for (Eigen::Index c = 0; c < 16; ++c) raw(r, c) = b.windows(r, c) * ds.scaler.x_std[c % 2] + ds.scaler.x_mean[c % 2];
    const Matrix f = m.bind(3.0)->predict(raw);
    for (Eigen::Index r = 0; r < 2; ++r)
      for (Eigen::Index d = 0; d < 2; ++d)
        CHECK(f(r, d) == doctest::Approx(y(r, d) * ds.scaler.dx_std[d] + ds.scaler.dx_mean[d]).epsilon(1e-12));
  }

  TEST_CASE("loss of a perfect model is zero and of a zero model is the mean target norm") {
    auto ds = dataset("vanderpol", {3.0}, 1, 2.0);
    auto m = Model::create(small_spec(Variant::agnostic, TargetKind::ffnn), 2, 1.0, 8.0, ds.scaler, 2);
    for (auto& e : m.params.entries()) std::fill(e.values.begin(), e.values.end(), 0.0);
    WindowSource src(ds, 8, 3, TargetMode::euler);
    std::vector<std::size_t> rows(src.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    Batch b = src.batch(rows);
    Graph g(&m.params, false);
    const double loss = g.scalar(m.loss_graph(g, b));
    CHECK(loss == doctest::Approx(b.targets.squaredNorm() / static_cast<double>(rows.size())).epsilon(1e-12));
    b.targets.setZero();
    Graph g2(&m.params, false);
    CHECK(g2.scalar(m.loss_graph(g2, b)) == 0.0);
  }

  TEST_CASE("phlienet rejects non-tcnn targets") {
    CHECK_THROWS(Model::create(small_spec(Variant::phlienet, TargetKind::lstm), 2, 1.0, 8.0, Scaler{}, 1));
  }
}

TEST_SUITE("rollout") {
  TEST_CASE("oracle model reproduces an Euler re-integration") {
    auto ds = dataset("vanderpol", {2.0}, 1, 5.0);
    OracleModel o(ds.system, 4);
    auto truth = ds.trajectory(0, 0);
    auto run = forecast(o, truth, 2.0, ds.system.sample_interval, ds.n_steps);
    Eigen::MatrixXd euler = truth;
    for (Eigen::Index t = 3; t + 1 < euler.rows(); ++t)
      euler.row(t + 1) = euler.row(t) + ds.system.sample_interval * vector_field(ds.system, euler.row(t).transpose(), 2.0).transpose();
    CHECK((run.x_pred - euler).norm() == 0.0);
    CHECK_FALSE(run.diverged);
  }

  TEST_CASE("zero model stays constant and horizon ISL is pure warm-up") {
    auto ds = dataset("vanderpol", {2.0}, 1, 2.0);
    OracleModel z(ds.system, 5, true);
    auto truth = ds.trajectory(0, 0);
    auto run = forecast(z, truth, 2.0, 0.05, ds.n_steps);
    for (Eigen::Index t = 5; t < run.x_pred.rows(); ++t) CHECK(run.x_pred.row(t) == truth.row(4));
    auto warm = forecast(z, truth, 2.0, 0.05, 5);
    CHECK(warm.x_pred == truth.topRows(5));
  }

  TEST_CASE("divergence is flagged and later rows are NaN") {
    struct Blow : DerivativeModel {
      std::string id() const override { return "blow"; }
      std::unique_ptr<Predictor> bind(double) const override {
        struct P : Predictor {
          std::size_t isl() const override { return 2; }
          Matrix predict(const Matrix& w) const override { return 1e3 * w.rightCols(2); }
        };
        return std::make_unique<P>();
      }
    } blow;
    Eigen::MatrixXd truth = Eigen::MatrixXd::Constant(200, 2, 1.0);
    auto run = forecast(blow, truth, 0.0, 0.1, 200);
    CHECK(run.diverged);
    REQUIRE(run.diverged_at > 2);
    CHECK(std::isnan(run.x_pred(run.diverged_at, 0)));
    CHECK(run.x_pred.row(run.diverged_at - 1).allFinite());
  }

  TEST_CASE("batch forecast order and size") {
    auto tr = dataset("vanderpol", {2.0, 4.0}, 3, 1.0);
    OracleModel o(tr.system, 4);
    auto runs = batch_forecast(o, tr, "oracle");
    REQUIRE(runs.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) {
      CHECK(runs[k].param_index == k / 3);
      CHECK(runs[k].ic_index == k % 3);
      CHECK_FALSE(runs[k].diverged);
    }
    TrajectoryDataset empty = tr;
    empty.params.clear();
    empty.X.clear();
    empty.dX.clear();
    CHECK(batch_forecast(o, empty, "oracle").empty());
  }
}

TEST_SUITE("trainer") {
  TEST_CASE("plateau cut after 15 flat epochs, stop after 30") {
    PlateauScheduler s(1e-3, 0.25, 15, 30, 1e-5);
    CHECK(s.observe(1.0) == PlateauScheduler::Action::none);
    int cuts = 0;
    std::size_t stop_at = 0;
    for (std::size_t e = 1; e <= 40; ++e) {
      auto a = s.observe(1.0);
      if (a == PlateauScheduler::Action::cut) {
        ++cuts;
        CHECK(e == 15);
      }
      if (a == PlateauScheduler::Action::stop) {
        stop_at = e;
        break;
      }
    }
    CHECK(cuts == 1);
    CHECK(stop_at == 30);
    CHECK(s.lr() == doctest::Approx(0.25e-3));
  }

  TEST_CASE("improvement resets the counters") {
    PlateauScheduler s(1.0, 0.5, 3, 5, 0.0);
    s.observe(1.0);
    s.observe(1.0);
    s.observe(1.0);
    CHECK(s.observe(0.9) == PlateauScheduler::Action::none);
    CHECK(s.observe(0.9) == PlateauScheduler::Action::none);
    CHECK(s.observe(0.9) == PlateauScheduler::Action::none);
    CHECK(s.observe(0.9) == PlateauScheduler::Action::cut);
    CHECK(s.cuts() == 1);
  }

  TEST_CASE("seed selection") {
    CHECK(select_best_seed({0.3, 0.1, 0.2, 0.5, 0.4}) == 1);
    CHECK(select_best_seed({0.7}) == 0);
    CHECK(select_best_seed({0.2, 0.1, 0.1}) == 1);
  }

  TEST_CASE("windows and euler targets") {
    auto ds = dataset("vanderpol", {2.0}, 1, 1.0);
    WindowSource e(ds, 4, 1, TargetMode::euler), a(ds, 4, 1, TargetMode::analytic);
    CHECK(e.size() == ds.n_steps - 4);
    std::vector<std::size_t> r{0};
    auto be = e.batch(r), ba = a.batch(r);
    const double dt = ds.system.sample_interval;
    for (int d = 0; d < 2; ++d) {
      const double want = (ds.state(0, 0, 4)[d] - ds.state(0, 0, 3)[d]) / dt;
      CHECK(be.targets(0, d) * ds.scaler.dx_std[d] + ds.scaler.dx_mean[d] == doctest::Approx(want).epsilon(1e-12));
      CHECK(ba.targets(0, d) * ds.scaler.dx_std[d] + ds.scaler.dx_mean[d] == doctest::Approx(ds.deriv(0, 0, 3)[d]).epsilon(1e-12));
      CHECK(be.windows(0, 3 * 2 + d) == doctest::Approx((ds.state(0, 0, 3)[d] - ds.scaler.x_mean[d]) / ds.scaler.x_std[d]));
    }
    CHECK(WindowSource(ds, 4, 5, TargetMode::euler).size() == (ds.n_steps - 4 + 4) / 5);
  }

  TEST_CASE("zero epochs returns the initial model") {
    auto ds = dataset("vanderpol", {2.0, 5.0}, 1, 1.0);
    TrainConfig c;
    c.max_epochs = 0;
    c.seeds = 1;
    auto spec = small_spec(Variant::agnostic, TargetKind::ffnn);
    auto r = train(spec, ds, ds, c, 4);
    auto init = Model::create(spec, 2, 1.0, 8.0, ds.scaler, 4);
    CHECK(r.model.params.flatten() == init.params.flatten());
    CHECK(r.history.size() == 1);
  }

  TEST_CASE("linear decay is learned") {
    auto tr = decay_dataset({1.0}, 60, 0.05, 1), va = decay_dataset({1.0}, 60, 0.05, 2);
    va.scaler = tr.scaler;
    TrainConfig c;
    c.max_epochs = 200;
    c.batch_size = 32;
    c.lr0 = 3e-3;
    c.noise = 0.0;
    c.seeds = 1;
    auto spec = small_spec(Variant::agnostic, TargetKind::ffnn, 1);
    auto r = train(spec, tr, va, c, 1);
    CHECK_FALSE(r.failed);
    CHECK(r.best_val * 100 <= r.history.front().val_loss);
  }

  TEST_CASE("multi-seed training is deterministic and keeps the best seed") {
    auto tr = decay_dataset({0.6, 1.2, 1.9}, 40, 0.05, 1), va = decay_dataset({0.6, 1.2, 1.9}, 40, 0.05, 2);
    va.scaler = tr.scaler;
    TrainConfig c;
    c.max_epochs = 5;
    c.batch_size = 16;
    c.seeds = 3;
    c.base_seed = 10;
    auto spec = small_spec(Variant::phlienet, TargetKind::tcnn_cd, 4);
    auto a = train_multiseed(spec, tr, va, c);
    auto b = train_multiseed(spec, tr, va, c);
    CHECK(a.val_losses == b.val_losses);
    CHECK(a.best.model.params.flatten() == b.best.model.params.flatten());
    CHECK(a.best_index == select_best_seed(a.val_losses));
    CHECK(a.best.seed == 10 + a.best_index);
  }

  TEST_CASE("optimizers reduce a quadratic") {
    for (auto k : {OptimizerKind::adam, OptimizerKind::ranger}) {
      std::vector<double> th{3.0, -2.0};
      auto o = Optimizer::make(k, 2);
      for (int i = 0; i < 3000; ++i) o->step(th, {2 * th[0], 2 * th[1]}, 1e-2);
      CHECK(std::abs(th[0]) < 0.05);
      CHECK(std::abs(th[1]) < 0.05);
    }
    CHECK(parse_optimizer("ranger-like") == OptimizerKind::ranger);
  }

  TEST_CASE("config validation") {
    TrainConfig c;
    c.batch_size = 0;
    CHECK_THROWS(c.validate());
    CHECK_THROWS(train_config_from_json({{"bogus", 1}}));
    auto j = to_json(TrainConfig{});
    CHECK(to_json(train_config_from_json(j)) == j);
  }

  TEST_CASE("checkpoint round trip") {
    auto tr = decay_dataset({0.6, 1.9}, 30, 0.05, 1);
    TrainConfig c;
    c.max_epochs = 2;
    c.seeds = 1;
    auto r = train(small_spec(Variant::phlienet, TargetKind::tcnn_cd, 4), tr, tr, c, 3);
    auto dir = std::filesystem::temp_directory_path() / "phlie_unit_ckpt";
    std::filesystem::remove_all(dir);
    save_checkpoint(r, c, dir);
    auto back = load_checkpoint(dir);
    CHECK(back.model.params.flatten() == r.model.params.flatten());
    CHECK(back.best_val == r.best_val);
    CHECK(back.history.size() == r.history.size());
    CHECK(back.model.target_weights(1.1) == r.model.target_weights(1.1));
    std::filesystem::remove_all(dir);
  }
}
