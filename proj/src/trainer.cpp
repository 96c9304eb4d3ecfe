#include "phlie/trainer.hpp"

#include "phlie/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace phlie {

std::string target_mode_name(TargetMode m) { return m == TargetMode::euler ? "euler" : "analytic"; }

TargetMode parse_target_mode(const std::string& s) {
  if (s == "euler") return TargetMode::euler;
  if (s == "analytic") return TargetMode::analytic;
  throw std::invalid_argument("unknown target mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw std::invalid_argument("plateau_factor must be in (0,1)");
  if (plateau_patience == 0 || stop_patience == 0) throw std::invalid_argument("patience must be positive");
  if (plateau_rel_margin < 0.0) throw std::invalid_argument("plateau_rel_margin must be nonnegative");
  if (noise < 0.0) throw std::invalid_argument("noise must be nonnegative");
  if (seeds == 0) throw std::invalid_argument("seeds must be positive");
  if (window_stride == 0) throw std::invalid_argument("window_stride must be positive");
}

PlateauScheduler::PlateauScheduler(double lr0, double factor, std::size_t plateau_patience, std::size_t stop_patience,
                                   double rel_margin)
    : lr_(lr0),
      factor_(factor),
      plateau_patience_(plateau_patience),
      stop_patience_(stop_patience),
      margin_(rel_margin),
      best_(std::numeric_limits<double>::infinity()) {}

PlateauScheduler::Action PlateauScheduler::observe(double v) {
  if (!seen_) {
    seen_ = true;
    best_ = v;
    return Action::none;
  }
  if (v < best_ * (1.0 - margin_)) {
    best_ = v;
    since_best_ = since_cut_ = 0;
    return Action::none;
  }
  ++since_best_;
  ++since_cut_;
  if (since_best_ >= stop_patience_) return Action::stop;
  if (since_cut_ >= plateau_patience_) {
    lr_ *= factor_;
    since_cut_ = 0;
    ++cuts_;
    return Action::cut;
  }
  return Action::none;
}

WindowSource::WindowSource(const TrajectoryDataset& ds, std::size_t isl, std::size_t stride, TargetMode mode)
    : ds_(&ds), isl_(isl), mode_(mode) {
  if (ds.n_steps < isl + 1) throw std::invalid_argument("trajectories are shorter than ISL + 1");
  const std::size_t D = ds.dim();
  const auto& sc = ds.scaler;
  xn_.resize(ds.X.size());
  yn_.resize(ds.X.size());
  const double dt = ds.system.sample_interval;
  for (std::size_t i = 0; i < ds.n_params(); ++i)
    for (std::size_t j = 0; j < ds.n_ics; ++j)
      for (std::size_t t = 0; t < ds.n_steps; ++t) {
        const std::size_t o = ds.offset(i, j, t);
        for (std::size_t d = 0; d < D; ++d) {
          xn_[o + d] = (ds.X[o + d] - sc.x_mean[d]) / sc.x_std[d];
          double y = 0.0;
          if (mode == TargetMode::analytic) {
            y = ds.dX[o + d];
          } else if (t + 1 < ds.n_steps) {
            y = (ds.X[o + D + d] - ds.X[o + d]) / dt;
          }
          yn_[o + d] = (y - sc.dx_mean[d]) / sc.dx_std[d];
        }
      }
  for (std::size_t i = 0; i < ds.n_params(); ++i)
    for (std::size_t j = 0; j < ds.n_ics; ++j)
      for (std::size_t t = isl - 1; t + 1 < ds.n_steps; t += stride)
        indices_.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(t)});
}

Batch WindowSource::batch(std::span<const std::size_t> rows, double noise, std::mt19937_64* gen) const {
  const std::size_t D = ds_->dim();
  Batch b;
  b.windows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(isl_ * D));
  b.targets.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(D));
  b.p_raw.resize(rows.size());
  std::normal_distribution<double> nd(0.0, noise > 0.0 ? noise : 1.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& w = indices_.at(rows[r]);
    const std::size_t start = ds_->offset(w.param, w.ic, w.t + 1 - isl_);
    auto row = b.windows.row(static_cast<Eigen::Index>(r));
    for (std::size_t k = 0; k < isl_ * D; ++k) row(static_cast<Eigen::Index>(k)) = xn_[start + k];
    if (noise > 0.0 && gen != nullptr) {
      for (std::size_t k = 0; k < isl_ * D; ++k) row(static_cast<Eigen::Index>(k)) += nd(*gen);
    }
    const std::size_t o = ds_->offset(w.param, w.ic, w.t);
    for (std::size_t d = 0; d < D; ++d) b.targets(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = yn_[o + d];
    b.p_raw[r] = ds_->params[w.param];
  }
  return b;
}

double dataset_loss(const Model& model, const WindowSource& src, std::size_t batch_size) {
  if (src.size() == 0) return 0.0;
  double total = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < src.size(); b += batch_size) {
    const std::size_t n = std::min(batch_size, src.size() - b);
    rows.resize(n);
    std::iota(rows.begin(), rows.end(), b);
    const Batch batch = src.batch(rows);
    Graph g(&model.params, false);
    total += g.scalar(model.loss_graph(g, batch)) * static_cast<double>(n);
  }
  return total / static_cast<double>(src.size());
}

TrainResult train(const ModelSpec& spec, const TrajectoryDataset& train_ds, const TrajectoryDataset& val_ds,
                  const TrainConfig& cfg, std::uint64_t seed, std::size_t seed_index) {
  cfg.validate();
  const auto& sys = train_ds.system;
  TrainResult res;
  res.seed = seed;
  res.seed_index = seed_index;
  res.model = Model::create(spec, sys.state_dim, sys.lo, sys.hi, train_ds.scaler, seed);
  Model& model = res.model;
  const std::size_t isl = model.spec.target.isl;

  const WindowSource tr(train_ds, isl, cfg.window_stride, cfg.target_mode);
  const WindowSource va(val_ds, isl, cfg.window_stride, cfg.target_mode);

  double val = dataset_loss(model, va);
  res.history.push_back({0, std::numeric_limits<double>::quiet_NaN(), val, cfg.lr0});
  res.best_val = val;
  res.best_epoch = 0;
  ParameterStore best = model.params;
  if (!std::isfinite(val)) {
    res.failed = true;
    res.failure = "non-finite validation loss at initialization";
    return res;
  }

  PlateauScheduler sched(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience, cfg.stop_patience, cfg.plateau_rel_margin);
  sched.observe(val);
  auto opt = Optimizer::make(cfg.optimizer, model.params.scalar_count());
  std::vector<double> theta = model.params.flatten();
  std::vector<std::size_t> order(tr.size());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::mt19937_64 gen(derive_seed(seed, 0x5eed, epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), gen);
    double sum = 0.0;
    bool broke = false;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b);
      const Batch batch = tr.batch(std::span<const std::size_t>(order.data() + b, n), cfg.noise, &gen);
      try {
        auto vg = value_and_grad([&](Graph& g) { return model.loss_graph(g, batch); }, model.params);
        const auto grad = vg.grads.flatten();
        if (!std::all_of(grad.begin(), grad.end(), [](double x) { return std::isfinite(x); })) {
          throw NonFiniteError("gradient", "non-finite gradient");
        }
        sum += vg.loss * static_cast<double>(n);
        opt->step(theta, grad, sched.lr());
        model.params.unflatten(theta);
      } catch (const NonFiniteError& e) {
        res.failed = true;
        res.failure = "epoch " + std::to_string(epoch) + ": " + e.what() + " [" + e.tensor() + "]";
        broke = true;
        break;
      }
    }
    if (broke) break;
    val = dataset_loss(model, va);
    res.history.push_back({epoch, sum / static_cast<double>(std::max<std::size_t>(1, order.size())), val, sched.lr()});
    if (!std::isfinite(val)) {
      res.failed = true;
      res.failure = "epoch " + std::to_string(epoch) + ": non-finite validation loss";
      break;
    }
    if (val < res.best_val) {
      res.best_val = val;
      res.best_epoch = epoch;
      best = model.params;
    }
    if (sched.observe(val) == PlateauScheduler::Action::stop) break;
  }
  model.params = std::move(best);
  return res;
}

std::size_t select_best_seed(const std::vector<double>& val_losses) {
  if (val_losses.empty()) throw std::invalid_argument("no seeds to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_losses.size(); ++i) {
    const double v = val_losses[i];
    const double b = val_losses[best];
    if (std::isnan(b) || (!std::isnan(v) && v < b)) best = i;
  }
  return best;
}

MultiSeedResult train_multiseed(const ModelSpec& spec, const TrajectoryDataset& train_ds,
                                const TrajectoryDataset& val_ds, const TrainConfig& cfg, const SeedHooks& hooks) {
  cfg.validate();
  std::vector<std::optional<TrainResult>> results(cfg.seeds);
  parallel_for(cfg.seeds, [&](std::size_t i) {
    if (hooks.load) {
      if (auto r = hooks.load(i)) {
        results[i] = std::move(r);
        return;
      }
    }
    results[i] = train(spec, train_ds, val_ds, cfg, cfg.base_seed + i, i);
    if (hooks.store) hooks.store(*results[i]);
  });
  MultiSeedResult out;
  std::vector<double> keyed;
  bool any_ok = false;
  for (const auto& r : results) {
    out.val_losses.push_back(r->best_val);
    out.histories.push_back(r->history);
    out.failed.push_back(r->failed);
    // a failed seed still carries its last finite best snapshot; rank it after every healthy one
    keyed.push_back(r->failed ? std::numeric_limits<double>::infinity() : r->best_val);
    any_ok = any_ok || !r->failed;
  }
  if (!any_ok) {
    std::string why;
    for (const auto& r : results) why += "\n  seed " + std::to_string(r->seed_index) + ": " + r->failure;
    throw std::runtime_error("all " + std::to_string(cfg.seeds) + " seeds failed:" + why);
  }
  out.best_index = select_best_seed(keyed);
  out.best = std::move(*results[out.best_index]);
  return out;
}

}  // namespace phlie
