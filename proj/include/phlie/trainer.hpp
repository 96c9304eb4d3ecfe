#pragma once

#include "phlie/model.hpp"
#include "phlie/optimizer.hpp"
#include "phlie/sysgen.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace phlie {

/// What the model learns to predict for a window ending at t: the analytic
/// derivative dX[t], or the increment (x[t+1] - x[t]) / dt that makes the
/// Euler rollout step exact on the training data.
enum class TargetMode { euler, analytic };

std::string target_mode_name(TargetMode m);
TargetMode parse_target_mode(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t max_epochs = 1000;
  double lr0 = 1e-3;
  double plateau_factor = 0.25;
  std::size_t plateau_patience = 15;
  double plateau_rel_margin = 1e-5;
  std::size_t stop_patience = 30;
  double noise = 0.05;
  std::size_t seeds = 5;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t window_stride = 1;
  TargetMode target_mode = TargetMode::euler;
  std::uint64_t base_seed = 0;

  void validate() const;
};

/// Plateau learning-rate cuts plus early stopping, both keyed on validation loss.
class PlateauScheduler {
 public:
  enum class Action { none, cut, stop };

  PlateauScheduler(double lr0, double factor, std::size_t plateau_patience, std::size_t stop_patience,
                   double rel_margin);

  /// Feed one validation loss. The first call only sets the reference.
  Action observe(double val_loss);

  double lr() const { return lr_; }
  double best() const { return best_; }
  std::size_t cuts() const { return cuts_; }

 private:
  double lr_, factor_;
  std::size_t plateau_patience_, stop_patience_;
  double margin_;
  double best_;
  bool seen_ = false;
  std::size_t since_cut_ = 0, since_best_ = 0, cuts_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Model model;  // best-validation snapshot
  std::vector<EpochLog> history;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  bool failed = false;
  std::string failure;
  std::uint64_t seed = 0;
  std::size_t seed_index = 0;
};

/// One (param, ic, t) training sample; the window covers t-ISL+1 .. t.
struct WindowIndex {
  std::uint32_t param = 0, ic = 0, t = 0;
};

/// Normalized windows and targets of a dataset, ready for batching.
class WindowSource {
 public:
  WindowSource(const TrajectoryDataset& ds, std::size_t isl, std::size_t stride, TargetMode mode);

  const std::vector<WindowIndex>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }

  /// Rows for the given sample indices; `noise` adds N(0, noise) to every
  /// window entry (normalized units) using `gen`.
  Batch batch(std::span<const std::size_t> rows, double noise = 0.0, std::mt19937_64* gen = nullptr) const;

 private:
  const TrajectoryDataset* ds_;
  std::size_t isl_;
  TargetMode mode_;
  std::vector<double> xn_;  // normalized states, dataset layout
  std::vector<double> yn_;  // normalized targets per (param, ic, t)
  std::vector<WindowIndex> indices_;
};

/// Mean loss over all windows, no noise.
double dataset_loss(const Model& model, const WindowSource& src, std::size_t batch_size = 1024);

TrainResult train(const ModelSpec& spec, const TrajectoryDataset& train_ds, const TrajectoryDataset& val_ds,
                  const TrainConfig& cfg, std::uint64_t seed, std::size_t seed_index = 0);

/// Index of the minimum; ties go to the lowest index.
std::size_t select_best_seed(const std::vector<double>& val_losses);

struct MultiSeedResult {
  TrainResult best;
  std::size_t best_index = 0;
  std::vector<double> val_losses;
  std::vector<std::vector<EpochLog>> histories;
  std::vector<bool> failed;
};

/// Per-seed hooks: `load` may return a finished result (resume), `store`
/// persists a finished one. Either may be empty.
struct SeedHooks {
  std::function<std::optional<TrainResult>(std::size_t seed_index)> load;
  std::function<void(const TrainResult&)> store;
};

MultiSeedResult train_multiseed(const ModelSpec& spec, const TrajectoryDataset& train_ds,
                                const TrajectoryDataset& val_ds, const TrainConfig& cfg, const SeedHooks& hooks = {});

}  // namespace phlie
