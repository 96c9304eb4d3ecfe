#include "phlie/experiment.hpp"

#include "phlie/parallel.hpp"
#include "phlie/rollout.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>

namespace phlie {

using nlohmann::json;

namespace {

struct Protocol {
  std::size_t n_train = 50;
  std::size_t n_ics_train = 10;
  std::size_t n_ics_test = 10;
  std::size_t n_interp = 10;
  double t_end_test = 50.0;
  std::vector<double> extrap;
  std::size_t isl = 64;
};

Protocol paper_protocol(const std::string& s) {
  Protocol p;
  if (s == "vanderpol") {
    p.t_end_test = 50;
    p.extrap = {0.4, 0.5, 0.6, 0.7, 0.8, 8.3, 8.6, 8.9, 9.2, 9.4};
  } else if (s == "roessler") {
    p.t_end_test = 100;
    p.extrap = {1.8, 2.0, 2.3, 2.5, 2.8, 9.2, 9.5, 9.7, 10.0, 10.2};
  } else if (s == "finance") {
    p.t_end_test = 100;
    p.extrap = {0.55, 0.65, 0.75, 0.85, 0.95, 3.55, 3.60, 3.65, 3.70, 3.75};
  } else if (s == "lorenz3d") {
    p.n_ics_train = 5;
    p.n_ics_test = 20;
    p.t_end_test = 30;
    p.isl = 32;
  } else if (s == "chua") {
    p.t_end_test = 50;
    p.extrap = {8.1, 8.2, 8.25, 8.3, 8.4, 10.6, 10.7, 10.75, 10.8, 10.9};
  } else if (s == "duffing") {
    p.n_train = 100;
    p.n_interp = 50;
    p.t_end_test = 50;
  } else {
    throw ConfigError("unknown system '" + s + "'");
  }
  return p;
}

json phlienet_entry(std::size_t n_e, std::size_t d_e, std::size_t isl) {
  return {{"name", "phlienet_" + std::to_string(n_e) + "_" + std::to_string(d_e)},
          {"variant", "phlienet"},
          {"target", {{"kind", "tcnn_cd"}, {"isl", isl}, {"kernel", 5}, {"channels", 22}}},
          {"lie", {{"n_e", n_e}, {"d_e", d_e}, {"sigma", 0.2}}},
          {"hypernet", {{"hidden", {64, 64}}}}};
}

json lstm_entry(const std::string& name, const std::string& variant, std::size_t isl) {
  return {{"name", name}, {"variant", variant}, {"target", {{"kind", "lstm"}, {"isl", isl}, {"hidden", 48}}}};
}

}  // namespace

json builtin_profile(const std::string& system, const std::string& profile) {
  const SystemSpec spec = system_spec(system);
  const Protocol p = paper_protocol(system);
  json j;
  j["system"] = system;
  j["seed"] = 7;
  j["theta_rel"] = 0.2;
  j["probes"] = 200;
  if (profile == "paper") {
    j["out"] = "runs/" + system + "_paper";
    j["splits"] = {
        {"train", {{"n_params", p.n_train}, {"seed_offset", 0}, {"n_ics", p.n_ics_train}, {"t_end", spec.t_end}}},
        {"val", {{"params_from", "train"}, {"n_ics", p.n_ics_train}, {"t_end", spec.t_end}}},
        {"test-interp", {{"n_params", p.n_interp}, {"seed_offset", 1000}, {"n_ics", p.n_ics_test}, {"t_end", p.t_end_test}}}};
    if (system == "lorenz3d") {
      j["splits"]["test-interp"] = {{"params", {12, 16, 20, 22, 24, 26, 28, 30, 32, 34}},
                                    {"n_ics", p.n_ics_test},
                                    {"t_end", p.t_end_test}};
    }
    if (!p.extrap.empty()) {
      j["splits"]["test-extrap"] = {{"params", p.extrap}, {"n_ics", p.n_ics_test}, {"t_end", p.t_end_test}};
    }
    j["train"] = {{"batch_size", 256}, {"max_epochs", 1000}, {"lr0", 1e-3},  {"seeds", 5},
                  {"noise", 0.05},     {"window_stride", 1}, {"optimizer", "ranger-like"}};
    j["models"] = {phlienet_entry(16, 32, p.isl),
                   phlienet_entry(32, 16, p.isl),
                   phlienet_entry(32, 64, p.isl),
                   {{"name", "ffnn_p"}, {"variant", "augmented"}, {"target", {{"kind", "ffnn"}, {"isl", 1}, {"hidden", {40, 40}}}}},
                   lstm_entry("lstm_a", "agnostic", p.isl),
                   lstm_entry("lstm_p", "augmented", p.isl),
                   {{"name", "tcnn_a"},
                    {"variant", "agnostic"},
                    {"target", {{"kind", "tcnn_cd"}, {"isl", p.isl}, {"kernel", 5}, {"channels", 22}}}}};
  } else if (profile == "desk") {
    const bool lorenz = system == "lorenz3d";
    const std::size_t isl = lorenz ? 32 : 16;
    j["out"] = "runs/" + system + "_desk";
    j["splits"] = {{"train", {{"n_params", lorenz ? 12 : 20}, {"seed_offset", 0}, {"n_ics", lorenz ? 5 : 4}, {"t_end", spec.t_end}}},
                   {"val", {{"params_from", "train"}, {"n_ics", 2}, {"t_end", spec.t_end}}},
                   {"test-interp", {{"n_params", 6}, {"seed_offset", 1000}, {"n_ics", 4}, {"t_end", p.t_end_test}}}};
    if (lorenz) {
      j["splits"]["test-interp"] = {{"params", {12, 16, 24, 30}}, {"n_ics", 10}, {"t_end", p.t_end_test}};
    }
    if (!p.extrap.empty()) {
      j["splits"]["test-extrap"] = {{"params", {p.extrap.front(), p.extrap.back()}}, {"n_ics", 4}, {"t_end", p.t_end_test}};
    }
    j["train"] = {{"batch_size", 256}, {"max_epochs", 200}, {"lr0", 1e-3},  {"seeds", 2},
                  {"noise", 0.05},     {"window_stride", 4}, {"optimizer", "ranger-like"}};
    j["models"] = json::array({phlienet_entry(16, 16, isl)});
    if (!lorenz) {
      j["models"].push_back(lstm_entry("lstm_a", "agnostic", isl));
      j["models"].push_back(lstm_entry("lstm_p", "augmented", isl));
    }
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
  }
  return j;
}

const SplitProtocol& ExperimentConfig::split(Split s) const {
  for (const auto& sp : splits)
    if (sp.split == s) return sp;
  throw CommandError(kExitUsage, "split '" + split_name(s) + "' is not configured");
}

const ModelEntry& ExperimentConfig::model(const std::string& name) const {
  for (const auto& m : models)
    if (m.spec.name == name) return m;
  throw CommandError(kExitUsage, "model '" + name + "' is not configured");
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  try {
    c.source = j;
    c.system = system_spec(j.at("system").get<std::string>());
    if (j.contains("system_overrides")) {
      for (auto it = j["system_overrides"].begin(); it != j["system_overrides"].end(); ++it) {
        const auto& k = it.key();
        if (k == "range") {
          c.system.lo = it.value().at(0).get<double>();
          c.system.hi = it.value().at(1).get<double>();
        } else if (k == "solver_step") c.system.solver_step = it.value().get<double>();
        else if (k == "sample_interval") c.system.sample_interval = it.value().get<double>();
        else if (k == "t_trans") c.system.t_trans = it.value().get<double>();
        else if (k == "fixed_params") {
          for (auto f = it.value().begin(); f != it.value().end(); ++f) c.system.fixed_params[f.key()] = f.value().get<double>();
        } else throw ConfigError("unknown system override '" + k + "'");
      }
    }
    c.system.validate();
    c.seed = j.value("seed", std::uint64_t{0});
    c.out = j.value("out", std::string("out"));
    c.theta = j.value("theta_rel", 0.2);
    c.probes = j.value("probes", std::size_t{200});
    const json& sp = j.at("splits");
    if (!sp.contains("train") || !sp.contains("val")) throw ConfigError("config needs train and val splits");
    for (const char* name : {"train", "val", "test-interp", "test-extrap"}) {
      if (!sp.contains(name)) continue;
      const json& s = sp.at(name);
      SplitProtocol p;
      p.split = parse_split(name);
      p.n_ics = s.at("n_ics").get<std::size_t>();
      p.t_end = s.value("t_end", c.system.t_end);
      if (s.contains("params")) p.params = s["params"].get<std::vector<double>>();
      else if (s.value("params_from", "") == "train") p.params_from_train = true;
      else {
        p.n_params = s.at("n_params").get<std::size_t>();
        p.seed_offset = s.value("seed_offset", std::size_t{0});
      }
      if (p.n_ics == 0) throw ConfigError(std::string("split ") + name + " needs n_ics > 0");
      c.splits.push_back(std::move(p));
    }
    c.train = train_config_from_json(j.value("train", json::object()));
    std::set<std::string> names;
    std::size_t idx = 0;
    for (const auto& m : j.at("models")) {
      ModelEntry e;
      e.spec = model_spec_from_json(m);
      if (!names.insert(e.spec.name).second) throw ConfigError("duplicate model name '" + e.spec.name + "'");
      TrainConfig base = c.train;
      if (!j.value("train", json::object()).contains("base_seed")) base.base_seed = derive_seed(c.seed, 0x7a11, idx);
      e.train = train_config_from_json(m.value("train", json::object()), base);
      c.models.push_back(std::move(e));
      ++idx;
    }
  } catch (const json::exception& e) {
    throw CommandError(kExitUsage, std::string("bad config: ") + e.what());
  } catch (const ConfigError& e) {
    throw CommandError(kExitUsage, e.what());
  } catch (const std::invalid_argument& e) {
    throw CommandError(kExitUsage, std::string("bad config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw CommandError(kExitUsage, "cannot open config " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw CommandError(kExitUsage, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

std::vector<double> split_params(const ExperimentConfig& cfg, const SplitProtocol& sp) {
  if (!sp.params.empty()) return sp.params;
  if (sp.params_from_train) return split_params(cfg, cfg.split(Split::train));
  return sobol_sample(cfg.system.lo, cfg.system.hi, sp.n_params, sp.seed_offset);
}

namespace {

bool dataset_present(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "manifest.json") && std::filesystem::exists(dir / "data.bin");
}

TrajectoryDataset load_split(const ExperimentConfig& cfg, Split s) {
  const auto dir = cfg.data_dir(s);
  if (!dataset_present(dir)) {
    throw CommandError(kExitData, "dataset " + dir.string() + " not found; run `phlie generate` with this config first");
  }
  try {
    return load_dataset(dir);
  } catch (const DatasetFormatError& e) {
    throw CommandError(kExitData, e.what());
  }
}

void write_train_log(const MultiSeedResult& r, const std::filesystem::path& path) {
  std::ofstream f(path);
  f << std::setprecision(17) << "seed_index,epoch,train_loss,val_loss,lr,selected\n";
  for (std::size_t s = 0; s < r.histories.size(); ++s)
    for (const auto& h : r.histories[s])
      f << s << ',' << h.epoch << ',' << h.train_loss << ',' << h.val_loss << ',' << h.lr << ','
        << (s == r.best_index ? 1 : 0) << '\n';
}

json metrics_json(const MetricsReport& rep, const std::string& variant, Split split) {
  json per = json::array();
  for (const auto& p : rep.params) {
    per.push_back({{"p", p.p},
                   {"variance", p.variance},
                   {"ttt", p.ttt},
                   {"spectrum_error", p.spectrum_error ? json(*p.spectrum_error) : json(nullptr)},
                   {"diverged_runs", p.diverged}});
  }
  return {{"model", rep.model},
          {"variant", variant},
          {"split", split_name(split)},
          {"theta_rel", rep.theta},
          {"dt", rep.dt},
          {"horizon_steps", rep.horizon},
          {"runs", rep.runs},
          {"diverged_runs", rep.diverged},
          {"ttt_legend", rep.ttt.legend},
          {"ttt_mean", rep.ttt.mean},
          {"ttt_std", rep.ttt.std},
          {"spectrum_error", rep.spectrum_error ? json(*rep.spectrum_error) : json(nullptr)},
          {"per_param", per}};
}

void write_curves(const MetricsReport& rep, const std::vector<ForecastRun>& runs, double t0,
                  const std::filesystem::path& dir) {
  std::ofstream f(dir / "nrmse_curves.csv");
  f << std::setprecision(17) << "t,mean";
  for (std::size_t k = 0; k < rep.params.size(); ++k) f << ",param" << k << "_p=" << rep.params[k].p;
  for (const auto& r : runs) f << ",run_p" << r.param_index << "_ic" << r.ic_index;
  f << '\n';
  for (std::size_t t = 0; t < rep.horizon; ++t) {
    f << t0 + static_cast<double>(t) * rep.dt << ',' << rep.mean_curve[t];
    for (const auto& p : rep.params) f << ',' << p.mean_curve[t];
    for (const auto& c : rep.run_curves) f << ',' << c[t];
    f << '\n';
  }

  std::ofstream s(dir / "spectra.csv");
  s << std::setprecision(17) << "param_index,ic_index,p,dim,bin,freq,true_db,pred_db\n";
  for (const auto& r : runs) {
    const auto N = static_cast<std::size_t>(r.x_true.rows());
    for (Eigen::Index d = 0; d < r.x_true.cols(); ++d) {
      std::vector<double> a(N), b(N);
      for (std::size_t t = 0; t < N; ++t) {
        a[t] = r.x_true(static_cast<Eigen::Index>(t), d);
        b[t] = r.x_pred(static_cast<Eigen::Index>(t), d);
      }
      const auto pa = power_spectrum_db(a);
      const bool ok = !r.diverged && r.x_pred.allFinite();
      const auto pb = ok ? power_spectrum_db(b) : std::vector<double>(pa.size(), 0.0);
      for (std::size_t k = 0; k < pa.size(); ++k) {
        s << r.param_index << ',' << r.ic_index << ',' << r.p_raw << ',' << d << ',' << k << ','
          << static_cast<double>(k) / (static_cast<double>(N) * r.dt) << ',' << pa[k] << ',';
        if (ok) s << pb[k];
        s << '\n';
      }
    }
  }
}

}  // namespace

void cmd_generate(const ExperimentConfig& cfg, bool force, std::ostream& log) {
  std::optional<Scaler> scaler;
  for (const auto& sp : cfg.splits) {
    const auto dir = cfg.data_dir(sp.split);
    if (!force && dataset_present(dir)) {
      log << "generate: " << dir.string() << " exists, skipping (use --force to regenerate)\n";
      if (sp.split == Split::train) scaler = load_split(cfg, Split::train).scaler;
      continue;
    }
    DatasetRequest req;
    req.split = sp.split;
    req.params = split_params(cfg, sp);
    req.n_ics = sp.n_ics;
    req.t_end = sp.t_end;
    req.seed = derive_seed(cfg.seed, 0xda7a);
    req.noise_level = cfg.train.noise;
    req.scaler = scaler;
    TrajectoryDataset ds;
    try {
      ds = build_dataset(cfg.system, req);
    } catch (const DivergenceError& e) {
      throw CommandError(kExitData, e.what());
    } catch (const ConfigError& e) {
      throw CommandError(kExitUsage, e.what());
    }
    if (sp.split == Split::train) scaler = ds.scaler;
    save_dataset(ds, dir);
    log << "generate: " << split_name(sp.split) << " -> " << dir.string() << " (" << ds.n_params() << " params x "
        << ds.n_ics << " ics x " << ds.n_steps << " steps)\n";
  }
}

MultiSeedResult cmd_train(const ExperimentConfig& cfg, const std::string& name, bool resume, std::ostream& log) {
  const ModelEntry& entry = cfg.model(name);
  const auto train_ds = load_split(cfg, Split::train);
  const auto val_ds = load_split(cfg, Split::val);
  const auto dir = cfg.model_dir(name);

  SeedHooks hooks;
  hooks.store = [&](const TrainResult& r) { save_checkpoint(r, entry.train, dir / "seeds" / std::to_string(r.seed_index)); };
  if (resume) {
    hooks.load = [&](std::size_t i) -> std::optional<TrainResult> {
      const auto sd = dir / "seeds" / std::to_string(i);
      if (!std::filesystem::exists(sd / "model.json")) return std::nullopt;
      TrainResult r = load_checkpoint(sd);
      // a checkpoint from another spec/config is retrained rather than trusted
      ModelSpec want = entry.spec;
      want.target.input_dim = r.model.spec.target.input_dim;
      want.target.output_dim = r.model.spec.target.output_dim;
      if (to_json(want) != to_json(r.model.spec) || r.seed != entry.train.base_seed + i) return std::nullopt;
      return r;
    };
  }
  log << "train: " << name << " (" << variant_name(entry.spec.variant) << ", " << entry.train.seeds << " seeds, "
      << entry.train.max_epochs << " max epochs)\n";
  MultiSeedResult r;
  try {
    r = train_multiseed(entry.spec, train_ds, val_ds, entry.train, hooks);
  } catch (const std::runtime_error& e) {
    throw CommandError(kExitTrain, e.what());
  }
  save_checkpoint(r.best, entry.train, dir);
  write_train_log(r, dir / "train_log.csv");
  json seeds = json::array();
  for (std::size_t i = 0; i < r.val_losses.size(); ++i)
    seeds.push_back({{"seed_index", i}, {"best_val", r.val_losses[i]}, {"failed", r.failed[i]}});
  std::ofstream(dir / "seeds.json") << json{{"selected", r.best_index}, {"seeds", seeds}}.dump(2) << '\n';
  for (std::size_t i = 0; i < r.val_losses.size(); ++i)
    log << "  seed " << i << ": best val " << r.val_losses[i] << (r.failed[i] ? " (failed)" : "")
        << (i == r.best_index ? "  <- selected" : "") << '\n';
  return r;
}

void cmd_evaluate(const ExperimentConfig& cfg, std::vector<std::string> models, Split split,
                  std::optional<double> theta_override, std::ostream& log) {
  const double theta = theta_override.value_or(cfg.theta);
  if (!(theta > 0.0)) throw CommandError(kExitUsage, "threshold must be positive");
  if (models.empty())
    for (const auto& m : cfg.models) models.push_back(m.spec.name);
  const auto ds = load_split(cfg, split);
  const auto edir = cfg.eval_dir(split);
  std::filesystem::create_directories(edir);

  std::ofstream cmp(edir / "comparison.csv");
  cmp << std::setprecision(17) << "model,variant,ttt_legend,ttt_mean,ttt_std,spectrum_error,diverged_runs\n";
  for (const auto& name : models) {
    cfg.model(name);
    const auto mdir = cfg.model_dir(name);
    TrainResult ck;
    try {
      ck = load_checkpoint(mdir);
    } catch (const std::exception& e) {
      throw CommandError(kExitEval, "cannot load checkpoint for '" + name + "': " + e.what() +
                                        " (run `phlie train --model " + name + "` first)");
    }
    const Model& model = ck.model;
    if (model.state_dim != ds.dim() || model.lo != ds.system.lo || model.hi != ds.system.hi) {
      throw CommandError(kExitEval, "checkpoint '" + name + "' does not match dataset system " + ds.system.name);
    }
    const auto variant = variant_name(model.spec.variant);
    std::vector<ForecastRun> runs;
    try {
      runs = batch_forecast(model, ds, variant);
    } catch (const std::exception& e) {
      throw CommandError(kExitEval, std::string("rollout failed: ") + e.what());
    }
    const MetricsReport rep = compute_metrics(name, runs, theta);
    const auto out = edir / name;
    std::filesystem::create_directories(out);
    std::ofstream(out / "metrics.json") << metrics_json(rep, variant, split).dump(2) << '\n';
    write_curves(rep, runs, ds.t0, out);
    export_runs(runs, ds.t0, out / "runs");
    cmp << name << ',' << variant << ',' << rep.ttt.legend << ',' << rep.ttt.mean << ',' << rep.ttt.std << ',';
    if (rep.spectrum_error) cmp << *rep.spectrum_error;
    cmp << ',' << rep.diverged << '\n';
    log << "evaluate: " << name << " on " << split_name(split) << ": TtT legend " << rep.ttt.legend << ", per-param "
        << rep.ttt.mean << " +- " << rep.ttt.std << ", spectrum error "
        << (rep.spectrum_error ? std::to_string(*rep.spectrum_error) : std::string("n/a")) << ", diverged "
        << rep.diverged << "/" << rep.runs << '\n';
  }

  // Split-level summary over every model evaluated here so far.
  json all = json::object();
  for (const auto& e : std::filesystem::directory_iterator(edir)) {
    if (!e.is_directory() || !std::filesystem::exists(e.path() / "metrics.json")) continue;
    std::ifstream f(e.path() / "metrics.json");
    json m;
    f >> m;
    all[e.path().filename().string()] = m;
  }
  std::ofstream(edir / "metrics.json") << json{{"split", split_name(split)}, {"theta_rel", theta}, {"models", all}}.dump(2)
                                       << '\n';
}

void cmd_analyze(const ExperimentConfig& cfg, const std::string& name, std::optional<std::size_t> probes,
                 std::ostream& log) {
  cfg.model(name);
  TrainResult ck;
  try {
    ck = load_checkpoint(cfg.model_dir(name));
  } catch (const std::exception& e) {
    throw CommandError(kExitEval, "cannot load checkpoint for '" + name + "': " + e.what());
  }
  if (ck.model.spec.variant != Variant::phlienet) {
    throw CommandError(kExitEval, "analyze needs a phlienet model; '" + name + "' is " + variant_name(ck.model.spec.variant));
  }
  const std::size_t n = probes.value_or(cfg.probes);
  const auto grid = probe_grid(ck.model.lo, ck.model.hi, n);
  const EmbeddingReport rep = embedding_report(ck.model, grid);
  const auto dir = cfg.analysis_dir(name);
  write_embedding_report(rep, dir);
  std::vector<double> pc1;
  for (Eigen::Index i = 0; i < rep.pca.projections.rows(); ++i) pc1.push_back(rep.pca.projections(i, 0));
  const json summary{{"probes", n},
                     {"explained_variance_ratio", {rep.pca.explained(0), rep.pca.explained(1)}},
                     {"pc1_monotone_pair_fraction", monotone_pair_fraction(pc1)},
                     {"distance_monotone_row_fraction", monotone_row_fraction(rep.distances)}};
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  log << "analyze: " << name << " -> " << dir.string() << " (PC1 monotone fraction "
      << summary["pc1_monotone_pair_fraction"].get<double>() << ", distance rows monotone "
      << summary["distance_monotone_row_fraction"].get<double>() << ")\n";
}

}  // namespace phlie
