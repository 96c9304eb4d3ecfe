#include "phlie/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace phlie;

namespace {

struct Common {
  std::string config;
  std::string system;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config (JSON)");
  sub->add_option("--system", c.system, "system name; without --config the built-in desk profile is used");
  sub->add_option("--out", c.out, "output root (overrides the config)");
  sub->add_option("--seed", c.seed, "master seed (overrides the config)");
}

ExperimentConfig resolve(const Common& c) {
  nlohmann::json j;
  if (!c.config.empty()) {
    j = load_config(c.config).source;
    if (!c.system.empty() && c.system != j.at("system").get<std::string>())
      throw CommandError(kExitUsage, "--system " + c.system + " disagrees with the config system " +
                                         j.at("system").get<std::string>());
  } else if (!c.system.empty()) {
    try {
      j = builtin_profile(c.system, "desk");
    } catch (const ConfigError& e) {
      throw CommandError(kExitUsage, e.what());
    }
  } else {
    throw CommandError(kExitUsage, "give --config or --system");
  }
  if (!c.out.empty()) j["out"] = c.out;
  if (c.seed) j["seed"] = *c.seed;
  return parse_config(j);
}

Split split_arg(const std::string& s) {
  try {
    return parse_split(s);
  } catch (const std::exception& e) {
    throw CommandError(kExitUsage, e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phlie: parameter-conditioned neural forecasters for dynamical systems"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, an_c;
  bool force = false, resume = false;
  std::string model, split = "test-interp", profile = "desk", cfg_system;
  std::vector<std::string> models;
  std::optional<double> threshold;
  std::optional<std::size_t> probes;

  auto* gen = app.add_subcommand("generate", "integrate and store the train/val/test datasets");
  add_common(gen, gen_c);
  gen->add_flag("--force", force, "regenerate splits that already exist");

  auto* tr = app.add_subcommand("train", "train one model (all seeds) and keep the best validation seed");
  add_common(tr, train_c);
  tr->add_option("--model", model, "model name from the config")->required();
  tr->add_flag("--resume", resume, "reuse finished seed checkpoints");

  auto* ev = app.add_subcommand("evaluate", "autoregressive rollouts, NRMSE/TtT and spectrum error");
  add_common(ev, eval_c);
  ev->add_option("--model", models, "model name (repeatable; default all)");
  ev->add_option("--split", split, "test-interp, test-extrap, val or train");
  ev->add_option("--threshold", threshold, "relative NRMSE threshold for time-to-threshold");

  auto* an = app.add_subcommand("analyze", "embedding PCA, RBF heatmap and weight distance tables");
  add_common(an, an_c);
  an->add_option("--model", model, "phlienet model name")->required();
  an->add_option("--probes", probes, "number of probe parameters");

  auto* cf = app.add_subcommand("config", "print a built-in experiment profile as JSON");
  cf->add_option("--system", cfg_system, "system name")->required();
  cf->add_option("--profile", profile, "desk or paper");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      cmd_generate(resolve(gen_c), force, std::cout);
    } else if (*tr) {
      cmd_train(resolve(train_c), model, resume, std::cout);
    } else if (*ev) {
      cmd_evaluate(resolve(eval_c), models, split_arg(split), threshold, std::cout);
    } else if (*an) {
      cmd_analyze(resolve(an_c), model, probes, std::cout);
    } else if (*cf) {
      try {
        std::cout << builtin_profile(cfg_system, profile).dump(2) << '\n';
      } catch (const ConfigError& e) {
        throw CommandError(kExitUsage, e.what());
      }
    }
  } catch (const CommandError& e) {
    std::cerr << "phlie: " << e.what() << '\n';
    return e.code();
  } catch (const DatasetFormatError& e) {
    std::cerr << "phlie: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "phlie: " << e.what() << '\n';
    return kExitEval;
  }
  return kExitOk;
}
