#pragma once

#include "phlie/analysis.hpp"
#include "phlie/checkpoint.hpp"
#include "phlie/metrics.hpp"
#include "phlie/model.hpp"
#include "phlie/sysgen.hpp"
#include "phlie/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace phlie {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitTrain = 4, kExitEval = 5 };

class CommandError : public std::runtime_error {
 public:
  CommandError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

struct SplitProtocol {
  Split split = Split::train;
  std::size_t n_params = 0;          // Sobol count when `params` is empty
  std::size_t seed_offset = 0;
  std::vector<double> params;        // explicit list
  bool params_from_train = false;    // reuse the train parameters (validation)
  std::size_t n_ics = 1;
  double t_end = 0.0;
};

struct ModelEntry {
  ModelSpec spec;
  TrainConfig train;
};

struct ExperimentConfig {
  SystemSpec system;
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  double theta = 0.2;
  std::size_t probes = 200;
  std::vector<SplitProtocol> splits;  // train first
  TrainConfig train;
  std::vector<ModelEntry> models;
  nlohmann::json source;  // the parsed document, for provenance

  const SplitProtocol& split(Split s) const;
  const ModelEntry& model(const std::string& name) const;

  std::filesystem::path data_dir(Split s) const { return out / "data" / split_name(s); }
  std::filesystem::path model_dir(const std::string& name) const { return out / "models" / name; }
  std::filesystem::path eval_dir(Split s) const { return out / "eval" / split_name(s); }
  std::filesystem::path analysis_dir(const std::string& name) const { return out / "analysis" / name; }
};

/// Built-in "desk" (reduced) or "paper" profile for one of the six systems.
nlohmann::json builtin_profile(const std::string& system, const std::string& profile);

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Parameter values of a split (Sobol draw, explicit list or the train list).
std::vector<double> split_params(const ExperimentConfig& cfg, const SplitProtocol& sp);

void cmd_generate(const ExperimentConfig& cfg, bool force, std::ostream& log);

MultiSeedResult cmd_train(const ExperimentConfig& cfg, const std::string& model, bool resume, std::ostream& log);

/// Empty `models` evaluates every configured model.
void cmd_evaluate(const ExperimentConfig& cfg, std::vector<std::string> models, Split split,
                  std::optional<double> theta, std::ostream& log);

/// Writes the three embedding tables; `probes` overrides the configured count.
void cmd_analyze(const ExperimentConfig& cfg, const std::string& model, std::optional<std::size_t> probes,
                 std::ostream& log);

}  // namespace phlie
