#pragma once

#include "phlie/model.hpp"
#include "phlie/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace phlie {

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

nlohmann::json to_json(const TargetSpec& t);
nlohmann::json to_json(const ModelSpec& m);
ModelSpec model_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Scaler& s);
Scaler scaler_from_json(const nlohmann::json& j);

/// 64-bit FNV-1a over the compact JSON dump.
std::string config_hash(const nlohmann::json& j);

/// Writes model.json and weights.bin ("PHLW1" magic, then every tensor as
/// little-endian f64 at the offsets listed in model.json).
void save_checkpoint(const TrainResult& r, const TrainConfig& cfg, const std::filesystem::path& dir);

/// Loads a checkpoint back into a TrainResult (history and selection metadata included).
TrainResult load_checkpoint(const std::filesystem::path& dir);

}  // namespace phlie
