#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "geoclr/trainer.hpp"

namespace geoclr {

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& doc);

/// Binary archive: 8-byte magic "GEOCLRCK", u32 format version, u64 length
/// + JSON metadata {variant, epoch, step, config, rng_state,
/// geo_cluster_model_path, geo_cluster_model, queue}, then u64 array count
/// and per array: u32 name length, name, u64 rows, u64 cols, float64 data
/// (row-major, little-endian).
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace geoclr
