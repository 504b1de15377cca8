#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "lesion/augment.hpp"
#include "lesion/dataio.hpp"
#include "lesion/synthgen.hpp"
#include "lesion/trainer.hpp"

namespace lesion {

struct RunPaths {
  std::filesystem::path data_root;   // dataset directory (images/, masks/)
  std::filesystem::path labels_csv;  // classification labels; default data_root/labels.csv
  std::filesystem::path manifest;    // alternative to data_root
  std::filesystem::path out_dir = "runs/latest";
  double split_fraction = 0.0;       // > 0 holds out the rest as validation
  std::uint64_t split_seed = 0;
};

void to_json(nlohmann::json& j, const RunPaths& p);
void from_json(const nlohmann::json& j, RunPaths& p);

/// One JSON document with sections dataio, augment, model, train, paths and
/// synth. The model section stays raw JSON until the command knows its task.
struct RunConfig {
  NormalizationPolicy dataio;
  std::optional<AugmentConfig> augment;  // absent or null disables augmentation
  nlohmann::json model = nlohmann::json::object();
  TrainConfig train;
  RunPaths paths;
  std::optional<nlohmann::json> synth;

  /// Canonical JSON (keys sorted); the digest covers exactly this text.
  nlohmann::json to_json() const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Lower-case hex SHA-256 of a string.
std::string sha256_hex(const std::string& data);
/// Digest of the canonical config text.
std::string config_digest(const RunConfig& config);

/// LESION_SEED from the environment, if set; malformed values throw.
std::optional<std::uint64_t> env_seed();

}  // namespace lesion
