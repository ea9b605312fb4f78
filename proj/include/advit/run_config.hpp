#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advit/attacks.hpp"
#include "advit/data.hpp"
#include "advit/trainer.hpp"
#include "advit/vit.hpp"

// On-disk JSON for runs. Every reader rejects unknown keys and fills in
// defaults, so writing a parsed value back out gives the fully resolved form.
namespace advit::config {

/// Parse or schema failure; `what()` names the JSON path or line.
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A dataset is either a file in the AVD1 format or generated on the fly.
struct DataSource {
  std::optional<std::string> path;
  std::optional<data::SyntheticSpec> synthetic;
};

struct EvalConfig {
  std::vector<attacks::NamedAttack> attacks;
  std::size_t batch_size = 64;
};

struct RunConfig {
  vit::ViTConfig model;
  train::TrainConfig train;
  EvalConfig eval;
  std::optional<DataSource> train_data;
  std::optional<DataSource> test_data;
  std::string output_dir = "runs/default";
};

nlohmann::json to_json(const vit::ViTConfig& c);
vit::ViTConfig vit_config_from_json(const nlohmann::json& j, const std::string& where = "model");

nlohmann::json to_json(const attacks::AttackConfig& c);
nlohmann::json to_json(const data::SyntheticSpec& s);
data::SyntheticSpec synthetic_from_json(const nlohmann::json& j, const std::string& where = "synthetic");

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Parses text; syntax errors report "line L, column C".
nlohmann::json parse_json(const std::string& text, const std::string& source);
nlohmann::json read_json_file(const std::filesystem::path& path);

RunConfig load_run_config(const std::filesystem::path& path);

/// ADVIT_SEED, if set, as a seed; throws ConfigError if it is not an
/// unsigned integer.
std::optional<std::uint64_t> seed_from_env();

data::Dataset materialize(const DataSource& source, data::Split split);

}  // namespace advit::config
