#pragma once

// Configuration of one CLI run: a named profile, overlaid by a JSON file,
// overlaid by flags. The resolved result is what gets echoed next to outputs.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "lifwav/model.hpp"
#include "lifwav/training.hpp"

namespace lifwav {

struct RunConfig {
  std::string profile = "desk";
  ModelConfig model = ModelConfig::desk();
  TrainConfig train = TrainConfig::desk();

  // "desk" or "full"; ConfigError otherwise.
  static RunConfig from_profile(const std::string& name);

  // Applies {"profile", "model", "train"} from `j` on top of this config. A
  // "profile" key resets to that profile first.
  void overlay(const nlohmann::json& j);

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);

// Profile defaults overlaid by the file at `path` (if not empty).
RunConfig load_run_config(const std::filesystem::path& path, const std::string& profile);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace lifwav
