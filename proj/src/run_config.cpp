#include "lifwav/run_config.hpp"

#include <fstream>

#include "lifwav/errors.hpp"

namespace lifwav {

RunConfig RunConfig::from_profile(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "desk") {
    c.model = ModelConfig::desk();
    c.train = TrainConfig::desk();
  } else if (name == "full") {
    c.model = ModelConfig::full();
    c.train = TrainConfig::full();
  } else {
    throw ConfigError("profile: expected desk or full, got '" + name + "'");
  }
  return c;
}

void RunConfig::overlay(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "profile" && key != "model" && key != "train") throw ConfigError(key + ": unknown config section");
  }
  if (j.contains("profile")) {
    if (!j["profile"].is_string()) throw ConfigError("profile: wrong type");
    *this = from_profile(j["profile"].get<std::string>());
  }
  if (j.contains("model")) from_json(j["model"], model);
  if (j.contains("train")) from_json(j["train"], train);
}

void RunConfig::validate() const {
  model.validate();
  train.validate(model.input_length);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"profile", c.profile}, {"model", c.model}, {"train", c.train}};
}

RunConfig load_run_config(const std::filesystem::path& path, const std::string& profile) {
  auto c = RunConfig::from_profile(profile);
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  c.overlay(j);
  return c;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace lifwav
