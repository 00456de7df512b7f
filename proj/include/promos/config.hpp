#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "promos/graph.hpp"
#include "promos/pipeline.hpp"
#include "promos/teacher.hpp"

namespace promos {

/// Everything a run needs. Sub-config seeds are not stored separately: every
/// stream derives from the root `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t unify_dim = 64;
  SSLConfig ssl;
  ModelConfig model;
  TrainConfig train;
  InjectionSpec injection;
  std::vector<std::string> train_graphs;
  std::vector<std::string> test_graphs;
  std::string output_dir;

  /// Copies the root seed into the sub-configs.
  void resolve();
  std::vector<std::string> problems() const;
  void validate() const;
};

nlohmann::json to_json(const SSLConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);  // without seed
nlohmann::json to_json(const InjectionSpec& c);  // without seed
nlohmann::json to_json(const RunConfig& c);

SSLConfig ssl_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
InjectionSpec injection_from_json(const nlohmann::json& j);

/// Parses and resolves a run config. Unknown keys and type errors are all
/// collected and reported together as one ValidationError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Pretty-printed resolved config, as written next to every run's outputs.
std::string dump_config(const RunConfig& c);
/// FNV-1a hash of the compact resolved config.
std::string config_hash(const RunConfig& c);

}  // namespace promos
