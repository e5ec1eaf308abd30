#pragma once

// JSON schemas for corpus specs, training configs and experiment manifests.
// Every document carries "version": 1; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcdro/data.hpp"
#include "ctcdro/trainer.hpp"

namespace ctcdro {

inline constexpr int kSchemaVersion = 1;

nlohmann::ordered_json to_json(const GroupSpec& s);
nlohmann::ordered_json to_json(const GenOptions& o);
nlohmann::ordered_json to_json(const TrainConfig& c);

GroupSpec group_spec_from_json(const nlohmann::json& j);
GenOptions gen_options_from_json(const nlohmann::json& j);
/// Missing keys take their defaults. Throws ConfigInvalid.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct CorpusSpec {
  std::uint64_t seed = 0;
  std::size_t feature_dim = 16;
  GenOptions options;
  std::vector<double> split{0.6, 0.2, 0.2};
  std::vector<GroupSpec> groups;
};

nlohmann::ordered_json to_json(const CorpusSpec& s);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);

struct Variant {
  std::string name;
  TrainConfig config;
};

struct ExperimentManifest {
  std::filesystem::path corpus;
  std::filesystem::path output_root;
  std::vector<std::uint64_t> seeds{0};
  std::vector<Variant> variants;
};

ExperimentManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Reads and parses a JSON file; throws ConfigInvalid on I/O or syntax errors.
nlohmann::json read_json_file(const std::filesystem::path& file);

}  // namespace ctcdro
