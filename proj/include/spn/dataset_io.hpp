#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spn/sample.hpp"
#include "spn/scenario.hpp"

#include "json.hpp"

namespace spn {

inline constexpr const char* kDatasetFormat = "spn-dataset-v1";

struct SplitSpec {
  std::string name;
  std::int64_t count = 0;
};

struct DatasetManifest {
  std::string format = kDatasetFormat;
  std::uint64_t base_seed = 0;
  std::vector<SplitSpec> splits;  // order fixes the global id assignment
  GeneratorConfig generator;

  std::int64_t split_count(const std::string& name) const;
};

nlohmann::json generator_config_to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

// Generates every split sequentially (global ids run across splits in order)
// and writes manifest.json plus one <split>.jsonl per split under dir.
void generate_dataset(const GeneratorConfig& cfg, std::uint64_t base_seed,
                      const std::vector<SplitSpec>& splits, const std::string& dir);

DatasetManifest read_manifest(const std::string& dir);
std::vector<Sample> read_split(const std::string& dir, const std::string& split);

}  // namespace spn
