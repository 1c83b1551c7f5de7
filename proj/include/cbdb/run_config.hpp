#ifndef CBDB_RUN_CONFIG_HPP_
#define CBDB_RUN_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbdb/model.hpp"
#include "cbdb/retrieval.hpp"
#include "cbdb/synth.hpp"

namespace cbdb {

struct EvalConfig {
  std::vector<int> ks = {1, 5, 10};
  bool rerank = false;
  RerankParams rerank_params;
};

struct AblationConfig {
  std::size_t seeds = 5;
  // Table-8 style strategy list; strings as accepted by parse_strategy.
  std::vector<std::string> dropout_variants = {"element:0.1", "spatial:0.1",
                                               "batch:0.1",   "dropblock:2:2:0.5",
                                               "batchdropblock:0.25", "cbdb"};
};

/// Complete description of one reproducible run. The top-level seed drives
/// everything: the dataset uses `seed`, the model `seed + 1`.
struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig data;
  CbdbConfig model;
  EvalConfig eval;
  AblationConfig ablation;
  std::string output_dir = "out";

  // Copies shared fields (image dims, class count, seeds) from data into model.
  void resolve();
  void validate() const;
  RunConfig with_seed(std::uint64_t new_seed) const;
};

/// Strict parse: unknown keys anywhere raise ConfigError naming the key path.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const EvalMetrics& metrics);

/// FNV-1a over the canonical JSON dump of the resolved config (output_dir
/// excluded), as 16 hex chars.
std::string config_hash(const RunConfig& config);

}  // namespace cbdb

#endif  // CBDB_RUN_CONFIG_HPP_
