#ifndef CBDB_EXPERIMENT_HPP_
#define CBDB_EXPERIMENT_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbdb/model.hpp"
#include "cbdb/retrieval.hpp"
#include "cbdb/run_config.hpp"
#include "cbdb/synth.hpp"

namespace cbdb {

/// Metrics over all queries plus the clean and occluded subsets.
struct EvalReport {
  EvalMetrics all;
  EvalMetrics clean;
  EvalMetrics occluded;
  std::optional<EvalMetrics> reranked;  // all queries, k-reciprocal distances
};

/// Scores query descriptors against a gallery. `occluded` flags each query.
EvalReport evaluate_split(const DescriptorBatch& query, const std::vector<bool>& occluded,
                          const DescriptorBatch& gallery, const EvalConfig& eval);

EvalReport evaluate_model(const ModelParams& params, const CbdbConfig& model,
                          const SynthDataset& data, const EvalConfig& eval);

struct RunResult {
  TrainedModel model;
  EvalReport report;
  std::string config_hash;
};

/// generate -> train -> infer -> evaluate, all from one resolved config.
RunResult run_experiment(const RunConfig& config);

nlohmann::json to_json(const EvalReport& report, const std::string& config_hash);
std::string train_log_csv(const std::vector<EpochLog>& log, const std::string& config_hash);

struct AblationVariant {
  std::string name;
  RunConfig config;
};

// Strategy comparison: one variant per entry of config.ablation.dropout_variants.
std::vector<AblationVariant> dropout_grid(const RunConfig& base);
// Branch truncation: keep branches 1..k for k = 1..m.
std::vector<AblationVariant> branch_grid(const RunConfig& base);
// baseline, elastic_only, cbdb_only, no_resblock, full, full_global.
std::vector<AblationVariant> component_grid(const RunConfig& base);

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  EvalReport report;
};

/// Runs every variant for seeds base.seed .. base.seed + seeds - 1. Variants
/// share the seed list, so every variant sees the same datasets.
std::vector<AblationRun> run_ablation(const std::vector<AblationVariant>& variants,
                                      std::uint64_t base_seed, std::size_t seeds);

/// One row per variant with mean and sample standard deviation over seeds.
std::string ablation_summary_csv(const std::string& grid, const std::vector<AblationRun>& runs,
                                 const std::string& config_hash);
/// One row per (variant, seed).
std::string ablation_runs_csv(const std::string& grid, const std::vector<AblationRun>& runs,
                              const std::string& config_hash);

}  // namespace cbdb

#endif  // CBDB_EXPERIMENT_HPP_
