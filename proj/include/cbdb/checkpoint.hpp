#ifndef CBDB_CHECKPOINT_HPP_
#define CBDB_CHECKPOINT_HPP_

#include <filesystem>
#include <iosfwd>

#include "cbdb/model.hpp"
#include "cbdb/run_config.hpp"

namespace cbdb {

// Text checkpoint, version 1:
//
//   cbdb-checkpoint 1
//   config_hash <16 hex>
//   config <single-line JSON run config>
//   param <name> <rank> <dim>...
//   <values, shortest round-trip decimal, space separated>
//   ...
//   end
//
// Values are decimal text, so the file does not depend on byte order. Adam
// state is not stored; a loaded model is for inference or fresh training.
struct Checkpoint {
  RunConfig config;
  ModelParams params;
};

void write_checkpoint(std::ostream& out, const RunConfig& config, const ModelParams& params);
void save_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                     const ModelParams& params);

Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cbdb

#endif  // CBDB_CHECKPOINT_HPP_
