// cbdb: train, evaluate and inspect CBDB-Net runs on synthetic data.
//
// Exit codes: 0 success, 1 configuration error, 2 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbdb/checkpoint.hpp"
#include "cbdb/descriptor_io.hpp"
#include "cbdb/dropmask.hpp"
#include "cbdb/errors.hpp"
#include "cbdb/experiment.hpp"
#include "cbdb/gradcheck.hpp"
#include "cbdb/run_config.hpp"
#include "cbdb/synth.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kNumericError = 2;

struct CommonOptions {
  std::string config_path;
  std::optional<std::int64_t> seed;
  std::string out_dir;
};

cbdb::RunConfig load_config(const CommonOptions& opts) {
  cbdb::RunConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = cbdb::load_run_config(opts.config_path);
  } else {
    cfg.resolve();
    cfg.validate();
  }
  if (opts.seed) {
    if (*opts.seed < 0) throw cbdb::ConfigError("--seed must be non-negative");
    cfg = cfg.with_seed(static_cast<std::uint64_t>(*opts.seed));
  }
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  return cfg;
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir.empty() ? "." : dir);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cbdb::ConfigError("cannot write " + path.string());
  out << text;
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

int cmd_train(const CommonOptions& opts) {
  const cbdb::RunConfig cfg = load_config(opts);
  const fs::path out = ensure_dir(cfg.output_dir);
  const cbdb::RunResult r = cbdb::run_experiment(cfg);
  cbdb::save_checkpoint(out / "checkpoint.txt", cfg, r.model.params);
  write_file(out / "train_log.csv", cbdb::train_log_csv(r.model.log, r.config_hash));
  const std::string metrics = dump_json(cbdb::to_json(r.report, r.config_hash));
  write_file(out / "metrics.json", metrics);
  std::cout << metrics;
  return kOk;
}

struct EvalOptions {
  std::string checkpoint;
  std::string query_csv;
  std::string gallery_csv;
  std::string dump_descriptors;
  bool rerank = false;
};

int cmd_eval(const CommonOptions& opts, const EvalOptions& eo) {
  const bool from_csv = !eo.query_csv.empty() || !eo.gallery_csv.empty();
  if (from_csv == !eo.checkpoint.empty()) {
    throw cbdb::ConfigError("eval needs either --checkpoint or both --query-csv/--gallery-csv");
  }
  cbdb::EvalReport report;
  std::string hash;
  std::string out_dir = opts.out_dir;
  if (from_csv) {
    if (eo.query_csv.empty() || eo.gallery_csv.empty()) {
      throw cbdb::ConfigError("eval needs both --query-csv and --gallery-csv");
    }
    cbdb::RunConfig cfg = load_config(opts);
    if (eo.rerank) cfg.eval.rerank = true;
    const auto q = cbdb::read_descriptor_csv(fs::path(eo.query_csv));
    const auto g = cbdb::read_descriptor_csv(fs::path(eo.gallery_csv));
    report = cbdb::evaluate_split(q, std::vector<bool>(q.size(), false), g, cfg.eval);
    hash = cbdb::config_hash(cfg);
    if (out_dir.empty()) out_dir = cfg.output_dir;
  } else {
    cbdb::Checkpoint ck = cbdb::load_checkpoint(eo.checkpoint);
    cbdb::RunConfig cfg = ck.config;
    if (!opts.config_path.empty()) cfg.eval = cbdb::load_run_config(opts.config_path).eval;
    if (eo.rerank) cfg.eval.rerank = true;
    const cbdb::SynthDataset data = cbdb::generate(cfg.data);
    report = cbdb::evaluate_model(ck.params, cfg.model, data, cfg.eval);
    hash = cbdb::config_hash(cfg);
    if (out_dir.empty()) out_dir = cfg.output_dir;
    if (!eo.dump_descriptors.empty()) {
      const fs::path d = ensure_dir(eo.dump_descriptors);
      cbdb::write_descriptor_csv(
          d / "query.csv",
          {cbdb::infer(cbdb::stack_images(data.query), ck.params, cfg.model),
           cbdb::sample_ids(data.query), cbdb::sample_cameras(data.query)});
      cbdb::write_descriptor_csv(
          d / "gallery.csv",
          {cbdb::infer(cbdb::stack_images(data.gallery), ck.params, cfg.model),
           cbdb::sample_ids(data.gallery), cbdb::sample_cameras(data.gallery)});
    }
  }
  const std::string metrics = dump_json(cbdb::to_json(report, hash));
  write_file(ensure_dir(out_dir) / "metrics.json", metrics);
  std::cout << metrics;
  return kOk;
}

int cmd_gradcheck(const CommonOptions& opts, std::size_t trials) {
  const std::uint64_t seed = opts.seed ? static_cast<std::uint64_t>(*opts.seed) : 7;
  const auto results = cbdb::run_all_gradchecks(trials, seed);
  const nlohmann::json report = cbdb::to_json(results);
  const std::string text = dump_json(report);
  if (!opts.out_dir.empty()) write_file(ensure_dir(opts.out_dir) / "gradcheck.json", text);
  std::cout << text;
  return report["passed"].get<bool>() ? kOk : kNumericError;
}

int cmd_masks(const CommonOptions& opts, std::size_t height, std::size_t width,
              const std::string& scheme) {
  const cbdb::DropStrategyKind kind = cbdb::parse_strategy(scheme);
  if (!cbdb::is_deterministic(kind) || std::holds_alternative<cbdb::NoDrop>(kind)) {
    throw cbdb::ConfigError("masks: scheme must be cbdb:<m> or cbdb-overlap:<patch_h>:<overlap>");
  }
  cbdb::validate_strategy(kind, height, width);
  const cbdb::RowPartition part =
      std::holds_alternative<cbdb::Cbdb>(kind)
          ? cbdb::uniform_row_partition(height, std::get<cbdb::Cbdb>(kind).m)
          : cbdb::overlap_row_partition(height, std::get<cbdb::CbdbOverlap>(kind).patch_h,
                                        std::get<cbdb::CbdbOverlap>(kind).overlap);

  const std::string header = "# H=" + std::to_string(height) + " W=" + std::to_string(width) +
                             " scheme=" + cbdb::strategy_name(kind) +
                             " branches=" + std::to_string(part.count()) + "\n";
  std::string text = header;
  std::string csv = "branch,row,col,keep\n";
  for (std::size_t b = 1; b <= part.count(); ++b) {
    const cbdb::DropMask mask = cbdb::drop_patch_mask(part, b, width);
    text += "branch " + std::to_string(b) + " rows [" + std::to_string(part.ranges[b - 1].first) +
            "," + std::to_string(part.ranges[b - 1].second) + ")\n" + mask.to_text() + "\n";
    for (std::size_t h = 0; h < height; ++h) {
      for (std::size_t w = 0; w < width; ++w) {
        csv += std::to_string(b) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
               std::to_string(mask.at(h, w)) + "\n";
      }
    }
  }
  if (!opts.out_dir.empty()) {
    const fs::path out = ensure_dir(opts.out_dir);
    write_file(out / "masks.txt", text);
    write_file(out / "masks.csv", csv);
  }
  std::cout << text;
  return kOk;
}

int cmd_ablate(const CommonOptions& opts, const std::string& grid) {
  const cbdb::RunConfig cfg = load_config(opts);
  std::vector<cbdb::AblationVariant> variants;
  if (grid == "dropout") {
    variants = cbdb::dropout_grid(cfg);
  } else if (grid == "branches") {
    variants = cbdb::branch_grid(cfg);
  } else {
    variants = cbdb::component_grid(cfg);
  }
  const auto runs = cbdb::run_ablation(variants, cfg.seed, cfg.ablation.seeds);
  const std::string hash = cbdb::config_hash(cfg);
  const fs::path out = ensure_dir(cfg.output_dir);
  const std::string summary = cbdb::ablation_summary_csv(grid, runs, hash);
  write_file(out / "ablation.csv", summary);
  write_file(out / "ablation_runs.csv", cbdb::ablation_runs_csv(grid, runs, hash));
  std::cout << summary;
  return kOk;
}

int cmd_synth(const CommonOptions& opts) {
  const cbdb::RunConfig cfg = load_config(opts);
  const fs::path out = ensure_dir(cfg.output_dir);
  cbdb::dump_dataset(cbdb::generate(cfg.data), out);
  std::cout << "wrote dataset to " << out.string() << "\n";
  return kOk;
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool with_config = true) {
  if (with_config) cmd->add_option("--config", opts.config_path, "JSON run config");
  cmd->add_option("--seed", opts.seed, "Override the config seed");
  cmd->add_option("--out", opts.out_dir, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CBDB-Net desk-scale toolkit"};
  app.require_subcommand(1);

  CommonOptions opts;
  auto* train = app.add_subcommand("train", "Train on synthetic data and evaluate");
  add_common(train, opts);

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint or descriptor CSV files");
  add_common(eval, opts);
  eval->add_option("--checkpoint", eo.checkpoint, "Checkpoint written by train");
  eval->add_option("--query-csv", eo.query_csv, "Query descriptors: id,camera,v0,...");
  eval->add_option("--gallery-csv", eo.gallery_csv, "Gallery descriptors: id,camera,v0,...");
  eval->add_option("--dump-descriptors", eo.dump_descriptors,
                   "With --checkpoint: also write query.csv/gallery.csv here");
  eval->add_flag("--rerank", eo.rerank, "Also report k-reciprocal re-ranked metrics");

  std::size_t trials = 10;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  add_common(gradcheck, opts, false);
  gradcheck->add_option("--trials", trials, "Random trials per suite")->check(CLI::PositiveNumber);

  std::size_t height = 24, width = 8;
  std::string scheme = "cbdb:6";
  auto* masks = app.add_subcommand("masks", "Print CBDB branch masks as 0/1 grids");
  add_common(masks, opts, false);
  masks->add_option("--height", height, "Feature map height")->check(CLI::PositiveNumber);
  masks->add_option("--width", width, "Feature map width")->check(CLI::PositiveNumber);
  masks->add_option("--scheme", scheme, "cbdb:<m> or cbdb-overlap:<patch_h>:<overlap>");

  std::string grid;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid over several seeds");
  add_common(ablate, opts);
  ablate->add_option("grid", grid, "dropout | branches | components")
      ->required()
      ->check(CLI::IsMember({"dropout", "branches", "components"}));

  auto* synth = app.add_subcommand("synth", "Dump the synthetic dataset to disk");
  add_common(synth, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (train->parsed()) return cmd_train(opts);
    if (eval->parsed()) return cmd_eval(opts, eo);
    if (gradcheck->parsed()) return cmd_gradcheck(opts, trials);
    if (masks->parsed()) return cmd_masks(opts, height, width, scheme);
    if (ablate->parsed()) return cmd_ablate(opts, grid);
    if (synth->parsed()) return cmd_synth(opts);
  } catch (const cbdb::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const cbdb::DegenerateBatchError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}
