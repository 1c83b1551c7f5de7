#include "cbdb/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "cbdb/errors.hpp"

namespace cbdb {

namespace {

DescriptorBatch subset(const DescriptorBatch& b, const std::vector<bool>& keep, bool want) {
  DescriptorBatch out;
  const std::size_t d = b.vectors.dim(1);
  std::vector<double> data;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (keep[i] != want) continue;
    const auto r = b.vectors.row(i);
    data.insert(data.end(), r.begin(), r.end());
    out.ids.push_back(b.ids[i]);
    out.cameras.push_back(b.cameras[i]);
  }
  out.vectors = Tensor({out.ids.size(), d}, std::move(data));
  return out;
}

EvalMetrics evaluate_or_empty(const DescriptorBatch& q, const DescriptorBatch& g,
                              const std::vector<int>& ks) {
  if (q.size() == 0) {
    EvalMetrics m;
    for (int k : ks) m.rank_k[k] = 0.0;
    return m;
  }
  return evaluate(q, g, ks);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

double rank1(const EvalMetrics& m) {
  auto it = m.rank_k.find(1);
  return it == m.rank_k.end() ? 0.0 : it->second;
}

}  // namespace

EvalReport evaluate_split(const DescriptorBatch& query, const std::vector<bool>& occluded,
                          const DescriptorBatch& gallery, const EvalConfig& eval) {
  if (occluded.size() != query.size()) {
    throw DimensionError("evaluate_split: occlusion flags do not match queries");
  }
  EvalReport r;
  r.all = evaluate(query, gallery, eval.ks);
  r.clean = evaluate_or_empty(subset(query, occluded, false), gallery, eval.ks);
  r.occluded = evaluate_or_empty(subset(query, occluded, true), gallery, eval.ks);
  if (eval.rerank) {
    const RerankParams params = eval.rerank_params.clamped(query.size() + gallery.size());
    const Tensor q_g = cross_sq_dist(query.vectors, gallery.vectors);
    const Tensor q_q = cross_sq_dist(query.vectors, query.vectors);
    const Tensor g_g = cross_sq_dist(gallery.vectors, gallery.vectors);
    r.reranked = evaluate_distances(k_reciprocal_rerank(q_g, q_q, g_g, params), query.ids,
                                    query.cameras, gallery.ids, gallery.cameras, eval.ks);
  }
  return r;
}

EvalReport evaluate_model(const ModelParams& params, const CbdbConfig& model,
                          const SynthDataset& data, const EvalConfig& eval) {
  DescriptorBatch q{infer(stack_images(data.query), params, model), sample_ids(data.query),
                    sample_cameras(data.query)};
  DescriptorBatch g{infer(stack_images(data.gallery), params, model), sample_ids(data.gallery),
                    sample_cameras(data.gallery)};
  std::vector<bool> occluded;
  for (const auto& s : data.query) occluded.push_back(s.occluded);
  return evaluate_split(q, occluded, g, eval);
}

RunResult run_experiment(const RunConfig& config) {
  config.validate();
  const SynthDataset data = generate(config.data);
  RunResult r;
  r.config_hash = config_hash(config);
  r.model = train(data.train, config.model);
  r.report = evaluate_model(r.model.params, config.model, data, config.eval);
  return r;
}

nlohmann::json to_json(const EvalReport& report, const std::string& config_hash) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["all"] = to_json(report.all);
  j["clean"] = to_json(report.clean);
  j["occluded"] = to_json(report.occluded);
  if (report.reranked) j["reranked"] = to_json(*report.reranked);
  return j;
}

std::string train_log_csv(const std::vector<EpochLog>& log, const std::string& config_hash) {
  std::ostringstream os;
  os << "epoch,lr,elastic_loss,ce_loss,total_loss,config_hash\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9f,%.9f,%.9f,", e.epoch, e.lr, e.elastic_loss,
                  e.ce_loss, e.total_loss);
    os << buf << config_hash << '\n';
  }
  return os.str();
}

std::vector<AblationVariant> dropout_grid(const RunConfig& base) {
  std::vector<AblationVariant> out;
  for (const auto& name : base.ablation.dropout_variants) {
    RunConfig c = base;
    c.model.drop = name == "cbdb" ? DropStrategyKind{Cbdb{base.model.m}} : parse_strategy(name);
    if (const auto* k = std::get_if<Cbdb>(&c.model.drop)) c.model.m = k->m;
    c.model.branch_limit = 0;
    out.push_back({strategy_name(c.model.drop), c});
  }
  return out;
}

std::vector<AblationVariant> branch_grid(const RunConfig& base) {
  std::vector<AblationVariant> out;
  RunConfig full = base;
  if (!std::holds_alternative<Cbdb>(full.model.drop) &&
      !std::holds_alternative<CbdbOverlap>(full.model.drop)) {
    full.model.drop = Cbdb{full.model.m};
  }
  full.model.branch_limit = 0;
  const std::size_t n = full.model.drop_branch_count();
  for (std::size_t k = 1; k <= n; ++k) {
    RunConfig c = full;
    c.model.branch_limit = k;
    out.push_back({"branches=" + std::to_string(k), c});
  }
  return out;
}

std::vector<AblationVariant> component_grid(const RunConfig& base) {
  auto make = [&](const std::string& name, bool cbdb, MetricLoss loss, bool resblock,
                  bool global) {
    RunConfig c = base;
    c.model.branch_limit = 0;
    c.model.metric_loss = loss;
    c.model.use_resblock = resblock;
    c.model.use_global_branch = global;
    if (cbdb) {
      c.model.drop = Cbdb{base.model.m};
    } else {
      c.model.drop = NoDrop{};
      c.model.m = 1;
    }
    return AblationVariant{name, c};
  };
  return {
      make("baseline", false, MetricLoss::kTriplet, true, false),
      make("elastic_only", false, MetricLoss::kElastic, true, false),
      make("cbdb_only", true, MetricLoss::kTriplet, true, false),
      make("no_resblock", true, MetricLoss::kElastic, false, false),
      make("full", true, MetricLoss::kElastic, true, false),
      make("full_global", true, MetricLoss::kElastic, true, true),
  };
}

std::vector<AblationRun> run_ablation(const std::vector<AblationVariant>& variants,
                                      std::uint64_t base_seed, std::size_t seeds) {
  std::vector<AblationRun> runs;
  for (const auto& v : variants) {
    for (std::size_t s = 0; s < seeds; ++s) {
      RunConfig c = v.config.with_seed(base_seed + s);
      if (std::find(c.eval.ks.begin(), c.eval.ks.end(), 1) == c.eval.ks.end()) {
        c.eval.ks.insert(c.eval.ks.begin(), 1);
      }
      RunResult r = run_experiment(c);
      runs.push_back({v.name, c.seed, std::move(r.report)});
    }
  }
  return runs;
}

std::string ablation_summary_csv(const std::string& grid, const std::vector<AblationRun>& runs,
                                 const std::string& config_hash) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const AblationRun*>> by_variant;
  for (const auto& r : runs) {
    if (!by_variant.count(r.variant)) order.push_back(r.variant);
    by_variant[r.variant].push_back(&r);
  }
  auto stats = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    return std::pair{mean, sd};
  };

  std::ostringstream os;
  os << "grid,variant,seeds,rank1_mean,rank1_std,map_mean,map_std,occ_rank1_mean,occ_rank1_std,"
        "occ_map_mean,occ_map_std,config_hash\n";
  for (const auto& name : order) {
    const auto& rs = by_variant[name];
    std::vector<double> r1, map, or1, omap;
    for (const auto* r : rs) {
      r1.push_back(rank1(r->report.all));
      map.push_back(r->report.all.mean_ap);
      or1.push_back(rank1(r->report.occluded));
      omap.push_back(r->report.occluded.mean_ap);
    }
    os << grid << ',' << name << ',' << rs.size();
    for (const auto* xs : {&r1, &map, &or1, &omap}) {
      const auto [m, sd] = stats(*xs);
      os << ',' << fmt(m) << ',' << fmt(sd);
    }
    os << ',' << config_hash << '\n';
  }
  return os.str();
}

std::string ablation_runs_csv(const std::string& grid, const std::vector<AblationRun>& runs,
                              const std::string& config_hash) {
  std::ostringstream os;
  os << "grid,variant,seed,rank1,map,clean_rank1,clean_map,occ_rank1,occ_map,config_hash\n";
  for (const auto& r : runs) {
    os << grid << ',' << r.variant << ',' << r.seed << ',' << fmt(rank1(r.report.all)) << ','
       << fmt(r.report.all.mean_ap) << ',' << fmt(rank1(r.report.clean)) << ','
       << fmt(r.report.clean.mean_ap) << ',' << fmt(rank1(r.report.occluded)) << ','
       << fmt(r.report.occluded.mean_ap) << ',' << config_hash << '\n';
  }
  return os.str();
}

}  // namespace cbdb
