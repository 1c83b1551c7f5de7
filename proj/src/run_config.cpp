#include "cbdb/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "cbdb/errors.hpp"

namespace cbdb {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type: " + it->dump());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key = "") const {
    const std::string base = path_.empty() ? "config" : path_;
    return key.empty() ? base : (path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_data(const json& j, SynthConfig& d) {
  ObjectReader r(j, "data");
  r.get("num_ids", d.num_ids);
  r.get("samples_per_id", d.samples_per_id);
  r.get("num_cameras", d.num_cameras);
  r.get("height", d.height);
  r.get("width", d.width);
  r.get("channels", d.channels);
  r.get("part_count", d.part_count);
  r.get("signature_scale", d.signature_scale);
  r.get("noise_sigma", d.noise_sigma);
  r.get("camera_shift_sigma", d.camera_shift_sigma);
  r.get("occlusion_fraction", d.occlusion_fraction);
  r.get("occluded_query_prob", d.occluded_query_prob);
  r.get("num_train_ids", d.num_train_ids);
  r.get("queries_per_id", d.queries_per_id);
  r.finish();
}

void read_model(const json& j, CbdbConfig& m, std::string& drop) {
  ObjectReader r(j, "model");
  r.get("feat_channels", m.feat_channels);
  r.get("embed_dim", m.embed_dim);
  r.get("m", m.m);
  r.get("eta", m.eta);
  r.get("detach_weight", m.detach_weight);
  std::string loss = m.metric_loss == MetricLoss::kElastic ? "elastic" : "triplet";
  r.get("loss", loss);
  if (loss == "elastic") {
    m.metric_loss = MetricLoss::kElastic;
  } else if (loss == "triplet") {
    m.metric_loss = MetricLoss::kTriplet;
  } else {
    throw ConfigError("model.loss must be \"elastic\" or \"triplet\", got \"" + loss + "\"");
  }
  r.get("global_branch", m.use_global_branch);
  r.get("resblock", m.use_resblock);
  r.get("drop", drop);
  r.get("branch_limit", m.branch_limit);
  r.get("epochs", m.epochs);
  r.get("batch_p", m.batch_p);
  r.get("batch_k", m.batch_k);
  if (const json* lr = r.child("lr")) {
    ObjectReader lr_reader(*lr, "model.lr");
    lr_reader.get("base", m.schedule.base_lr);
    lr_reader.get("warmup_epochs", m.schedule.warmup_epochs);
    lr_reader.get("decay_epochs", m.schedule.decay_epochs);
    lr_reader.get("decay_factor", m.schedule.decay_factor);
    lr_reader.finish();
  }
  r.finish();
}

void read_eval(const json& j, EvalConfig& e) {
  ObjectReader r(j, "eval");
  r.get("ks", e.ks);
  r.get("rerank", e.rerank);
  r.get("k1", e.rerank_params.k1);
  r.get("k2", e.rerank_params.k2);
  r.get("lambda", e.rerank_params.lambda);
  r.finish();
}

void read_ablation(const json& j, AblationConfig& a) {
  ObjectReader r(j, "ablation");
  r.get("seeds", a.seeds);
  r.get("dropout_variants", a.dropout_variants);
  r.finish();
}

}  // namespace

void RunConfig::resolve() {
  data.seed = seed;
  model.seed = seed + 1;
  model.height = data.height;
  model.width = data.width;
  model.in_channels = data.channels;
  model.num_classes = data.num_train_ids;
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  if (eval.ks.empty()) throw ConfigError("eval.ks must not be empty");
  for (int k : eval.ks) {
    if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
  }
  if (eval.rerank_params.k1 < 1 || eval.rerank_params.k2 < 1 ||
      !(eval.rerank_params.lambda >= 0.0 && eval.rerank_params.lambda <= 1.0)) {
    throw ConfigError("eval: need k1 >= 1, k2 >= 1 and lambda in [0,1]");
  }
  if (ablation.seeds == 0) throw ConfigError("ablation.seeds must be >= 1");
  for (const auto& v : ablation.dropout_variants) {
    if (v != "cbdb") (void)parse_strategy(v);
  }
  if (data.num_train_ids == data.num_ids) {
    throw ConfigError("data.num_train_ids must leave identities for query/gallery");
  }
}

RunConfig RunConfig::with_seed(std::uint64_t new_seed) const {
  RunConfig c = *this;
  c.seed = new_seed;
  c.resolve();
  return c;
}

RunConfig parse_run_config(const json& doc) {
  RunConfig cfg;
  ObjectReader r(doc, "");
  r.get("seed", cfg.seed);
  r.get("output_dir", cfg.output_dir);
  if (const json* d = r.child("data")) read_data(*d, cfg.data);
  std::string drop = "cbdb";
  if (const json* m = r.child("model")) read_model(*m, cfg.model, drop);
  if (const json* e = r.child("eval")) read_eval(*e, cfg.eval);
  if (const json* a = r.child("ablation")) read_ablation(*a, cfg.ablation);
  r.finish();

  if (drop == "cbdb") {
    cfg.model.drop = Cbdb{cfg.model.m};
  } else {
    cfg.model.drop = parse_strategy(drop);
    const bool m_given = doc.contains("model") && doc["model"].contains("m");
    if (const auto* c = std::get_if<Cbdb>(&cfg.model.drop); c && !m_given) cfg.model.m = c->m;
  }
  cfg.resolve();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
  const auto& d = c.data;
  const auto& m = c.model;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["data"] = {{"num_ids", d.num_ids},
               {"samples_per_id", d.samples_per_id},
               {"num_cameras", d.num_cameras},
               {"height", d.height},
               {"width", d.width},
               {"channels", d.channels},
               {"part_count", d.part_count},
               {"signature_scale", d.signature_scale},
               {"noise_sigma", d.noise_sigma},
               {"camera_shift_sigma", d.camera_shift_sigma},
               {"occlusion_fraction", d.occlusion_fraction},
               {"occluded_query_prob", d.occluded_query_prob},
               {"num_train_ids", d.num_train_ids},
               {"queries_per_id", d.queries_per_id}};
  j["model"] = {{"feat_channels", m.feat_channels},
                {"embed_dim", m.embed_dim},
                {"m", m.m},
                {"eta", m.eta},
                {"detach_weight", m.detach_weight},
                {"loss", m.metric_loss == MetricLoss::kElastic ? "elastic" : "triplet"},
                {"global_branch", m.use_global_branch},
                {"resblock", m.use_resblock},
                {"drop", strategy_name(m.drop)},
                {"branch_limit", m.branch_limit},
                {"epochs", m.epochs},
                {"batch_p", m.batch_p},
                {"batch_k", m.batch_k},
                {"lr",
                 {{"base", m.schedule.base_lr},
                  {"warmup_epochs", m.schedule.warmup_epochs},
                  {"decay_epochs", m.schedule.decay_epochs},
                  {"decay_factor", m.schedule.decay_factor}}}};
  j["eval"] = {{"ks", c.eval.ks},
               {"rerank", c.eval.rerank},
               {"k1", c.eval.rerank_params.k1},
               {"k2", c.eval.rerank_params.k2},
               {"lambda", c.eval.rerank_params.lambda}};
  j["ablation"] = {{"seeds", c.ablation.seeds},
                   {"dropout_variants", c.ablation.dropout_variants}};
  return j;
}

json to_json(const EvalMetrics& metrics) {
  json rank = json::object();
  for (const auto& [k, v] : metrics.rank_k) rank[std::to_string(k)] = v;
  return {{"rank", rank}, {"mAP", metrics.mean_ap},
          {"num_valid_queries", metrics.num_valid_queries}};
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");  // where results land does not change them
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cbdb
