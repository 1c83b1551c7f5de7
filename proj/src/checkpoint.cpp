#include "cbdb/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cbdb/errors.hpp"

namespace cbdb {

namespace {

constexpr const char* kMagic = "cbdb-checkpoint";
constexpr int kVersion = 1;

void append_double(std::string& s, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  s.append(buf, res.ptr);
}

double parse_double(const std::string& token) {
  double v = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    throw ConfigError("checkpoint: bad number '" + token + "'");
  }
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const RunConfig& config, const ModelParams& params) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "config_hash " << config_hash(config) << '\n';
  // output_dir is left out so a checkpoint does not depend on where it was written
  nlohmann::json cj = to_json(config);
  cj.erase("output_dir");
  out << "config " << cj.dump() << '\n';
  for (const auto& [name, p] : params.named()) {
    out << "param " << name << ' ' << p->value.rank();
    for (std::size_t d : p->shape()) out << ' ' << d;
    out << '\n';
    std::string line;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      if (i) line.push_back(' ');
      append_double(line, p->value[i]);
    }
    out << line << '\n';
  }
  out << "end\n";
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                     const ModelParams& params) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  write_checkpoint(out, config, params);
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kMagic) throw ConfigError("not a checkpoint file");
  if (version != kVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  }
  std::string key, hash, config_text;
  in >> key >> hash;
  if (key != "config_hash") throw ConfigError("checkpoint: missing config_hash");
  in >> key;
  if (key != "config") throw ConfigError("checkpoint: missing config");
  std::getline(in >> std::ws, config_text);

  Checkpoint ck;
  try {
    ck.config = parse_run_config(nlohmann::json::parse(config_text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("checkpoint: malformed config JSON: ") + e.what());
  }
  if (config_hash(ck.config) != hash) throw ConfigError("checkpoint: config hash mismatch");

  Rng unused(0);
  ck.params = ModelParams::init(ck.config.model, unused);
  auto named = ck.params.named();
  std::size_t loaded = 0;
  while (in >> key && key != "end") {
    if (key != "param") throw ConfigError("checkpoint: unexpected token '" + key + "'");
    std::string name;
    std::size_t rank = 0;
    in >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) in >> d;
    ParamTensor* target = nullptr;
    for (auto& [n, p] : named) {
      if (n == name) target = p;
    }
    if (!target) throw ConfigError("checkpoint: unknown parameter '" + name + "'");
    if (target->shape() != shape) {
      throw DimensionError("checkpoint: parameter " + name + " has shape " +
                           shape_to_string(shape) + ", config expects " +
                           shape_to_string(target->shape()));
    }
    Tensor value(shape);
    std::string token;
    for (double& v : value.data()) {
      if (!(in >> token)) throw ConfigError("checkpoint: truncated values for " + name);
      v = parse_double(token);
    }
    *target = ParamTensor(std::move(value));
    ++loaded;
  }
  if (key != "end" || loaded != named.size()) {
    throw ConfigError("checkpoint: expected " + std::to_string(named.size()) +
                      " parameters, read " + std::to_string(loaded));
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace cbdb
