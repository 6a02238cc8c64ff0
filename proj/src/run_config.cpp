#include <fstream>

#include "moes/cli.hpp"
#include "moes/error.hpp"

namespace moes {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  train.seed = s;
  metrics.seed = s;
}

json to_json(const RunConfig& c) {
  json names = json::array();
  for (Metric m : c.metrics.metrics) names.push_back(metric_name(m));
  return {{"seed", c.seed},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"data", {{"root", c.data_root}, {"spec", to_json(c.data)}}},
          {"split", {{"n_folds", c.split.n_folds}, {"fold", c.split.fold}, {"val_fraction", c.split.val_fraction}}},
          {"metrics", {{"names", names}, {"borji_splits", c.metrics.borji_splits}, {"seed", c.metrics.seed}}},
          {"ensemble", {{"members", c.ensemble.members}, {"subsample", c.ensemble.subsample}}},
          {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"seed", "model", "train", "data", "split", "metrics", "ensemble", "output_dir"}, "config");
  RunConfig c;
  read(j, "seed", c.seed, "config");
  read(j, "output_dir", c.output_dir, "config");
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"root", "spec"}, "data");
    read(d, "root", c.data_root, "data");
    if (d.contains("spec")) c.data = dataset_spec_from_json(d.at("spec"));
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    reject_unknown(s, {"n_folds", "fold", "val_fraction"}, "split");
    read(s, "n_folds", c.split.n_folds, "split");
    read(s, "fold", c.split.fold, "split");
    read(s, "val_fraction", c.split.val_fraction, "split");
  }
  if (c.split.n_folds < 2) throw ConfigError("split.n_folds must be >= 2");
  if (c.split.fold >= c.split.n_folds) throw ConfigError("split.fold must be < split.n_folds");
  if (!(c.split.val_fraction > 0.0 && c.split.val_fraction < 1.0)) {
    throw ConfigError("split.val_fraction must lie in (0,1)");
  }
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    reject_unknown(m, {"names", "borji_splits", "seed"}, "metrics");
    if (m.contains("names")) {
      std::vector<std::string> names;
      read(m, "names", names, "metrics");
      c.metrics.metrics.clear();
      for (const auto& n : names) {
        const auto parsed = parse_metric(n);
        if (!parsed) throw ConfigError("unknown metric '" + n + "'; valid names: " + valid_metric_names());
        c.metrics.metrics.push_back(*parsed);
      }
    }
    read(m, "borji_splits", c.metrics.borji_splits, "metrics");
    read(m, "seed", c.metrics.seed, "metrics");
  }
  if (c.metrics.borji_splits == 0) throw ConfigError("metrics.borji_splits must be positive");
  if (j.contains("ensemble")) {
    const json& e = j.at("ensemble");
    reject_unknown(e, {"members", "subsample"}, "ensemble");
    read(e, "members", c.ensemble.members, "ensemble");
    read(e, "subsample", c.ensemble.subsample, "ensemble");
  }
  if (c.ensemble.members == 0) throw ConfigError("ensemble.members must be positive");
  if (!(c.ensemble.subsample > 0.0 && c.ensemble.subsample <= 1.0)) {
    throw ConfigError("ensemble.subsample must lie in (0,1]");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace moes
