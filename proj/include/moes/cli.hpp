#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "moes/dataset.hpp"
#include "moes/metrics.hpp"
#include "moes/model_config.hpp"
#include "moes/train.hpp"

namespace moes {

struct SplitConfig {
  std::size_t n_folds = 5;
  std::size_t fold = 0;
  double val_fraction = 0.1;
};

struct MetricsConfig {
  std::vector<Metric> metrics = all_metrics();
  std::size_t borji_splits = 100;
  std::uint64_t seed = 0;
};

struct EnsembleConfig {
  std::size_t members = 5;
  double subsample = 0.8;
};

// Sections: seed, model, train, data {root, spec}, split, metrics, ensemble,
// output_dir. Every field has a default, so "{}" is a complete config.
struct RunConfig {
  std::uint64_t seed = 1;
  ModelConfig model = ModelConfig::desk_scale();
  TrainConfig train;
  std::string data_root;
  DatasetSpec data;
  SplitConfig split;
  MetricsConfig metrics;
  EnsembleConfig ensemble;
  std::string output_dir = "out";

  // Sets the run, data, train and metrics seeds at once.
  void set_seed(std::uint64_t s);
};

nlohmann::json to_json(const RunConfig& config);
// Strict: unknown keys anywhere raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Subcommands gen-data, train, predict, eval, gradcheck. Returns 0 on
// success, 1 when a check fails, 2 on usage or configuration errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace moes
