#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "moes/ops.hpp"

namespace moes {

// A block of same-padded 3x3 (kernel_size) convolutions, each followed by
// ReLU, optionally closed by a max pool.
struct TrunkStage {
  std::vector<std::size_t> filters;
  std::optional<ops::PoolSpec> pool;

  bool operator==(const TrunkStage&) const = default;
};

struct ModelConfig {
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  std::size_t input_channels = 3;
  std::size_t kernel_size = 3;

  std::vector<TrunkStage> trunk_stages;
  // Zero-based indices into trunk_stages whose outputs feed the experts.
  std::vector<std::size_t> concat_stages;

  std::size_t num_experts = 4;
  // Conv-E-1 (kernel_size x kernel_size) width and Conv-E-2 (1x1) width.
  // Conv-E-2 channels are averaged into the single expert map.
  std::size_t expert_conv1_filters = 6;
  std::size_t expert_conv2_filters = 1;

  std::size_t gating_downsample = 4;
  std::vector<std::size_t> gating_conv_filters;
  ops::PoolSpec gating_pool;
  // Hidden fully connected widths; a final layer of num_experts units follows.
  std::vector<std::size_t> gating_dense_units;

  double tau = 10.0;
  double lambda_s = 10.0;
  double lambda_c = 1.0;
  double lambda_cb = 1.0;
  double alpha = 1.1;
  std::size_t cb_h = 6;
  std::size_t cb_w = 8;

  // 480x640 input, VGG16 trunk with stride-1 Pool4, 20 experts.
  static ModelConfig paper_scale();
  // 64x64 input, four small stages, saliency at 16x16.
  static ModelConfig desk_scale();

  // Throws ConfigError on any inconsistency, including shape arithmetic
  // that fails (pools larger than their inputs, mismatched concat stages).
  void validate() const;

  std::size_t output_h() const;
  std::size_t output_w() const;
  std::size_t gating_input_h() const { return input_h / gating_downsample; }
  std::size_t gating_input_w() const { return input_w / gating_downsample; }

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
// Strict: unknown keys raise ConfigError. Missing keys keep the value from
// base. A "preset" key ("desk" or "paper") selects the base.
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = ModelConfig::desk_scale());
std::string canonical_json(const ModelConfig& config);

struct LayerInfo {
  std::string group;  // "VGG16", "Experts", "Gating Network"
  std::string name;
  std::string kind;   // input, conv, pool, dense, center_bias
  std::size_t filters = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t pool_window = 0;
  std::size_t pool_stride = 0;
  std::size_t extent_h = 0;  // input size or center bias grid
  std::size_t extent_w = 0;

  bool operator==(const LayerInfo&) const = default;
};

std::vector<LayerInfo> layer_census(const ModelConfig& config);
nlohmann::json census_to_json(const std::vector<LayerInfo>& census);

}  // namespace moes
