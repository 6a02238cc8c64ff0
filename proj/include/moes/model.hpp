#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string_view>
#include <string>
#include <vector>

#include "moes/autodiff.hpp"
#include "moes/model_config.hpp"

namespace moes {

// All tensors live on the model's graph tape until the next clear_tape().
struct ModelOutput {
  Var saliency;            // [N,1,h,w] mixture prediction, raw (may be negative)
  Var expert_maps;         // [N,K,h,w] expert predictions before center bias
  Var biased_expert_maps;  // [N,K,h,w] expert maps times upscaled center bias
  Var center_bias;         // [1,K,h,w] upscaled center-bias maps
  Var gate_logits;         // [N,K]
  Var gate_probs_tau;      // [N,K] softmax at the configured temperature
  Var gate_probs_1;        // [N,K] softmax at temperature 1 (class loss)
};

struct ForwardOptions {
  // Skips the center-bias multiplication. Used to verify the bias is neutral at init.
  bool bypass_center_bias = false;
};

// Shared trunk, K expert heads with per-expert center bias, and a gating
// classifier on a down-sampled copy of the input. Parameter order (the
// checkpoint order) is trunk, experts 0..K-1, center bias, gating.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const noexcept { return config_; }
  Graph& graph() noexcept { return graph_; }
  const Graph& graph() const noexcept { return graph_; }

  // images: [N, C, input_h, input_w]. Throws UsageError on a shape mismatch.
  ModelOutput forward(const Tensor& images, const ForwardOptions& options = {});

  // Test hook: multiplies the center-bias gradient by factor, producing a
  // wrong gradient for negative-control checks. 1.0 disables it.
  void set_gradient_fault(double factor) { gradient_fault_ = factor; }

  // Names of parameters belonging to the gating branch.
  std::vector<std::string> gating_parameter_names() const;

 private:
  struct Conv {
    Var kernel, bias;
  };
  struct Dense {
    Var weight, bias;
  };

  Conv make_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::mt19937_64& rng);
  Dense make_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);

  ModelConfig config_;
  Graph graph_;
  std::vector<std::vector<Conv>> trunk_;
  std::vector<std::pair<Conv, Conv>> experts_;
  Var center_bias_;
  std::vector<Conv> gating_convs_;
  std::vector<Dense> gating_dense_;
  double gradient_fault_ = 1.0;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

// Mean normalized squared error of the mixture against y plus lambda_cb
// times the center-bias regularizer. y: [N,1,h,w] in [0,1].
Var saliency_loss(Graph& g, const ModelOutput& out, const Tensor& y, const ModelConfig& config);
// Cross entropy of the temperature-1 gate probabilities; targets one-hot [N,K].
Var class_loss(Graph& g, const ModelOutput& out, const Tensor& targets);
// lambda_s * saliency_loss + lambda_c * class_loss.
Var total_loss(Graph& g, const ModelOutput& out, const Tensor& y, const Tensor& targets, const ModelConfig& config);

// Mixture clamped below at 0 for export.
Tensor clamp_for_export(const Tensor& saliency);

// Binary checkpoint: "MOES", u32 version, u64 JSON length, canonical config
// JSON, u64 FNV-1a hash of that JSON, u64 value count, then parameters in
// graph order as little-endian f64.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);
std::uint64_t config_hash(const ModelConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace moes
