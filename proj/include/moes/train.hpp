#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "moes/dataset.hpp"
#include "moes/model.hpp"

namespace moes {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t patience = 10;
  double flip_prob = 0.5;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  double rho = 0.95;
  double eps = 1e-6;
  // Zeroes the effective learning rate of every gating parameter.
  bool freeze_gating = false;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

// Mirrors image, density and fixations of each sample about the vertical
// axis with probability flip_prob. Categories are left unchanged.
std::vector<SaliencySample> hflip_augment(std::vector<SaliencySample> batch, double flip_prob, std::mt19937_64& rng);

// "Does not decrease" means no strict improvement on the best value so far.
// With a constant sequence the tracker stops after patience + 1 updates.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when value is a new best.
  bool update(double value);
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_class_acc = 0.0;  // NaN for single-expert models
  double val_nss = 0.0;

  bool operator==(const EpochLog&) const = default;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::vector<double> best_parameters;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool diverged = false;
  std::string message;
};

// Mini-batch Adadelta on total_loss with per-epoch seeded shuffling and flip
// augmentation. Keeps the parameters with the lowest validation loss and
// leaves them loaded in the model on return.
TrainResult train(Model& model, const std::vector<SaliencySample>& train_set,
                  const std::vector<SaliencySample>& val_set, const TrainConfig& config);

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

struct Evaluation {
  double loss = 0.0;
  double class_accuracy = 0.0;
  double nss = 0.0;
};

// Loss, gating accuracy and NSS over a sample set without augmentation.
Evaluation evaluate_model(Model& model, const std::vector<SaliencySample>& samples, std::size_t batch_size = 8);

// Saliency maps clamped at zero, [N,1,h,w], computed in chunks.
Tensor predict_saliency(Model& model, const std::vector<SaliencySample>& samples, std::size_t batch_size = 8);
// Temperature-tau gate probabilities [N,K].
Tensor predict_gates(Model& model, const std::vector<SaliencySample>& samples, std::size_t batch_size = 8);
Tensor stack_images(const std::vector<SaliencySample>& samples, std::size_t begin, std::size_t end);

// rows: true category, columns: argmax of the temperature-1 gate.
std::vector<std::vector<std::size_t>> confusion_matrix(Model& model, const std::vector<SaliencySample>& samples);
void write_confusion_csv(const std::filesystem::path& path, const std::vector<std::vector<std::size_t>>& matrix,
                         const std::vector<std::string>& names);

struct EnsembleMember {
  std::vector<std::size_t> subset;  // indices into the training set, ascending
  TrainResult result;
};

// n_members models, member m built with seed + m and trained (train seed
// config.seed + m) on a seeded random floor(subsample * |train|) subset.
std::vector<Model> train_ensemble(const ModelConfig& model_config, const std::vector<SaliencySample>& train_set,
                                  const std::vector<SaliencySample>& val_set, std::size_t n_members, double subsample,
                                  const TrainConfig& config, std::uint64_t seed,
                                  std::vector<EnsembleMember>* members = nullptr, std::size_t threads = 1);

std::vector<std::vector<std::size_t>> ensemble_subsets(std::size_t train_size, std::size_t n_members, double subsample,
                                                       std::uint64_t seed);

// Elementwise mean of equally shaped maps.
Tensor average_maps(const std::vector<Tensor>& maps);

// MOES_THREADS, defaulting to 1.
std::size_t thread_cap();

}  // namespace moes
