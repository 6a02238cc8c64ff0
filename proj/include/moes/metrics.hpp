#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "moes/dataset.hpp"
#include "moes/tensor.hpp"

namespace moes {

// Degenerate: the metric is defined by convention (e.g. constant prediction).
// Undefined: no meaningful value exists; value is NaN and it is excluded
// from aggregates.
enum class ScoreStatus { Ok, Degenerate, Undefined };

struct Score {
  double value = 0.0;
  ScoreStatus status = ScoreStatus::Ok;
};

// All metrics take maps of equal element count. Fixation maps are binary
// (any value > 0.5 counts as fixated).

// Mean of the standardized prediction (population std) at fixated pixels.
Score nss(const Tensor& pred, const Tensor& fixations);
// Pearson correlation.
Score cc(const Tensor& pred, const Tensor& density);
// Sum q log(q/p), q = ground truth, p = prediction, after min-shift,
// +eps per pixel and sum normalization.
Score kld(const Tensor& pred, const Tensor& density, double eps = 1e-7);
// Histogram intersection after the same preprocessing as kld.
Score sim(const Tensor& pred, const Tensor& density, double eps = 1e-7);

// ROC area for positives vs negatives over all distinct thresholds
// (ties count one half). Computed from integer counts, so it is exact for a
// given ordering of the scores.
double roc_auc(std::vector<double> positives, std::vector<double> negatives);

struct BorjiResult {
  Score score;
  double std_error = 0.0;
  std::vector<double> split_aucs;
};

// Indices of count non-fixated pixels drawn uniformly with replacement.
std::vector<std::size_t> sample_borji_negatives(const Tensor& fixations, std::size_t count, std::mt19937_64& rng);
BorjiResult auc_borji(const Tensor& pred, const Tensor& fixations, std::size_t n_splits = 100, std::uint64_t seed = 0);
Score auc_judd(const Tensor& pred, const Tensor& fixations);

enum class Metric { Nss, Cc, Kld, Sim, AucBorji, AucJudd };

std::string metric_name(Metric m);
std::optional<Metric> parse_metric(const std::string& name);
const std::vector<Metric>& all_metrics();
std::string valid_metric_names();

struct MetricRow {
  std::string sample_id;
  std::string category;
  std::string metric;
  double value = 0.0;
  ScoreStatus status = ScoreStatus::Ok;
  double std_error = 0.0;  // AUC-Borji only
};

struct AggregateRow {
  std::string category;  // "all" for the overall row
  std::string metric;
  double mean = 0.0;
  std::size_t n = 0;
};

// The overall mean is the mean over samples, not the mean of category means.
struct MetricReport {
  std::vector<MetricRow> per_sample;
  std::vector<AggregateRow> aggregates;
  std::vector<std::string> missing;

  void write_csv(const std::filesystem::path& path) const;
  void write_aggregate_csv(const std::filesystem::path& path) const;
  std::optional<double> overall(const std::string& metric) const;
};

// Returns the saliency map for a sample ([1,h,w] at any resolution; it is
// resized to the ground truth), or nullopt when unavailable.
using PredictionSource = std::function<std::optional<Tensor>(const SaliencySample&)>;

struct EvaluateOptions {
  std::vector<Metric> metrics = all_metrics();
  std::size_t borji_splits = 100;
  std::uint64_t seed = 0;
};

MetricReport evaluate(const PredictionSource& source, const std::vector<SaliencySample>& samples,
                      const std::vector<std::string>& category_names, const EvaluateOptions& options = {});

}  // namespace moes
