#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "moes/tensor.hpp"

namespace moes {

// Visual attribute classes a blob can have. The category of an image
// decides which one is salient.
enum class BlobAttribute { Bright, Dark, Texture, Chroma, Bar };

inline constexpr std::size_t kAttributeCount = 5;
const char* attribute_name(BlobAttribute a);
BlobAttribute salient_attribute(std::size_t category);

struct BlobInfo {
  BlobAttribute attribute;
  double cy, cx, radius;
};

struct SaliencySample {
  std::string id;
  std::size_t category = 0;
  Tensor image;      // [3,H,W] in [0,1]
  Tensor density;    // [1,H,W], max exactly 1
  Tensor fixations;  // [1,H,W], 0/1 with at least one 1
  std::vector<BlobInfo> blobs;  // generator metadata; empty when loaded from disk
};

struct DatasetSpec {
  std::size_t num_categories = 4;
  std::size_t samples_per_category = 50;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t blob_count_min = 4;
  std::size_t blob_count_max = 4;
  double radius_min = 2.5;
  double radius_max = 3.0;
  // Blob amplitude relative to the mid-gray background.
  double contrast_min = 0.3;
  double contrast_max = 0.45;
  double noise = 0.03;
  // Width in pixels of the category-colored border; 0 picks max(2, min(H,W)/16).
  std::size_t frame_width = 0;
  // Minimum distance of blob centers from the image edge; 0 picks
  // frame width + radius_max + 1. Large values keep the border cue outside
  // the receptive field of a purely convolutional predictor.
  std::size_t center_margin = 24;
  std::size_t fixation_count = 20;
  double blur_sigma = 1.5;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t effective_frame_width() const;
  double effective_center_margin() const;

  bool operator==(const DatasetSpec&) const = default;
};

nlohmann::json to_json(const DatasetSpec& spec);
// Strict: unknown keys raise ConfigError.
DatasetSpec dataset_spec_from_json(const nlohmann::json& j, const DatasetSpec& base = {});

std::vector<std::string> category_names(const DatasetSpec& spec);

// Images hold one blob per attribute drawn for them, a colored border that
// encodes the category, and a density peaked on the category's salient blob.
// Identical spec (including seed) gives bitwise-identical output.
std::vector<SaliencySample> generate(const DatasetSpec& spec);

// Border color for a category; the gating network's cue.
void category_color(std::size_t category, std::size_t num_categories, double rgb[3]);

struct FoldSplit {
  std::vector<std::size_t> train, val, test;
};

// Category-stratified n-fold split. Fold f's test share of each category
// differs from the ideal by less than one sample; val_fraction of the
// remaining samples (rounded, largest remainder per category) become the
// validation set.
std::vector<FoldSplit> split_folds(const std::vector<std::size_t>& categories, std::size_t n_folds,
                                   std::uint64_t seed, double val_fraction = 0.1);

struct Dataset {
  nlohmann::json spec;  // echo of the generating spec, when known
  std::vector<std::string> categories;
  std::vector<SaliencySample> samples;
};

// <root>/<category>/<id>.img.pgm, <id>.density.pfm, <id>.fix.pgm and
// <root>/manifest.json.
void write_dataset(const std::filesystem::path& root, const DatasetSpec& spec,
                   const std::vector<SaliencySample>& samples);
Dataset load_dataset(const std::filesystem::path& root);

std::vector<std::size_t> categories_of(const std::vector<SaliencySample>& samples);
void hflip_in_place(Tensor& chw);

}  // namespace moes
