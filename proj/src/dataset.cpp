#include "moes/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "moes/error.hpp"
#include "moes/image_io.hpp"

namespace moes {

using nlohmann::json;

const char* attribute_name(BlobAttribute a) {
  switch (a) {
    case BlobAttribute::Bright: return "bright";
    case BlobAttribute::Dark: return "dark";
    case BlobAttribute::Texture: return "texture";
    case BlobAttribute::Chroma: return "chroma";
    case BlobAttribute::Bar: return "bar";
  }
  return "?";
}

BlobAttribute salient_attribute(std::size_t category) {
  return static_cast<BlobAttribute>(category % kAttributeCount);
}

void DatasetSpec::validate() const {
  if (num_categories < 2) throw ConfigError("num_categories must be >= 2 for mixture experiments");
  if (samples_per_category == 0) throw ConfigError("samples_per_category must be positive");
  if (blob_count_min == 0 || blob_count_min > blob_count_max) throw ConfigError("blob count range is empty");
  if (blob_count_max > kAttributeCount) {
    throw ConfigError("blob_count_max exceeds the " + std::to_string(kAttributeCount) + " attribute classes");
  }
  if (!(radius_min > 0.0 && radius_min <= radius_max)) throw ConfigError("radius range is empty");
  if (!(contrast_min > 0.0 && contrast_min <= contrast_max && contrast_max <= 0.5)) {
    throw ConfigError("contrast range must lie in (0, 0.5]");
  }
  if (!(noise >= 0.0)) throw ConfigError("noise must be nonnegative");
  if (fixation_count == 0) throw ConfigError("fixation_count must be positive");
  if (!(blur_sigma > 0.0)) throw ConfigError("blur_sigma must be positive");
  const double margin = effective_center_margin();
  const double free_h = static_cast<double>(height) - 2.0 * margin;
  const double free_w = static_cast<double>(width) - 2.0 * margin;
  const double needed = 2.0 * radius_max + 2.0;
  // Blobs are placed on a jittered grid; it needs room for blob_count_max cells.
  const auto rows = static_cast<std::size_t>(std::max(0.0, std::floor((free_h + 2.0) / needed)));
  const auto cols = static_cast<std::size_t>(std::max(0.0, std::floor((free_w + 2.0) / needed)));
  if (free_h <= 0.0 || free_w <= 0.0 || rows * cols < blob_count_max) {
    throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) + " is too small to place " +
                      std::to_string(blob_count_max) + " blobs of radius " + std::to_string(radius_max));
  }
}

std::size_t DatasetSpec::effective_frame_width() const {
  return frame_width != 0 ? frame_width : std::max<std::size_t>(2, std::min(height, width) / 16);
}

double DatasetSpec::effective_center_margin() const {
  const double minimum = static_cast<double>(effective_frame_width()) + radius_max + 1.0;
  return std::max(minimum, static_cast<double>(center_margin));
}

json to_json(const DatasetSpec& s) {
  return {{"num_categories", s.num_categories},
          {"samples_per_category", s.samples_per_category},
          {"height", s.height},
          {"width", s.width},
          {"blob_count_min", s.blob_count_min},
          {"blob_count_max", s.blob_count_max},
          {"radius_min", s.radius_min},
          {"radius_max", s.radius_max},
          {"contrast_min", s.contrast_min},
          {"contrast_max", s.contrast_max},
          {"noise", s.noise},
          {"frame_width", s.frame_width},
          {"center_margin", s.center_margin},
          {"fixation_count", s.fixation_count},
          {"blur_sigma", s.blur_sigma},
          {"seed", s.seed}};
}

DatasetSpec dataset_spec_from_json(const json& j, const DatasetSpec& base) {
  if (!j.is_object()) throw ConfigError("data spec must be a JSON object");
  const json reference = to_json(base);
  DatasetSpec s = base;
  json merged = reference;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!reference.contains(it.key())) throw ConfigError("unknown key '" + it.key() + "' in data spec");
    merged[it.key()] = it.value();
  }
  try {
    s.num_categories = merged.at("num_categories").get<std::size_t>();
    s.samples_per_category = merged.at("samples_per_category").get<std::size_t>();
    s.height = merged.at("height").get<std::size_t>();
    s.width = merged.at("width").get<std::size_t>();
    s.blob_count_min = merged.at("blob_count_min").get<std::size_t>();
    s.blob_count_max = merged.at("blob_count_max").get<std::size_t>();
    s.radius_min = merged.at("radius_min").get<double>();
    s.radius_max = merged.at("radius_max").get<double>();
    s.contrast_min = merged.at("contrast_min").get<double>();
    s.contrast_max = merged.at("contrast_max").get<double>();
    s.noise = merged.at("noise").get<double>();
    s.frame_width = merged.at("frame_width").get<std::size_t>();
    s.center_margin = merged.at("center_margin").get<std::size_t>();
    s.fixation_count = merged.at("fixation_count").get<std::size_t>();
    s.blur_sigma = merged.at("blur_sigma").get<double>();
    s.seed = merged.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("data spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<std::string> category_names(const DatasetSpec& spec) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < spec.num_categories; ++k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "c%02zu_%s", k, attribute_name(salient_attribute(k)));
    names.emplace_back(buf);
  }
  return names;
}

void category_color(std::size_t category, std::size_t num_categories, double rgb[3]) {
  // Evenly spaced hues at fixed saturation and value.
  const double hue = (static_cast<double>(category) + 0.5) / static_cast<double>(num_categories) * 6.0;
  const double s = 0.9, v = 0.85;
  const int sector = static_cast<int>(std::floor(hue)) % 6;
  const double f = hue - std::floor(hue);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int c = 0; c < 3; ++c) rgb[c] = table[sector][c];
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void paint_blob(Tensor& image, const BlobInfo& blob, double contrast) {
  const std::size_t H = image.dim(1), W = image.dim(2);
  const double sigma = blob.radius / 1.5;
  const double reach = blob.radius * 1.6;
  const auto y0 = static_cast<long>(std::floor(blob.cy - reach)), y1 = static_cast<long>(std::ceil(blob.cy + reach));
  const auto x0 = static_cast<long>(std::floor(blob.cx - reach)), x1 = static_cast<long>(std::ceil(blob.cx + reach));
  for (long y = std::max(0L, y0); y <= std::min<long>(static_cast<long>(H) - 1, y1); ++y) {
    for (long x = std::max(0L, x0); x <= std::min<long>(static_cast<long>(W) - 1, x1); ++x) {
      const double dy = static_cast<double>(y) - blob.cy, dx = static_cast<double>(x) - blob.cx;
      double envelope = 0.0;
      if (blob.attribute == BlobAttribute::Bar) {
        // Vertical bar: long in y, thin in x.
        const double sy = blob.radius * 1.1, sx = blob.radius / 3.5;
        envelope = std::exp(-0.5 * (dy * dy / (sy * sy) + dx * dx / (sx * sx)));
      } else {
        envelope = std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma));
      }
      if (envelope < 0.02) continue;
      double delta[3] = {0, 0, 0};
      switch (blob.attribute) {
        case BlobAttribute::Bright:
          delta[0] = delta[1] = delta[2] = contrast;
          break;
        case BlobAttribute::Dark:
          delta[0] = delta[1] = delta[2] = -contrast;
          break;
        case BlobAttribute::Texture: {
          const double sign = ((x + y) % 2 == 0) ? 1.0 : -1.0;
          delta[0] = delta[1] = delta[2] = sign * contrast;
          break;
        }
        case BlobAttribute::Chroma:
          delta[0] = contrast;
          delta[1] = -contrast;
          break;
        case BlobAttribute::Bar:
          delta[2] = contrast;
          delta[0] = -contrast;
          break;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        double& px = image[(c * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x)];
        px = std::clamp(px + envelope * delta[c], 0.0, 1.0);
      }
    }
  }
}

SaliencySample make_sample(const DatasetSpec& spec, std::size_t category, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(category), static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  const std::size_t H = spec.height, W = spec.width, K = spec.num_categories;
  const std::size_t frame = spec.effective_frame_width();

  SaliencySample s;
  char id[32];
  std::snprintf(id, sizeof id, "c%02zu_%05zu", category, index);
  s.id = id;
  s.category = category;
  s.image = Tensor({3, H, W});
  double border[3];
  category_color(category, K, border);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const bool on_frame = y < frame || x < frame || y >= H - frame || x >= W - frame;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = on_frame ? border[c] : 0.5 + uniform(rng, -spec.noise, spec.noise);
        s.image[(c * H + y) * W + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  // Attributes: the salient one, then other categories' attributes, then the rest.
  const BlobAttribute target = salient_attribute(category);
  std::vector<BlobAttribute> rivals, extras;
  for (std::size_t k = 0; k < std::min(K, kAttributeCount); ++k) {
    const auto a = salient_attribute(k);
    if (a != target) rivals.push_back(a);
  }
  for (std::size_t a = 0; a < kAttributeCount; ++a) {
    const auto attr = static_cast<BlobAttribute>(a);
    if (attr != target && std::find(rivals.begin(), rivals.end(), attr) == rivals.end()) extras.push_back(attr);
  }
  std::shuffle(rivals.begin(), rivals.end(), rng);
  std::shuffle(extras.begin(), extras.end(), rng);
  const auto count = std::uniform_int_distribution<std::size_t>(spec.blob_count_min, spec.blob_count_max)(rng);
  std::vector<BlobAttribute> attrs{target};
  for (auto a : rivals) attrs.push_back(a);
  for (auto a : extras) attrs.push_back(a);
  attrs.resize(count);

  // Jittered grid placement keeps blobs apart without rejection sampling.
  const double margin = spec.effective_center_margin();
  const double cell = 2.0 * spec.radius_max + 2.0;
  const double free_h = static_cast<double>(H) - 2.0 * margin, free_w = static_cast<double>(W) - 2.0 * margin;
  const auto rows = static_cast<std::size_t>(std::floor((free_h + 2.0) / cell));
  const auto cols = static_cast<std::size_t>(std::floor((free_w + 2.0) / cell));
  std::vector<std::size_t> cells(rows * cols);
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  const double step_h = rows > 1 ? free_h / static_cast<double>(rows - 1) : 0.0;
  const double step_w = cols > 1 ? free_w / static_cast<double>(cols - 1) : 0.0;
  const double slack_h = std::max(0.0, (step_h - cell) / 2.0), slack_w = std::max(0.0, (step_w - cell) / 2.0);
  for (std::size_t b = 0; b < attrs.size(); ++b) {
    const std::size_t r = cells[b] / cols, c = cells[b] % cols;
    BlobInfo blob;
    blob.attribute = attrs[b];
    blob.radius = uniform(rng, spec.radius_min, spec.radius_max);
    const double base_y = rows > 1 ? margin + static_cast<double>(r) * step_h : static_cast<double>(H) / 2.0;
    const double base_x = cols > 1 ? margin + static_cast<double>(c) * step_w : static_cast<double>(W) / 2.0;
    blob.cy = base_y + (slack_h > 0 ? uniform(rng, -slack_h, slack_h) : 0.0);
    blob.cx = base_x + (slack_w > 0 ? uniform(rng, -slack_w, slack_w) : 0.0);
    paint_blob(s.image, blob, uniform(rng, spec.contrast_min, spec.contrast_max));
    s.blobs.push_back(blob);
  }

  // Density: Gaussian on the salient blob, widened by the blur sigma.
  const BlobInfo& hot = s.blobs.front();
  const double sd2 = (hot.radius / 1.5) * (hot.radius / 1.5) + spec.blur_sigma * spec.blur_sigma;
  s.density = Tensor({1, H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = static_cast<double>(y) - hot.cy, dx = static_cast<double>(x) - hot.cx;
      s.density[y * W + x] = std::exp(-0.5 * (dy * dy + dx * dx) / sd2);
    }
  }
  const double peak = s.density.max();
  for (auto& v : s.density.values()) v /= peak;

  // Fixations: draws with replacement from the normalized density.
  std::vector<double> cdf(H * W);
  std::partial_sum(s.density.values().begin(), s.density.values().end(), cdf.begin());
  const double total = cdf.back();
  s.fixations = Tensor({1, H, W});
  for (std::size_t i = 0; i < spec.fixation_count; ++i) {
    const double u = uniform(rng, 0.0, total);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    s.fixations[static_cast<std::size_t>(it - cdf.begin())] = 1.0;
  }
  return s;
}

}  // namespace

std::vector<SaliencySample> generate(const DatasetSpec& spec) {
  spec.validate();
  std::vector<SaliencySample> out;
  out.reserve(spec.num_categories * spec.samples_per_category);
  for (std::size_t k = 0; k < spec.num_categories; ++k) {
    for (std::size_t i = 0; i < spec.samples_per_category; ++i) out.push_back(make_sample(spec, k, i));
  }
  return out;
}

std::vector<FoldSplit> split_folds(const std::vector<std::size_t>& categories, std::size_t n_folds,
                                   std::uint64_t seed, double val_fraction) {
  if (n_folds < 2) throw ConfigError("n_folds must be >= 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in [0, 1)");
  if (categories.empty()) throw ConfigError("cannot split an empty dataset");
  const std::size_t K = *std::max_element(categories.begin(), categories.end()) + 1;
  std::vector<std::vector<std::size_t>> by_cat(K);
  for (std::size_t i = 0; i < categories.size(); ++i) by_cat[categories[i]].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> fold_of(K);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (by_cat[k].empty()) continue;
    if (by_cat[k].size() < n_folds) {
      throw ConfigError("category " + std::to_string(k) + " has " + std::to_string(by_cat[k].size()) +
                        " samples, fewer than " + std::to_string(n_folds) + " folds");
    }
    std::shuffle(by_cat[k].begin(), by_cat[k].end(), rng);
    for (std::size_t i = 0; i < by_cat[k].size(); ++i) fold_of[k].push_back((i + offset) % n_folds);
    // Rotating the start keeps overall fold sizes within one of each other.
    offset = (offset + by_cat[k].size()) % n_folds;
  }

  std::vector<FoldSplit> folds(n_folds);
  for (std::size_t f = 0; f < n_folds; ++f) {
    std::vector<std::vector<std::size_t>> rest(K);
    std::size_t rest_total = 0;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < by_cat[k].size(); ++i) {
        if (fold_of[k][i] == f) {
          folds[f].test.push_back(by_cat[k][i]);
        } else {
          rest[k].push_back(by_cat[k][i]);
          ++rest_total;
        }
      }
    }
    const auto val_total = static_cast<std::size_t>(std::llround(static_cast<double>(rest_total) * val_fraction));
    std::vector<std::size_t> val_count(K);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double ideal = static_cast<double>(rest[k].size()) * val_fraction;
      val_count[k] = static_cast<std::size_t>(std::floor(ideal));
      assigned += val_count[k];
      remainders.emplace_back(ideal - std::floor(ideal), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < val_total && i < remainders.size(); ++i, ++assigned) {
      ++val_count[remainders[i].second];
    }
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < rest[k].size(); ++i) {
        (i < val_count[k] ? folds[f].val : folds[f].train).push_back(rest[k][i]);
      }
    }
    std::sort(folds[f].train.begin(), folds[f].train.end());
    std::sort(folds[f].val.begin(), folds[f].val.end());
    std::sort(folds[f].test.begin(), folds[f].test.end());
  }
  return folds;
}

void write_dataset(const std::filesystem::path& root, const DatasetSpec& spec,
                   const std::vector<SaliencySample>& samples) {
  namespace fs = std::filesystem;
  const auto names = category_names(spec);
  fs::create_directories(root);
  json list = json::array();
  for (const auto& s : samples) {
    if (s.category >= names.size()) throw UsageError("sample category outside the spec");
    const fs::path dir = root / names[s.category];
    fs::create_directories(dir);
    const std::string rel = names[s.category] + "/" + s.id;
    write_image_pgm(dir / (s.id + ".img.pgm"), s.image);
    write_density_pfm(dir / (s.id + ".density.pfm"), s.density);
    Tensor fix = s.fixations;
    write_image_pgm(dir / (s.id + ".fix.pgm"), fix);
    list.push_back({{"id", s.id},
                    {"category", s.category},
                    {"image", rel + ".img.pgm"},
                    {"density", rel + ".density.pfm"},
                    {"fixations", rel + ".fix.pgm"}});
  }
  json manifest = {{"spec", to_json(spec)}, {"seed", spec.seed}, {"categories", names}, {"samples", list}};
  std::ofstream os(root / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest in " + root.string());
  os << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw ConfigError("no dataset manifest at " + (root / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("malformed dataset manifest: " + std::string(e.what()));
  }
  Dataset ds;
  ds.spec = manifest.value("spec", json::object());
  ds.categories = manifest.at("categories").get<std::vector<std::string>>();
  for (const auto& entry : manifest.at("samples")) {
    SaliencySample s;
    s.id = entry.at("id").get<std::string>();
    s.category = entry.at("category").get<std::size_t>();
    s.image = read_image_pgm(root / entry.at("image").get<std::string>());
    s.density = read_density_pfm(root / entry.at("density").get<std::string>());
    s.fixations = read_image_pgm(root / entry.at("fixations").get<std::string>());
    for (auto& v : s.fixations.values()) v = v > 0.5 ? 1.0 : 0.0;
    if (s.fixations.sum() < 1.0) throw ConfigError("sample " + s.id + " has no fixations");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::size_t> categories_of(const std::vector<SaliencySample>& samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.category);
  return out;
}

void hflip_in_place(Tensor& chw) {
  const std::size_t planes = chw.dim(0) * chw.dim(1), W = chw.dim(2);
  for (std::size_t r = 0; r < planes; ++r) std::reverse(chw.data() + r * W, chw.data() + (r + 1) * W);
}

}  // namespace moes
