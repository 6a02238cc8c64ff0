#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "moes/dataset.hpp"
#include "moes/error.hpp"
#include "moes/image_io.hpp"

namespace moes {
namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.samples_per_category = 6;
  return s;
}

std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.values().begin(), t.values().end()) - t.values().begin());
}

TEST(Generate, SampleInvariants) {
  const auto spec = small_spec();
  const auto samples = generate(spec);
  ASSERT_EQ(samples.size(), spec.num_categories * spec.samples_per_category);
  std::set<std::string> ids;
  for (const auto& s : samples) {
    ids.insert(s.id);
    EXPECT_EQ(s.image.shape(), (Shape{3, spec.height, spec.width}));
    EXPECT_GE(s.image.min(), 0.0);
    EXPECT_LE(s.image.max(), 1.0);
    EXPECT_EQ(s.density.max(), 1.0);
    EXPECT_GE(s.density.min(), 0.0);
    const double fixated = s.fixations.sum();
    EXPECT_GE(fixated, 1.0);
    EXPECT_LE(fixated, static_cast<double>(spec.fixation_count));
    for (double v : s.fixations.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_LT(s.category, spec.num_categories);
  }
  EXPECT_EQ(ids.size(), samples.size());
}

TEST(Generate, Deterministic) {
  const auto a = generate(small_spec());
  const auto b = generate(small_spec());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].density, b[i].density);
    EXPECT_EQ(a[i].fixations, b[i].fixations);
  }
  auto other = small_spec();
  other.seed = 2;
  EXPECT_NE(generate(other)[0].image, a[0].image);
}

TEST(Generate, DensityPeaksOnTheCategorysSalientBlob) {
  const auto spec = small_spec();
  for (const auto& s : generate(spec)) {
    const BlobInfo* hot = nullptr;
    for (const auto& b : s.blobs) {
      if (b.attribute == salient_attribute(s.category)) hot = &b;
    }
    ASSERT_NE(hot, nullptr);
    const std::size_t peak = argmax(s.density);
    const double py = static_cast<double>(peak / spec.width), px = static_cast<double>(peak % spec.width);
    EXPECT_LE(std::hypot(py - hot->cy, px - hot->cx), 1.0);
  }
}

TEST(Generate, TwoCategoryBrightDarkInterference) {
  // The same blob layout yields disjoint peaks under the two rules.
  DatasetSpec spec = small_spec();
  spec.num_categories = 2;
  spec.blob_count_min = spec.blob_count_max = 2;
  for (const auto& s : generate(spec)) {
    ASSERT_EQ(s.blobs.size(), 2u);
    std::set<BlobAttribute> attrs{s.blobs[0].attribute, s.blobs[1].attribute};
    EXPECT_EQ(attrs, (std::set<BlobAttribute>{BlobAttribute::Bright, BlobAttribute::Dark}));
    const auto& hot = s.blobs[0].attribute == salient_attribute(s.category) ? s.blobs[0] : s.blobs[1];
    const auto& cold = s.blobs[0].attribute == salient_attribute(s.category) ? s.blobs[1] : s.blobs[0];
    const auto at = [&](double y, double x) {
      return s.density[static_cast<std::size_t>(std::lround(y)) * spec.width + static_cast<std::size_t>(std::lround(x))];
    };
    EXPECT_GT(at(hot.cy, hot.cx), 0.9);
    EXPECT_LT(at(cold.cy, cold.cx), 0.05);
  }
  EXPECT_EQ(salient_attribute(0), BlobAttribute::Bright);
  EXPECT_EQ(salient_attribute(1), BlobAttribute::Dark);
}

TEST(Generate, OracleClassifierIsPerfect) {
  // The border color alone identifies the category.
  const auto spec = small_spec();
  for (const auto& s : generate(spec)) {
    std::size_t best = 0;
    double best_d = 1e9;
    for (std::size_t k = 0; k < spec.num_categories; ++k) {
      double rgb[3];
      category_color(k, spec.num_categories, rgb);
      double d = 0.0;
      for (std::size_t c = 0; c < 3; ++c) d += std::pow(s.image[c * spec.height * spec.width] - rgb[c], 2);
      if (d < best_d) best_d = d, best = k;
    }
    EXPECT_EQ(best, s.category);
  }
}

TEST(Generate, SpecValidation) {
  DatasetSpec s = small_spec();
  s.num_categories = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.height = s.width = 20;
  EXPECT_THROW(generate(s), ConfigError);
  s = small_spec();
  s.radius_min = 4;
  s.radius_max = 3;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(dataset_spec_from_json(nlohmann::json{{"colour", 1}}), ConfigError);
  EXPECT_EQ(dataset_spec_from_json(to_json(small_spec())), small_spec());
}

TEST(SplitFolds, TwentyCategoriesOfFive) {
  std::vector<std::size_t> cats;
  for (std::size_t k = 0; k < 20; ++k)
    for (int i = 0; i < 5; ++i) cats.push_back(k);
  const auto folds = split_folds(cats, 5, 3);
  ASSERT_EQ(folds.size(), 5u);
  std::vector<int> seen(cats.size(), 0);
  for (const auto& f : folds) {
    std::vector<int> per(20, 0);
    for (auto i : f.test) ++per[cats[i]], ++seen[i];
    for (int c : per) EXPECT_EQ(c, 1);
    EXPECT_EQ(f.train.size() + f.val.size() + f.test.size(), cats.size());
    std::set<std::size_t> all(f.train.begin(), f.train.end());
    for (auto i : f.val) EXPECT_TRUE(all.insert(i).second);
    for (auto i : f.test) EXPECT_TRUE(all.insert(i).second);
    EXPECT_EQ(f.val.size(), 8u);
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(split_folds(cats, 5, 3)[2].test, folds[2].test);
}

TEST(SplitFolds, UnevenStratification) {
  std::vector<std::size_t> cats;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 7 + k; ++i) cats.push_back(k);
  const auto folds = split_folds(cats, 4, 9);
  for (std::size_t k = 0; k < 3; ++k) {
    const double ideal = static_cast<double>(7 + k) / 4.0;
    for (const auto& f : folds) {
      const auto n = std::count_if(f.test.begin(), f.test.end(), [&](std::size_t i) { return cats[i] == k; });
      EXPECT_LT(std::abs(static_cast<double>(n) - ideal), 1.0);
    }
  }
  EXPECT_THROW(split_folds({0, 0, 1}, 2, 1), ConfigError);
  EXPECT_THROW(split_folds(cats, 1, 1), ConfigError);
}

TEST(SplitFolds, ValidationFraction) {
  std::vector<std::size_t> cats;
  for (std::size_t k = 0; k < 4; ++k)
    for (int i = 0; i < 75; ++i) cats.push_back(k);
  const auto f = split_folds(cats, 6, 1, 0.2)[0];
  EXPECT_EQ(f.test.size(), 50u);
  EXPECT_EQ(f.val.size(), 50u);
  EXPECT_EQ(f.train.size(), 200u);
}

TEST(Pgm, HandBytesDecode) {
  testing::TempDir dir("pgm");
  {
    std::ofstream os(dir / "a.pgm", std::ios::binary);
    os << "P5\n2 2\n255\n";
    const unsigned char px[4] = {0, 128, 255, 64};
    os.write(reinterpret_cast<const char*>(px), 4);
  }
  const Tensor t = read_image_pgm(dir / "a.pgm");
  EXPECT_EQ(t.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 128.0 / 255.0);
  EXPECT_EQ(t[2], 1.0);
  EXPECT_EQ(t[3], 64.0 / 255.0);
}

TEST(Pgm, RoundTripAfterQuantization) {
  testing::TempDir dir("pgm");
  for (std::size_t c : {1, 3}) {
    const Tensor img = testing::random_tensor({c, 5, 7}, c, 0, 1);
    write_image_pgm(dir / "x.pgm", img);
    const Tensor back = read_image_pgm(dir / "x.pgm");
    ASSERT_EQ(back.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(back[i], quantize_8bit(img[i]));
  }
}

TEST(Pgm, MalformedFilesGiveFormatErrors) {
  testing::TempDir dir("pgm");
  std::ofstream(dir / "trunc.pgm", std::ios::binary) << "P5\n4 4\n255\n\x01\x02";
  std::ofstream(dir / "maxval.pgm", std::ios::binary) << "P5\n1 1\n65535\n\x01\x02";
  std::ofstream(dir / "magic.pgm", std::ios::binary) << "P2\n1 1\n255\n1";
  const auto offset_of = [&](const char* name) -> std::size_t {
    try {
      read_image_pgm(dir / name);
    } catch (const FormatError& e) {
      return e.offset();
    }
    ADD_FAILURE() << name << " was accepted";
    return 0;
  };
  EXPECT_EQ(offset_of("magic.pgm"), 0u);
  const std::size_t maxval_at = offset_of("maxval.pgm");
  EXPECT_GE(maxval_at, 6u);
  EXPECT_LE(maxval_at, 7u);
  EXPECT_GE(offset_of("trunc.pgm"), 11u);
}

TEST(Pfm, RoundTripAndChannelCheck) {
  testing::TempDir dir("pfm");
  Tensor m = testing::random_tensor({1, 4, 6}, 3, 0, 1);
  m[5] = 1.0;
  write_density_pfm(dir / "m.pfm", m);
  const Tensor back = read_density_pfm(dir / "m.pfm");
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(m[i])));
  EXPECT_EQ(back[5], 1.0);
  write_density_pfm(dir / "z.pfm", Tensor({1, 3, 3}, 0.0));
  EXPECT_EQ(read_density_pfm(dir / "z.pfm").max(), 0.0);
  std::ofstream(dir / "color.pfm", std::ios::binary) << "PF\n1 1\n-1.0\n" << std::string(12, '\0');
  EXPECT_THROW(read_density_pfm(dir / "color.pfm"), FormatError);
}

TEST(DatasetIo, WriteLoadRoundTrip) {
  testing::TempDir dir("ds");
  auto spec = small_spec();
  spec.samples_per_category = 2;
  const auto samples = generate(spec);
  write_dataset(dir.path(), spec, samples);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / (category_names(spec)[1] + "/" + samples[2].id + ".img.pgm")));
  const Dataset back = load_dataset(dir.path());
  ASSERT_EQ(back.samples.size(), samples.size());
  EXPECT_EQ(back.categories, category_names(spec));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].id, samples[i].id);
    EXPECT_EQ(back.samples[i].category, samples[i].category);
    EXPECT_EQ(back.samples[i].fixations, samples[i].fixations);
    EXPECT_EQ(back.samples[i].density.max(), 1.0);
  }
  EXPECT_THROW(load_dataset(dir / "missing"), ConfigError);
}

TEST(Flip, InvolutionAndColumnMap) {
  Tensor t = testing::random_tensor({2, 3, 5}, 4);
  Tensor f = t;
  hflip_in_place(f);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 5; ++x) EXPECT_EQ(f[(c * 3 + y) * 5 + x], t[(c * 3 + y) * 5 + (4 - x)]);
  hflip_in_place(f);
  EXPECT_EQ(f, t);
}

}  // namespace
}  // namespace moes
