#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "moes/dataset.hpp"
#include "moes/error.hpp"
#include "moes/metrics.hpp"

namespace moes {
namespace {

using testing::random_tensor;

Tensor map2x2(double a, double b, double c, double d) { return Tensor({1, 2, 2}, std::vector<double>{a, b, c, d}); }

// Probability that a random positive outscores a random negative, ties half.
double pairwise_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / static_cast<double>(pos.size() * neg.size());
}

TEST(Nss, HandExampleAndEdgeCases) {
  const Tensor fix = map2x2(0, 1, 0, 0);
  EXPECT_NEAR(nss(fix, fix).value, 1.73205, 1e-5);
  const Score flat = nss(map2x2(2, 2, 2, 2), fix);
  EXPECT_EQ(flat.value, 0.0);
  EXPECT_EQ(flat.status, ScoreStatus::Degenerate);
  EXPECT_NEAR(nss(map2x2(1, 5, 2, 7), map2x2(1, 1, 1, 1)).value, 0.0, 1e-12);
  EXPECT_EQ(nss(fix, map2x2(0, 0, 0, 0)).status, ScoreStatus::Undefined);
  EXPECT_THROW(nss(fix, Tensor({1, 1, 3})), UsageError);
}

TEST(Nss, AffineInvariant) {
  const Tensor p = random_tensor({1, 6, 6}, 1, 0, 1);
  Tensor fix({1, 6, 6}, 0.0);
  fix[3] = fix[20] = 1.0;
  Tensor q = p;
  for (double& v : q.values()) v = 4.0 * v + 7.0;
  EXPECT_NEAR(nss(p, fix).value, nss(q, fix).value, 1e-12);
}

TEST(Cc, Examples) {
  const Tensor m = random_tensor({1, 4, 5}, 2, 0, 1);
  EXPECT_NEAR(cc(m, m).value, 1.0, 1e-12);
  Tensor inv = m;
  for (double& v : inv.values()) v = 3.0 - v;
  EXPECT_NEAR(cc(m, inv).value, -1.0, 1e-12);
  EXPECT_NEAR(cc(map2x2(1, 2, 3, 4), map2x2(1, 3, 2, 4)).value, 0.8, 1e-12);
  const Score flat = cc(map2x2(1, 1, 1, 1), map2x2(1, 2, 3, 4));
  EXPECT_EQ(flat.status, ScoreStatus::Degenerate);
  EXPECT_EQ(flat.value, 0.0);
}

TEST(Kld, Examples) {
  const Tensor m = random_tensor({1, 3, 3}, 3, 0, 1);
  EXPECT_NEAR(kld(m, m).value, 0.0, 1e-12);
  const Tensor p({1, 1, 2}, std::vector<double>{0.5, 0.5}), q({1, 1, 2}, std::vector<double>{1.0, 0.0});
  EXPECT_NEAR(kld(p, q).value, std::log(2.0), 1e-5);
  EXPECT_NE(kld(q, p).value, kld(p, q).value);
  EXPECT_GT(kld(q, p).value, 1.0);
}

TEST(Kld, PredictionShiftInvariant) {
  const Tensor d = random_tensor({1, 3, 4}, 4, 0, 1);
  Tensor p = random_tensor({1, 3, 4}, 5, 0, 1);
  const double base = kld(p, d).value;
  EXPECT_GT(base, 0.0);
  for (double& v : p.values()) v += 7.0;
  EXPECT_NEAR(kld(p, d).value, base, 1e-9);
}

TEST(Sim, Examples) {
  const Tensor m = random_tensor({1, 3, 3}, 6, 0, 1);
  EXPECT_NEAR(sim(m, m).value, 1.0, 1e-12);
  EXPECT_NEAR(sim(map2x2(1, 0, 0, 0), map2x2(0, 0, 0, 1)).value, 0.0, 1e-6);
  const Tensor p({1, 1, 2}, std::vector<double>{0.5, 0.5}), q({1, 1, 2}, std::vector<double>{1.0, 0.0});
  EXPECT_NEAR(sim(p, q).value, 0.5, 1e-6);
}

TEST(RocAuc, MatchesPairwiseCounting) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> v(0, 5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> pos(1 + trial % 7), neg(1 + trial % 5);
    for (auto& x : pos) x = v(rng);
    for (auto& x : neg) x = v(rng);
    EXPECT_EQ(roc_auc(pos, neg), pairwise_auc(pos, neg));
  }
  EXPECT_TRUE(std::isnan(roc_auc({}, {1.0})));
}

TEST(AucBorji, PerfectRankingAndConstantMap) {
  const Tensor fix = map2x2(0, 1, 1, 0);
  const auto perfect = auc_borji(map2x2(0.1, 0.9, 0.8, 0.2), fix, 25, 3);
  EXPECT_EQ(perfect.score.value, 1.0);
  for (double a : perfect.split_aucs) EXPECT_EQ(a, 1.0);
  EXPECT_EQ(perfect.std_error, 0.0);
  EXPECT_EQ(auc_borji(map2x2(3, 3, 3, 3), fix, 10, 1).score.value, 0.5);
  EXPECT_EQ(auc_borji(map2x2(1, 2, 3, 4), map2x2(1, 1, 1, 1)).score.status, ScoreStatus::Undefined);
  EXPECT_THROW(auc_borji(map2x2(1, 2, 3, 4), fix, 0, 1), UsageError);
}

TEST(AucBorji, ThreeByThreeMatchesReplayedOracle) {
  const Tensor pred({1, 3, 3}, std::vector<double>{9, 1, 4, 2, 8, 3, 7, 5, 6});
  Tensor fix({1, 3, 3}, 0.0);
  fix[0] = fix[4] = fix[7] = 1.0;
  const std::uint64_t seed = 42;
  const auto result = auc_borji(pred, fix, 12, seed);
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (std::size_t s = 0; s < 12; ++s) {
    std::vector<double> neg;
    for (auto i : sample_borji_negatives(fix, 3, rng)) {
      EXPECT_LE(fix[i], 0.5);
      neg.push_back(pred[i]);
    }
    const double oracle = pairwise_auc({9, 8, 5}, neg);
    EXPECT_EQ(result.split_aucs[s], oracle);
    total += oracle;
  }
  EXPECT_NEAR(result.score.value, total / 12.0, 1e-15);
  EXPECT_EQ(auc_borji(pred, fix, 12, seed).split_aucs, result.split_aucs);
}

TEST(AucJudd, Examples) {
  const Tensor fix = map2x2(0, 1, 1, 0);
  EXPECT_EQ(auc_judd(map2x2(0.1, 0.9, 0.8, 0.2), fix).value, 1.0);
  EXPECT_EQ(auc_judd(map2x2(2, 2, 2, 2), fix).value, 0.5);
  // Thresholds 9, 5, 3: TPR 1/3, 2/3, 1 and FPR 0, 3/6, 4/6, then (1,1).
  const Tensor pred({1, 3, 3}, std::vector<double>{9, 1, 4, 2, 8, 3, 7, 5, 6});
  Tensor f({1, 3, 3}, 0.0);
  f[0] = f[7] = f[5] = 1.0;
  const double area = (3.0 / 6.0) * (1.0 / 3.0 + 2.0 / 3.0) / 2.0 + (1.0 / 6.0) * (2.0 / 3.0 + 1.0) / 2.0 +
                      (2.0 / 6.0) * (1.0 + 1.0) / 2.0;
  EXPECT_NEAR(auc_judd(pred, f).value, area, 1e-12);
  EXPECT_EQ(auc_judd(pred, Tensor({1, 3, 3}, 0.0)).status, ScoreStatus::Undefined);
}

TEST(MetricNames, ParseAndList) {
  for (Metric m : all_metrics()) EXPECT_EQ(parse_metric(metric_name(m)), m);
  EXPECT_FALSE(parse_metric("auc-shuffled"));
  EXPECT_NE(valid_metric_names().find("nss"), std::string::npos);
}

std::vector<SaliencySample> tiny_samples() {
  DatasetSpec spec;
  spec.num_categories = 3;
  spec.samples_per_category = 2;
  auto s = generate(spec);
  s.resize(5);  // category 2 keeps a single sample
  return s;
}

TEST(Evaluate, GroundTruthAgainstItself) {
  const auto samples = tiny_samples();
  const auto report = evaluate([](const SaliencySample& s) { return std::optional<Tensor>(s.density); }, samples,
                               {"a", "b", "c"});
  for (const auto& row : report.per_sample) {
    if (row.metric == "cc" || row.metric == "sim") {
      EXPECT_NEAR(row.value, 1.0, 1e-12) << row.metric;
    }
    if (row.metric == "kld") {
      EXPECT_NEAR(row.value, 0.0, 1e-12);
    }
  }
  EXPECT_NEAR(*report.overall("cc"), 1.0, 1e-12);
  EXPECT_TRUE(report.missing.empty());
}

TEST(Evaluate, SingletonCategoryAndPermutationInvariance) {
  auto samples = tiny_samples();
  const auto source = [](const SaliencySample& s) {
    Tensor t = s.density;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.01 * static_cast<double>(i % 7);
    return std::optional<Tensor>(t.reshaped({1, 1, t.dim(1), t.dim(2)}));
  };
  EvaluateOptions opt;
  opt.borji_splits = 10;
  const auto a = evaluate(source, samples, {"a", "b", "c"}, opt);
  std::reverse(samples.begin(), samples.end());
  const auto b = evaluate(source, samples, {"a", "b", "c"}, opt);
  ASSERT_EQ(a.aggregates.size(), b.aggregates.size());
  for (std::size_t i = 0; i < a.aggregates.size(); ++i) {
    EXPECT_EQ(a.aggregates[i].mean, b.aggregates[i].mean);
    EXPECT_EQ(a.aggregates[i].n, b.aggregates[i].n);
  }
  for (const auto& agg : a.aggregates) {
    if (agg.category != "c") continue;
    EXPECT_EQ(agg.n, 1u);
    for (const auto& row : a.per_sample) {
      if (row.category == "c" && row.metric == agg.metric) {
        EXPECT_EQ(agg.mean, row.value);
      }
    }
  }
}

TEST(Evaluate, MissingPredictionsAndResizing) {
  const auto samples = tiny_samples();
  EvaluateOptions opt;
  opt.metrics = {Metric::Cc};
  const auto report = evaluate(
      [&](const SaliencySample& s) -> std::optional<Tensor> {
        if (s.id == samples[1].id) return std::nullopt;
        return random_tensor({1, 8, 8}, 9, 0, 1);
      },
      samples, {"a", "b", "c"}, opt);
  EXPECT_EQ(report.missing, std::vector<std::string>{samples[1].id});
  EXPECT_EQ(report.per_sample.size(), samples.size() - 1);
  EXPECT_THROW(evaluate([](const SaliencySample& s) { return std::optional<Tensor>(s.image); }, samples,
                        {"a", "b", "c"}, opt),
               UsageError);
}

}  // namespace
}  // namespace moes
