#include "moes/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "moes/error.hpp"
#include "moes/model.hpp"
#include "moes/resample.hpp"

namespace moes {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_same_size(const Tensor& a, const Tensor& b, const char* what) {
  if (a.size() != b.size()) {
    throw UsageError(std::string(what) + ": map sizes differ (" + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()) + ")");
  }
}

bool fixated(double v) { return v > 0.5; }

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Min-shift, add eps, normalize to unit sum.
std::vector<double> as_distribution(const Tensor& map, double eps) {
  const double lo = map.min();
  std::vector<double> d(map.size());
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = map[i] - lo + eps;
    total += d[i];
  }
  for (auto& v : d) v /= total;
  return d;
}

}  // namespace

Score nss(const Tensor& pred, const Tensor& fixations) {
  require_same_size(pred, fixations, "nss");
  const double mu = mean(pred.values());
  double var = 0.0;
  for (double v : pred.values()) var += (v - mu) * (v - mu);
  const double sigma = std::sqrt(var / static_cast<double>(pred.size()));
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (fixated(fixations[i])) {
      acc += (pred[i] - mu);
      ++count;
    }
  }
  if (count == 0) return {kNaN, ScoreStatus::Undefined};
  if (!(sigma > 0.0)) return {0.0, ScoreStatus::Degenerate};
  return {acc / sigma / static_cast<double>(count), ScoreStatus::Ok};
}

Score cc(const Tensor& pred, const Tensor& density) {
  require_same_size(pred, density, "cc");
  const double ma = mean(pred.values()), mb = mean(density.values());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - ma, b = density[i] - mb;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return {0.0, ScoreStatus::Degenerate};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), ScoreStatus::Ok};
}

Score kld(const Tensor& pred, const Tensor& density, double eps) {
  require_same_size(pred, density, "kld");
  const auto p = as_distribution(pred, eps);
  const auto q = as_distribution(density, eps);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += q[i] * std::log(q[i] / p[i]);
  return {std::max(acc, 0.0), ScoreStatus::Ok};
}

Score sim(const Tensor& pred, const Tensor& density, double eps) {
  require_same_size(pred, density, "sim");
  const auto p = as_distribution(pred, eps);
  const auto q = as_distribution(density, eps);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::min(p[i], q[i]);
  return {std::clamp(acc, 0.0, 1.0), ScoreStatus::Ok};
}

double roc_auc(std::vector<double> positives, std::vector<double> negatives) {
  if (positives.empty() || negatives.empty()) return kNaN;
  std::sort(positives.begin(), positives.end(), std::greater<>());
  std::sort(negatives.begin(), negatives.end(), std::greater<>());
  // Sweep thresholds from high to low; each distinct value adds one ROC vertex.
  std::uint64_t tp = 0, fp = 0, area2 = 0;
  std::size_t i = 0, j = 0;
  while (i < positives.size() || j < negatives.size()) {
    double t = -std::numeric_limits<double>::infinity();
    if (i < positives.size()) t = positives[i];
    if (j < negatives.size()) t = std::max(t, negatives[j]);
    const std::uint64_t tp0 = tp, fp0 = fp;
    while (i < positives.size() && positives[i] == t) ++tp, ++i;
    while (j < negatives.size() && negatives[j] == t) ++fp, ++j;
    area2 += (fp - fp0) * (tp + tp0);
  }
  return static_cast<double>(area2) / (2.0 * static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

std::vector<std::size_t> sample_borji_negatives(const Tensor& fixations, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < fixations.size(); ++i) {
    if (!fixated(fixations[i])) pool.push_back(i);
  }
  if (pool.empty()) return {};
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::size_t> out(count);
  for (auto& o : out) o = pool[pick(rng)];
  return out;
}

BorjiResult auc_borji(const Tensor& pred, const Tensor& fixations, std::size_t n_splits, std::uint64_t seed) {
  require_same_size(pred, fixations, "auc_borji");
  if (n_splits == 0) throw UsageError("auc_borji needs at least one split");
  BorjiResult result;
  std::vector<double> pos;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (fixated(fixations[i])) pos.push_back(pred[i]);
  }
  if (pos.empty() || pos.size() == pred.size()) {
    result.score = {kNaN, ScoreStatus::Undefined};
    return result;
  }
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < n_splits; ++s) {
    std::vector<double> neg;
    for (auto idx : sample_borji_negatives(fixations, pos.size(), rng)) neg.push_back(pred[idx]);
    result.split_aucs.push_back(roc_auc(pos, std::move(neg)));
  }
  const double m = mean(result.split_aucs);
  double var = 0.0;
  for (double a : result.split_aucs) var += (a - m) * (a - m);
  const double n = static_cast<double>(n_splits);
  result.std_error = n > 1 ? std::sqrt(var / (n - 1)) / std::sqrt(n) : 0.0;
  result.score = {m, ScoreStatus::Ok};
  return result;
}

Score auc_judd(const Tensor& pred, const Tensor& fixations) {
  require_same_size(pred, fixations, "auc_judd");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < pred.size(); ++i) (fixated(fixations[i]) ? pos : neg).push_back(pred[i]);
  if (pos.empty() || neg.empty()) return {kNaN, ScoreStatus::Undefined};
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  // Thresholds are the distinct fixation values; the curve is closed at (1,1).
  std::uint64_t tp = 0, fp = 0, area2 = 0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < pos.size();) {
    const double t = pos[i];
    const std::uint64_t tp0 = tp, fp0 = fp;
    while (i < pos.size() && pos[i] == t) ++tp, ++i;
    while (j < neg.size() && neg[j] >= t) ++fp, ++j;
    area2 += (fp - fp0) * (tp + tp0);
  }
  const std::uint64_t P = pos.size(), N = neg.size();
  area2 += (N - fp) * (P + tp);
  return {static_cast<double>(area2) / (2.0 * static_cast<double>(P) * static_cast<double>(N)), ScoreStatus::Ok};
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::Nss: return "nss";
    case Metric::Cc: return "cc";
    case Metric::Kld: return "kld";
    case Metric::Sim: return "sim";
    case Metric::AucBorji: return "auc_borji";
    case Metric::AucJudd: return "auc_judd";
  }
  return "?";
}

const std::vector<Metric>& all_metrics() {
  static const std::vector<Metric> metrics{Metric::Nss, Metric::Cc, Metric::Kld,
                                           Metric::Sim, Metric::AucBorji, Metric::AucJudd};
  return metrics;
}

std::optional<Metric> parse_metric(const std::string& name) {
  for (auto m : all_metrics()) {
    if (metric_name(m) == name) return m;
  }
  return std::nullopt;
}

std::string valid_metric_names() {
  std::string out;
  for (auto m : all_metrics()) out += (out.empty() ? "" : ", ") + metric_name(m);
  return out;
}

namespace {

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

void MetricReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "sample_id,category,metric,value\n";
  for (const auto& r : per_sample) os << r.sample_id << ',' << r.category << ',' << r.metric << ',' << format_value(r.value) << '\n';
}

void MetricReport::write_aggregate_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "category,metric,mean,n\n";
  for (const auto& a : aggregates) os << a.category << ',' << a.metric << ',' << format_value(a.mean) << ',' << a.n << '\n';
}

std::optional<double> MetricReport::overall(const std::string& metric) const {
  for (const auto& a : aggregates) {
    if (a.category == "all" && a.metric == metric) return a.mean;
  }
  return std::nullopt;
}

MetricReport evaluate(const PredictionSource& source, const std::vector<SaliencySample>& samples,
                      const std::vector<std::string>& category_names, const EvaluateOptions& options) {
  if (options.metrics.empty()) throw UsageError("no metrics requested");
  MetricReport report;
  // Accumulators keyed by (category index, metric position); category index K means "all".
  const std::size_t K = category_names.size();
  std::vector<std::vector<double>> sums((K + 1) * options.metrics.size(), std::vector<double>());
  auto slot = [&](std::size_t cat, std::size_t m) -> std::vector<double>& { return sums[cat * options.metrics.size() + m]; };

  for (const auto& sample : samples) {
    if (sample.category >= K) throw UsageError("sample " + sample.id + " has a category outside the name list");
    auto pred = source(sample);
    if (!pred) {
      report.missing.push_back(sample.id);
      continue;
    }
    Tensor map = *pred;
    if (map.rank() == 4) map = map.reshaped({map.dim(1), map.dim(2), map.dim(3)});
    if (map.rank() != 3 || map.dim(0) != 1) throw UsageError("prediction for " + sample.id + " is not a single map");
    map = resize_bilinear(map, sample.density.dim(1), sample.density.dim(2));
    const std::uint64_t sample_seed = options.seed ^ fnv1a64(sample.id);
    for (std::size_t m = 0; m < options.metrics.size(); ++m) {
      MetricRow row{sample.id, category_names[sample.category], metric_name(options.metrics[m])};
      Score s;
      switch (options.metrics[m]) {
        case Metric::Nss: s = nss(map, sample.fixations); break;
        case Metric::Cc: s = cc(map, sample.density); break;
        case Metric::Kld: s = kld(map, sample.density); break;
        case Metric::Sim: s = sim(map, sample.density); break;
        case Metric::AucBorji: {
          auto b = auc_borji(map, sample.fixations, options.borji_splits, sample_seed);
          s = b.score;
          row.std_error = b.std_error;
          break;
        }
        case Metric::AucJudd: s = auc_judd(map, sample.fixations); break;
      }
      row.value = s.value;
      row.status = s.status;
      if (s.status != ScoreStatus::Undefined) {
        slot(sample.category, m).push_back(s.value);
        slot(K, m).push_back(s.value);
      }
      report.per_sample.push_back(std::move(row));
    }
  }

  auto add_aggregates = [&](std::size_t cat, const std::string& name) {
    for (std::size_t m = 0; m < options.metrics.size(); ++m) {
      auto& values = slot(cat, m);
      if (values.empty()) continue;
      // Sort so the sum does not depend on sample order.
      std::sort(values.begin(), values.end());
      report.aggregates.push_back({name, metric_name(options.metrics[m]), mean(values), values.size()});
    }
  };
  for (std::size_t k = 0; k < K; ++k) add_aggregates(k, category_names[k]);
  add_aggregates(K, "all");
  return report;
}

}  // namespace moes
