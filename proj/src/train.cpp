#include "moes/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <thread>

#include "moes/adadelta.hpp"
#include "moes/error.hpp"
#include "moes/metrics.hpp"
#include "moes/resample.hpp"

namespace moes {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip_prob must lie in [0,1]");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must lie in (0,1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"patience", c.patience}, {"flip_prob", c.flip_prob},
          {"max_epochs", c.max_epochs}, {"seed", c.seed},         {"rho", c.rho},
          {"eps", c.eps},               {"freeze_gating", c.freeze_gating}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("train section must be a JSON object");
  json merged = to_json(base);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!merged.contains(it.key())) throw ConfigError("unknown key '" + it.key() + "' in train");
    merged[it.key()] = it.value();
  }
  TrainConfig c;
  try {
    c.batch_size = merged.at("batch_size").get<std::size_t>();
    c.patience = merged.at("patience").get<std::size_t>();
    c.flip_prob = merged.at("flip_prob").get<double>();
    c.max_epochs = merged.at("max_epochs").get<std::size_t>();
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.rho = merged.at("rho").get<double>();
    c.eps = merged.at("eps").get<double>();
    c.freeze_gating = merged.at("freeze_gating").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<SaliencySample> hflip_augment(std::vector<SaliencySample> batch, double flip_prob, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(flip_prob);
  for (auto& s : batch) {
    if (!coin(rng)) continue;
    hflip_in_place(s.image);
    hflip_in_place(s.density);
    hflip_in_place(s.fixations);
    for (auto& b : s.blobs) b.cx = static_cast<double>(s.image.dim(2) - 1) - b.cx;
  }
  return batch;
}

bool EarlyStopping::update(double value) {
  if (value < best_) {
    best_ = value;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

Tensor stack_images(const std::vector<SaliencySample>& samples, std::size_t begin, std::size_t end) {
  const Tensor& first = samples.at(begin).image;
  const std::size_t per = first.size();
  Tensor out({end - begin, first.dim(0), first.dim(1), first.dim(2)});
  for (std::size_t i = begin; i < end; ++i) {
    if (samples[i].image.shape() != first.shape()) throw UsageError("samples in a batch differ in image shape");
    std::copy(samples[i].image.values().begin(), samples[i].image.values().end(), out.data() + (i - begin) * per);
  }
  return out;
}

namespace {

// Ground truth at the model's output resolution, max-normalized.
Tensor saliency_target(const SaliencySample& s, const ModelConfig& c) {
  return max_normalized(downsample_area(s.density, c.output_h(), c.output_w()));
}

struct Batch {
  Tensor images, targets, classes;
};

Batch make_batch(const std::vector<SaliencySample>& samples, const ModelConfig& c) {
  Batch b;
  const std::size_t n = samples.size(), K = c.num_experts;
  const std::size_t oh = c.output_h(), ow = c.output_w();
  b.images = stack_images(samples, 0, n);
  b.targets = Tensor({n, 1, oh, ow});
  b.classes = Tensor({n, K});
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor y = saliency_target(samples[i], c);
    std::copy(y.values().begin(), y.values().end(), b.targets.data() + i * oh * ow);
    if (K == 1) {
      b.classes[i] = 1.0;
    } else {
      if (samples[i].category >= K) {
        throw ConfigError("sample " + samples[i].id + " has category " + std::to_string(samples[i].category) +
                          " but the model has " + std::to_string(K) + " experts");
      }
      b.classes[i * K + samples[i].category] = 1.0;
    }
  }
  return b;
}

std::vector<SaliencySample> gather(const std::vector<SaliencySample>& samples, const std::vector<std::size_t>& order,
                                   std::size_t begin, std::size_t end) {
  std::vector<SaliencySample> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(samples[order[i]]);
  return out;
}

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  const std::size_t K = t.dim(1);
  const double* p = t.data() + row * K;
  return static_cast<std::size_t>(std::max_element(p, p + K) - p);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

Evaluation evaluate_model(Model& model, const std::vector<SaliencySample>& samples, std::size_t batch_size) {
  if (samples.empty()) throw UsageError("cannot evaluate on an empty set");
  const auto& c = model.config();
  Graph& g = model.graph();
  Evaluation e;
  std::size_t correct = 0;
  double nss_sum = 0.0;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    const auto chunk = gather(samples, order, start, end);
    const Batch b = make_batch(chunk, c);
    g.clear_tape();
    const ModelOutput out = model.forward(b.images);
    const Var loss = total_loss(g, out, b.targets, b.classes, c);
    e.loss += loss->value[0] * static_cast<double>(end - start);
    const Tensor maps = clamp_for_export(out.saliency->value);
    const std::size_t plane = c.output_h() * c.output_w();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      if (argmax_row(out.gate_probs_1->value, i) == chunk[i].category) ++correct;
      Tensor m({1, c.output_h(), c.output_w()},
               std::vector<double>(maps.data() + i * plane, maps.data() + (i + 1) * plane));
      m = resize_bilinear(m, chunk[i].fixations.dim(1), chunk[i].fixations.dim(2));
      nss_sum += nss(m, chunk[i].fixations).value;
    }
  }
  g.clear_tape();
  const auto n = static_cast<double>(samples.size());
  e.loss /= n;
  e.class_accuracy = c.num_experts == 1 ? std::nan("") : static_cast<double>(correct) / n;
  e.nss = nss_sum / n;
  return e;
}

TrainResult train(Model& model, const std::vector<SaliencySample>& train_set,
                  const std::vector<SaliencySample>& val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw ConfigError("training and validation sets must be nonempty");
  const auto& c = model.config();
  Graph& g = model.graph();
  Adadelta optimizer(g, config.rho, config.eps);
  if (config.freeze_gating) {
    for (const auto& name : model.gating_parameter_names()) optimizer.freeze(name);
  }
  // Shuffling and flips draw from their own stream, independent of weight init.
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    0x5eedu, 0xda7au};
  std::mt19937_64 data_rng(seq);

  TrainResult result;
  result.best_parameters = g.flat_parameters();
  EarlyStopping stopper(config.patience);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), data_rng);
    double train_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      auto chunk = hflip_augment(gather(train_set, order, start, end), config.flip_prob, data_rng);
      const Batch b = make_batch(chunk, c);
      g.clear_tape();
      g.zero_grad();
      const ModelOutput out = model.forward(b.images);
      const Var loss = total_loss(g, out, b.targets, b.classes, c);
      const double value = loss->value[0];
      bool ok = std::isfinite(value);
      if (ok) {
        g.backward(loss);
        try {
          optimizer.step(g);
        } catch (const NumericError& err) {
          ok = false;
          result.message = err.what();
        }
      }
      if (!ok) {
        g.clear_tape();
        g.set_flat_parameters(result.best_parameters);
        result.diverged = true;
        if (result.message.empty()) result.message = "non-finite training loss in epoch " + std::to_string(epoch);
        return result;
      }
      train_loss += value * static_cast<double>(end - start);
    }
    g.clear_tape();
    const Evaluation val = evaluate_model(model, val_set, config.batch_size);
    result.log.push_back({epoch, train_loss / static_cast<double>(order.size()), val.loss, val.class_accuracy, val.nss});
    if (!std::isfinite(val.loss)) {
      g.set_flat_parameters(result.best_parameters);
      result.diverged = true;
      result.message = "non-finite validation loss in epoch " + std::to_string(epoch);
      return result;
    }
    if (stopper.update(val.loss)) {
      result.best_parameters = g.flat_parameters();
      result.best_epoch = epoch;
      result.best_val_loss = val.loss;
    }
    if (stopper.should_stop()) break;
  }
  g.set_flat_parameters(result.best_parameters);
  return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "epoch,train_loss,val_loss,val_class_acc,val_nss\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_loss) << ',' << fmt(e.val_class_acc) << ','
       << fmt(e.val_nss) << '\n';
  }
}

Tensor predict_saliency(Model& model, const std::vector<SaliencySample>& samples, std::size_t batch_size) {
  const auto& c = model.config();
  const std::size_t plane = c.output_h() * c.output_w();
  Tensor out({samples.size(), 1, c.output_h(), c.output_w()});
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    model.graph().clear_tape();
    const auto o = model.forward(stack_images(samples, start, end));
    const Tensor maps = clamp_for_export(o.saliency->value);
    std::copy(maps.values().begin(), maps.values().end(), out.data() + start * plane);
  }
  model.graph().clear_tape();
  return out;
}

Tensor predict_gates(Model& model, const std::vector<SaliencySample>& samples, std::size_t batch_size) {
  const std::size_t K = model.config().num_experts;
  Tensor out({samples.size(), K});
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    model.graph().clear_tape();
    const auto o = model.forward(stack_images(samples, start, end));
    std::copy(o.gate_probs_tau->value.values().begin(), o.gate_probs_tau->value.values().end(),
              out.data() + start * K);
  }
  model.graph().clear_tape();
  return out;
}

std::vector<std::vector<std::size_t>> confusion_matrix(Model& model, const std::vector<SaliencySample>& samples) {
  const std::size_t K = model.config().num_experts;
  std::vector<std::vector<std::size_t>> m(K, std::vector<std::size_t>(K, 0));
  for (std::size_t start = 0; start < samples.size(); start += 8) {
    const std::size_t end = std::min(samples.size(), start + 8);
    model.graph().clear_tape();
    const auto o = model.forward(stack_images(samples, start, end));
    for (std::size_t i = start; i < end; ++i) {
      if (samples[i].category < K) ++m[samples[i].category][argmax_row(o.gate_probs_1->value, i - start)];
    }
  }
  model.graph().clear_tape();
  return m;
}

void write_confusion_csv(const std::filesystem::path& path, const std::vector<std::vector<std::size_t>>& matrix,
                         const std::vector<std::string>& names) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  auto name = [&](std::size_t k) { return k < names.size() ? names[k] : "c" + std::to_string(k); };
  os << "true\\predicted";
  for (std::size_t k = 0; k < matrix.size(); ++k) os << ',' << name(k);
  os << '\n';
  for (std::size_t r = 0; r < matrix.size(); ++r) {
    os << name(r);
    for (auto v : matrix[r]) os << ',' << v;
    os << '\n';
  }
}

std::vector<std::vector<std::size_t>> ensemble_subsets(std::size_t train_size, std::size_t n_members, double subsample,
                                                       std::uint64_t seed) {
  if (!(subsample > 0.0 && subsample <= 1.0)) throw ConfigError("subsample must lie in (0,1]");
  if (n_members == 0) throw ConfigError("an ensemble needs at least one member");
  const auto take = static_cast<std::size_t>(std::floor(subsample * static_cast<double>(train_size)));
  if (take == 0) throw ConfigError("subsample leaves an empty training set");
  std::vector<std::vector<std::size_t>> subsets;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> all(train_size);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t m = 0; m < n_members; ++m) {
    std::vector<std::size_t> subset;
    for (int attempt = 0; attempt < 64; ++attempt) {
      auto shuffled = all;
      if (take < train_size) std::shuffle(shuffled.begin(), shuffled.end(), rng);
      subset.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(take));
      std::sort(subset.begin(), subset.end());
      if (take == train_size || std::find(subsets.begin(), subsets.end(), subset) == subsets.end()) break;
    }
    subsets.push_back(std::move(subset));
  }
  return subsets;
}

std::vector<Model> train_ensemble(const ModelConfig& model_config, const std::vector<SaliencySample>& train_set,
                                  const std::vector<SaliencySample>& val_set, std::size_t n_members, double subsample,
                                  const TrainConfig& config, std::uint64_t seed, std::vector<EnsembleMember>* members,
                                  std::size_t threads) {
  const auto subsets = ensemble_subsets(train_set.size(), n_members, subsample, seed);
  std::vector<Model> models;
  std::vector<EnsembleMember> info(n_members);
  for (std::size_t m = 0; m < n_members; ++m) models.emplace_back(model_config, seed + m);

  auto run = [&](std::size_t m) {
    std::vector<SaliencySample> subset;
    for (auto i : subsets[m]) subset.push_back(train_set[i]);
    TrainConfig member_config = config;
    member_config.seed = config.seed + m;
    info[m].subset = subsets[m];
    info[m].result = train(models[m], subset, val_set, member_config);
  };
  // Members are independent graphs; results do not depend on the thread count.
  threads = std::max<std::size_t>(1, std::min(threads, n_members));
  if (threads == 1) {
    for (std::size_t m = 0; m < n_members; ++m) run(m);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t m = t; m < n_members; m += threads) run(m);
      });
    }
    for (auto& th : pool) th.join();
  }
  if (members) *members = std::move(info);
  return models;
}

Tensor average_maps(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw UsageError("average_maps needs at least one map");
  Tensor out(maps.front().shape(), 0.0);
  for (const auto& m : maps) {
    if (m.shape() != out.shape()) throw UsageError("average_maps: shapes differ");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += m[i];
  }
  for (auto& v : out.values()) v /= static_cast<double>(maps.size());
  return out;
}

std::size_t thread_cap() {
  const char* env = std::getenv("MOES_THREADS");
  if (!env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  return v > 0 ? static_cast<std::size_t>(v) : 1;
}

}  // namespace moes
