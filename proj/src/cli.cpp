#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "moes/cli.hpp"
#include "moes/error.hpp"
#include "moes/grad_check.hpp"
#include "moes/image_io.hpp"
#include "moes/model.hpp"
#include "moes/resample.hpp"

namespace moes {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Signals a failed check (exit code 1) after its report was printed.
struct CheckFailed {
  std::string message;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << text;
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct Outputs {
  fs::path dir;
  std::string command;
  std::vector<std::string> args;
  std::string started = utc_now();

  void begin(const RunConfig& config) const {
    fs::create_directories(dir);
    write_text(dir / "config.resolved.json", to_json(config).dump(2) + "\n");
  }
  // Timestamps live only here so every other output is reproducible.
  void finish(int status) const {
    json meta = {{"command", command}, {"args", args}, {"started", started}, {"finished", utc_now()},
                 {"exit_code", status}};
    write_text(dir / "run.meta", meta.dump(2) + "\n");
  }
};

struct Splits {
  Dataset dataset;
  std::vector<SaliencySample> train, val, test;
};

fs::path resolve_data_root(const RunConfig& config, const std::string& flag) {
  const std::string root = flag.empty() ? config.data_root : flag;
  if (root.empty()) throw ConfigError("no dataset given (use --data or data.root)");
  if (!fs::exists(fs::path(root) / "manifest.json")) throw ConfigError("no dataset at " + root);
  return root;
}

Splits load_splits(const RunConfig& config, const fs::path& root) {
  Splits s;
  s.dataset = load_dataset(root);
  if (s.dataset.samples.empty()) throw ConfigError("dataset at " + root.string() + " is empty");
  const auto folds = split_folds(categories_of(s.dataset.samples), config.split.n_folds, config.seed,
                                 config.split.val_fraction);
  const FoldSplit& f = folds.at(config.split.fold);
  for (std::size_t i : f.train) s.train.push_back(s.dataset.samples[i]);
  for (std::size_t i : f.val) s.val.push_back(s.dataset.samples[i]);
  for (std::size_t i : f.test) s.test.push_back(s.dataset.samples[i]);
  return s;
}

void check_input_shape(const ModelConfig& model, const Tensor& image, const std::string& what) {
  if (image.rank() != 3 || image.dim(0) != model.input_channels || image.dim(1) != model.input_h ||
      image.dim(2) != model.input_w) {
    throw ConfigError(what + " has shape " + shape_to_string(image.shape()) + " but the model expects [" +
                      std::to_string(model.input_channels) + "," + std::to_string(model.input_h) + "," +
                      std::to_string(model.input_w) + "]");
  }
}

json ids_of(const std::vector<SaliencySample>& samples) {
  json ids = json::array();
  for (const auto& s : samples) ids.push_back(s.id);
  return ids;
}

std::vector<Model> load_checkpoints(const std::vector<std::string>& paths) {
  std::vector<Model> models;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw ConfigError("no checkpoint at " + p);
    models.push_back(load_checkpoint(p));
  }
  const ModelConfig& first = models.front().config();
  for (const auto& m : models) {
    if (m.config().input_h != first.input_h || m.config().input_w != first.input_w ||
        m.config().input_channels != first.input_channels || m.config().output_h() != first.output_h() ||
        m.config().output_w() != first.output_w()) {
      throw ConfigError("checkpoints disagree on input or output resolution");
    }
  }
  return models;
}

std::string image_stem(const fs::path& path) {
  std::string name = path.filename().string();
  for (const char* suffix : {".img.pgm", ".pgm", ".ppm"}) {
    const std::string s = suffix;
    if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) {
      return name.substr(0, name.size() - s.size());
    }
  }
  return path.stem().string();
}

Tensor minmax_preview(const Tensor& map) {
  Tensor out = map;
  const double lo = map.min(), hi = map.max();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = hi > lo ? (map[i] - lo) / (hi - lo) : 0.0;
  return out;
}

void print_table(std::ostream& out, const MetricReport& report, const std::vector<std::string>& categories,
                 const std::vector<Metric>& metrics) {
  std::map<std::pair<std::string, std::string>, double> cell;
  for (const auto& a : report.aggregates) cell[{a.category, a.metric}] = a.mean;
  std::size_t width = 8;
  for (const auto& c : categories) width = std::max(width, c.size() + 2);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), "category");
  out << buf;
  for (Metric m : metrics) {
    std::snprintf(buf, sizeof buf, "%11s", metric_name(m).c_str());
    out << buf;
  }
  out << "\n";
  auto row = [&](const std::string& name) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), name.c_str());
    out << buf;
    for (Metric m : metrics) {
      const auto it = cell.find({name, metric_name(m)});
      std::snprintf(buf, sizeof buf, "%11s", it == cell.end() ? "-" : fmt(it->second, "%.4f").c_str());
      out << buf;
    }
    out << "\n";
  };
  for (const auto& c : categories) row(c);
  row("all");
}

std::vector<Metric> parse_metric_list(const std::string& list) {
  std::vector<Metric> metrics;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    const auto m = parse_metric(name);
    if (!m) throw ConfigError("unknown metric '" + name + "'; valid names: " + valid_metric_names());
    metrics.push_back(*m);
  }
  if (metrics.empty()) throw ConfigError("empty metric list; valid names: " + valid_metric_names());
  return metrics;
}

// ---- gen-data ----

void cmd_gen_data(const RunConfig& config, const Outputs& outputs, std::ostream& out) {
  config.data.validate();
  const auto samples = generate(config.data);
  outputs.begin(config);
  write_dataset(outputs.dir, config.data, samples);
  out << "wrote " << samples.size() << " samples in " << config.data.num_categories << " categories to "
      << outputs.dir.string() << "\n";
}

// ---- train ----

struct TrainFlags {
  std::string data;
  bool single_expert = false;
  std::size_t ensemble = 0;
  bool freeze_gating = false;
};

void write_split(const fs::path& path, const Splits& s) {
  json j = {{"train", ids_of(s.train)}, {"val", ids_of(s.val)}, {"test", ids_of(s.test)}};
  write_text(path, j.dump(1) + "\n");
}

void report_result(std::ostream& out, const std::string& label, const TrainResult& r) {
  out << label << ": " << r.log.size() << " epochs, best epoch " << r.best_epoch << ", val loss "
      << fmt(r.best_val_loss) << "\n";
  if (!r.message.empty()) out << label << ": " << r.message << "\n";
}

void cmd_train(RunConfig config, const TrainFlags& flags, const Outputs& outputs, std::ostream& out) {
  if (flags.single_expert) {
    config.model.num_experts = 1;
    config.model.lambda_c = 0.0;
  }
  if (flags.freeze_gating) config.train.freeze_gating = true;
  if (flags.ensemble > 0) config.ensemble.members = flags.ensemble;
  config.model.validate();
  config.train.validate();
  const fs::path root = resolve_data_root(config, flags.data);
  config.data_root = root.string();
  const Splits s = load_splits(config, root);
  check_input_shape(config.model, s.dataset.samples.front().image, "dataset image");
  if (config.model.num_experts != 1 && config.model.num_experts != s.dataset.categories.size()) {
    throw ConfigError("model has " + std::to_string(config.model.num_experts) + " experts but the dataset has " +
                      std::to_string(s.dataset.categories.size()) + " categories");
  }
  if (s.train.empty() || s.val.empty()) throw ConfigError("split leaves an empty training or validation set");

  outputs.begin(config);
  write_split(outputs.dir / "split.json", s);
  out << "train " << s.train.size() << " / val " << s.val.size() << " / test " << s.test.size() << " samples, K="
      << config.model.num_experts << "\n";

  bool diverged = false;
  if (flags.ensemble > 0) {
    std::vector<EnsembleMember> members;
    auto models = train_ensemble(config.model, s.train, s.val, flags.ensemble, config.ensemble.subsample,
                                 config.train, config.seed, &members, thread_cap());
    json index = json::array();
    for (std::size_t m = 0; m < models.size(); ++m) {
      const fs::path dir = outputs.dir / ("member_" + std::to_string(m));
      fs::create_directories(dir);
      save_checkpoint(dir / "model.best", models[m]);
      write_training_log(dir / "log.csv", members[m].result.log);
      report_result(out, "member " + std::to_string(m), members[m].result);
      diverged = diverged || members[m].result.diverged;
      index.push_back({{"checkpoint", "member_" + std::to_string(m) + "/model.best"},
                       {"subset_size", members[m].subset.size()}});
    }
    write_text(outputs.dir / "ensemble.json", json{{"members", index}}.dump(2) + "\n");
  } else {
    Model model(config.model, config.seed);
    save_checkpoint(outputs.dir / "model.init", model);
    const TrainResult r = train(model, s.train, s.val, config.train);
    save_checkpoint(outputs.dir / "model.best", model);
    write_training_log(outputs.dir / "log.csv", r.log);
    report_result(out, "model", r);
    diverged = r.diverged;
  }
  if (diverged) throw CheckFailed{"training diverged; the last good checkpoint was kept"};
}

// ---- predict ----

void cmd_predict(const RunConfig& config, const std::vector<std::string>& checkpoints,
                 const std::vector<std::string>& images, const Outputs& outputs, std::ostream& out) {
  auto models = load_checkpoints(checkpoints);
  const ModelConfig& mc = models.front().config();
  std::vector<std::pair<std::string, Tensor>> inputs;
  for (const auto& p : images) {
    if (!fs::exists(p)) throw ConfigError("no image at " + p);
    Tensor img = read_image_pgm(p);
    check_input_shape(mc, img, p);
    inputs.emplace_back(image_stem(p), std::move(img));
  }
  outputs.begin(config);
  const std::size_t K = models.front().config().num_experts;
  bool same_k = true;
  for (const auto& m : models) same_k = same_k && m.config().num_experts == K;
  if (!same_k) throw ConfigError("checkpoints disagree on the number of experts");

  std::ofstream gates(outputs.dir / "gates.csv", std::ios::binary);
  gates << "image";
  for (std::size_t k = 0; k < K; ++k) gates << ",gate_" << k;
  gates << "\n";
  for (const auto& [stem, img] : inputs) {
    Tensor batch = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    std::vector<Tensor> maps;
    std::vector<double> g(K, 0.0);
    for (auto& m : models) {
      m.graph().clear_tape();
      const auto o = m.forward(batch);
      maps.push_back(clamp_for_export(o.saliency->value).reshaped({1, mc.output_h(), mc.output_w()}));
      for (std::size_t k = 0; k < K; ++k) g[k] += o.gate_probs_tau->value[k] / static_cast<double>(models.size());
      m.graph().clear_tape();
    }
    const Tensor map = average_maps(maps);
    write_density_pfm(outputs.dir / (stem + ".sal.pfm"), map);
    write_image_pgm(outputs.dir / (stem + ".sal.pgm"), minmax_preview(map));
    gates << stem;
    for (double v : g) gates << "," << fmt(v, "%.17g");
    gates << "\n";
  }
  out << "wrote " << inputs.size() << " saliency maps to " << outputs.dir.string() << "\n";
}

// ---- eval ----

struct EvalFlags {
  std::string data;
  std::vector<std::string> checkpoints;
  std::string maps;
  std::string metrics;
  std::string subset = "test";
};

std::map<std::string, fs::path> index_maps(const fs::path& dir) {
  // Preference when several files share an id: .sal.pfm, .density.pfm, .pfm.
  std::map<std::string, std::pair<int, fs::path>> found;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    int rank = -1;
    std::string id;
    for (auto [suffix, r] : {std::pair<std::string, int>{".sal.pfm", 0}, {".density.pfm", 1}, {".pfm", 2}}) {
      if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        rank = r;
        id = name.substr(0, name.size() - suffix.size());
        break;
      }
    }
    if (rank < 0) continue;
    auto it = found.find(id);
    if (it == found.end() || rank < it->second.first ||
        (rank == it->second.first && entry.path() < it->second.second)) {
      found[id] = {rank, entry.path()};
    }
  }
  std::map<std::string, fs::path> out;
  for (auto& [id, v] : found) out[id] = v.second;
  return out;
}

void cmd_eval(RunConfig config, const EvalFlags& flags, const Outputs& outputs, std::ostream& out) {
  if (flags.checkpoints.empty() == flags.maps.empty()) {
    throw ConfigError("eval needs exactly one prediction source: --checkpoint or --maps");
  }
  if (!flags.metrics.empty()) config.metrics.metrics = parse_metric_list(flags.metrics);
  const fs::path root = resolve_data_root(config, flags.data);
  config.data_root = root.string();
  const Splits s = load_splits(config, root);
  const std::vector<SaliencySample>* subset = nullptr;
  if (flags.subset == "test") {
    subset = &s.test;
  } else if (flags.subset == "val") {
    subset = &s.val;
  } else if (flags.subset == "train") {
    subset = &s.train;
  } else if (flags.subset == "all") {
    subset = &s.dataset.samples;
  } else {
    throw ConfigError("unknown subset '" + flags.subset + "' (expected train, val, test or all)");
  }
  const auto& samples = *subset;

  std::map<std::string, Tensor> predictions;
  std::optional<std::vector<std::vector<std::size_t>>> confusion;
  if (!flags.checkpoints.empty()) {
    auto models = load_checkpoints(flags.checkpoints);
    const ModelConfig& mc = models.front().config();
    check_input_shape(mc, samples.empty() ? s.dataset.samples.front().image : samples.front().image,
                      "dataset image");
    std::vector<Tensor> stacked;
    for (auto& m : models) stacked.push_back(predict_saliency(m, samples));
    const Tensor avg = average_maps(stacked);
    const std::size_t plane = mc.output_h() * mc.output_w();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      predictions.emplace(samples[i].id, Tensor({1, mc.output_h(), mc.output_w()},
                                                std::vector<double>(avg.data() + i * plane,
                                                                    avg.data() + (i + 1) * plane)));
    }
    if (models.size() == 1 && mc.num_experts == s.dataset.categories.size() && mc.num_experts > 1) {
      confusion = confusion_matrix(models.front(), samples);
    }
  } else {
    if (!fs::is_directory(flags.maps)) throw ConfigError("no map directory at " + flags.maps);
    const auto index = index_maps(flags.maps);
    for (const auto& smp : samples) {
      const auto it = index.find(smp.id);
      if (it != index.end()) predictions.emplace(smp.id, read_density_pfm(it->second));
    }
  }
  if (predictions.empty()) throw ConfigError("no predictions overlap the evaluated samples");

  PredictionSource source = [&](const SaliencySample& smp) -> std::optional<Tensor> {
    const auto it = predictions.find(smp.id);
    if (it == predictions.end()) return std::nullopt;
    return it->second;
  };
  EvaluateOptions options;
  options.metrics = config.metrics.metrics;
  options.borji_splits = config.metrics.borji_splits;
  options.seed = config.metrics.seed;
  const MetricReport report = evaluate(source, samples, s.dataset.categories, options);

  outputs.begin(config);
  report.write_csv(outputs.dir / "metrics.csv");
  report.write_aggregate_csv(outputs.dir / "aggregates.csv");
  out << "evaluated " << samples.size() - report.missing.size() << " of " << samples.size() << " " << flags.subset
      << " samples\n";
  if (!report.missing.empty()) out << report.missing.size() << " samples had no prediction and were excluded\n";
  print_table(out, report, s.dataset.categories, config.metrics.metrics);
  if (confusion) {
    write_confusion_csv(outputs.dir / "confusion.csv", *confusion, s.dataset.categories);
    std::size_t hits = 0, total = 0;
    for (std::size_t r = 0; r < confusion->size(); ++r) {
      for (std::size_t c = 0; c < (*confusion)[r].size(); ++c) {
        total += (*confusion)[r][c];
        if (r == c) hits += (*confusion)[r][c];
      }
    }
    out << "gating accuracy " << fmt(total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0, "%.4f")
        << " (" << hits << "/" << total << ")\n";
  }
}

// ---- gradcheck ----

ModelConfig miniature(const ModelConfig& base) {
  ModelConfig c;
  c.input_h = 8;
  c.input_w = 8;
  c.input_channels = 3;
  c.kernel_size = 3;
  c.trunk_stages = {{{2}, ops::PoolSpec{2, 2, false}}, {{3}, ops::PoolSpec{2, 1, true}}, {{3}, std::nullopt}};
  c.concat_stages = {0, 1, 2};
  c.num_experts = 3;
  c.expert_conv1_filters = 2;
  c.expert_conv2_filters = 2;
  c.gating_downsample = 2;
  c.gating_conv_filters = {2};
  c.gating_pool = ops::PoolSpec{2, 2, false};
  c.gating_dense_units = {4};
  c.tau = base.tau;
  c.lambda_s = base.lambda_s;
  c.lambda_c = base.lambda_c > 0.0 ? base.lambda_c : 1.0;
  c.lambda_cb = base.lambda_cb > 0.0 ? base.lambda_cb : 1.0;
  c.alpha = base.alpha;
  c.cb_h = 2;
  c.cb_w = 2;
  c.validate();
  return c;
}

std::string group_of(const std::string& name) {
  const auto dot = name.find('.');
  const std::string head = name.substr(0, dot);
  if (head.rfind("expert", 0) == 0) return "experts";
  return head;
}

void cmd_gradcheck(const RunConfig& config, double fault, const Outputs& outputs, std::ostream& out) {
  const ModelConfig mc = miniature(config.model);
  Model model(mc, config.seed);
  model.set_gradient_fault(fault);
  std::mt19937_64 rng(config.seed ^ 0x9c0ffeeULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Move the center bias off its all-ones init and keep expert outputs
  // positive so the normalizing max stays away from its floor.
  for (const auto& p : model.graph().parameters()) {
    if (p->name == "center_bias") {
      for (double& v : p->value.values()) v = 0.5 + unit(rng);
    } else if (p->name.find("conv_e2.bias") != std::string::npos) {
      p->value.fill(0.5);
    }
  }
  const std::size_t N = 2;
  Tensor images({N, mc.input_channels, mc.input_h, mc.input_w});
  for (double& v : images.values()) v = unit(rng);
  Tensor y({N, 1, mc.output_h(), mc.output_w()});
  for (double& v : y.values()) v = unit(rng);
  Tensor targets({N, mc.num_experts}, 0.0);
  for (std::size_t n = 0; n < N; ++n) targets[n * mc.num_experts + n % mc.num_experts] = 1.0;

  const LossFunction loss = [&](Graph& g) {
    const auto o = model.forward(images);
    return total_loss(g, o, y, targets, mc);
  };
  outputs.begin(config);
  const double tolerance = 1e-3;
  double gate = 0.0;
  json report = json::array();
  for (double eps : {1e-3, 1e-4, 1e-5}) {
    GradCheckOptions opt;
    opt.epsilon = eps;
    opt.tolerance = tolerance;
    const GradCheckReport r = grad_check(model.graph(), loss, opt);
    std::map<std::string, double> worst;
    for (const auto& e : r.entries) worst[group_of(e.name)] = std::max(worst[group_of(e.name)], e.max_rel_error);
    out << "epsilon " << fmt(eps, "%.0e") << ": max relative error " << fmt(r.max_rel_error, "%.3e") << "\n";
    json groups = json::object();
    for (const auto& [group, err] : worst) {
      out << "  " << group << " " << fmt(err, "%.3e") << "\n";
      groups[group] = err;
    }
    report.push_back({{"epsilon", eps}, {"max_rel_error", r.max_rel_error}, {"groups", groups}});
    if (eps == 1e-4) gate = r.max_rel_error;
  }
  write_text(outputs.dir / "gradcheck.json", report.dump(2) + "\n");
  if (!(gate <= tolerance)) {
    throw CheckFailed{"max relative error " + fmt(gate, "%.3e") + " at epsilon 1e-4 exceeds " +
                      fmt(tolerance, "%.0e")};
  }
  out << "gradient check passed (tolerance " << fmt(tolerance, "%.0e") << " at epsilon 1e-4)\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixture-of-experts saliency prediction", "moes"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run config");
  app.add_option("--seed", seed, "Seed for data, initialization, training and metrics");
  app.add_option("--out", out_dir, "Output directory");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");

  TrainFlags tflags;
  auto* tr = app.add_subcommand("train", "Train a model, a single-expert baseline or an ensemble");
  tr->add_option("--data", tflags.data, "Dataset root");
  tr->add_flag("--single-expert", tflags.single_expert, "One expert and no class loss");
  tr->add_option("--ensemble", tflags.ensemble, "Train an averaging ensemble of n members")->check(CLI::PositiveNumber);
  tr->add_flag("--freeze-gating", tflags.freeze_gating, "Keep gating parameters at their initial values");

  std::vector<std::string> pcheckpoints, pimages;
  auto* pr = app.add_subcommand("predict", "Write saliency maps and gate probabilities for images");
  pr->add_option("--checkpoint", pcheckpoints, "Checkpoint; repeat to average an ensemble")
      ->required()
      ->allow_extra_args(false)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  pr->add_option("images", pimages, "Input PGM/PPM images")->required();

  EvalFlags eflags;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint or a map directory against a dataset");
  ev->add_option("--data", eflags.data, "Dataset root");
  ev->add_option("--checkpoint", eflags.checkpoints, "Checkpoint; repeat to average an ensemble")
      ->allow_extra_args(false)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ev->add_option("--maps", eflags.maps, "Directory of <id>.sal.pfm maps");
  ev->add_option("--metrics", eflags.metrics, "Comma-separated metric names");
  ev->add_option("--subset", eflags.subset, "train, val, test or all");

  double fault = 1.0;
  auto* gc = app.add_subcommand("gradcheck", "Check analytic gradients of a miniature model");
  gc->add_option("--fault", fault, "Scale the center-bias gradient (negative control)")->group("");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  Outputs outputs;
  outputs.args = args;
  int status = 0;
  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) config.set_seed(*seed);
    if (!out_dir.empty()) config.output_dir = out_dir;
    outputs.dir = config.output_dir;
    if (gen->parsed()) {
      outputs.command = "gen-data";
      cmd_gen_data(config, outputs, out);
    } else if (tr->parsed()) {
      outputs.command = "train";
      cmd_train(config, tflags, outputs, out);
    } else if (pr->parsed()) {
      outputs.command = "predict";
      cmd_predict(config, pcheckpoints, pimages, outputs, out);
    } else if (ev->parsed()) {
      outputs.command = "eval";
      cmd_eval(config, eflags, outputs, out);
    } else if (gc->parsed()) {
      outputs.command = "gradcheck";
      cmd_gradcheck(config, fault, outputs, out);
    }
  } catch (const CheckFailed& e) {
    err << "check failed: " << e.message << "\n";
    status = 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return 1;
  }
  if (fs::is_directory(outputs.dir)) outputs.finish(status);
  return status;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace moes
