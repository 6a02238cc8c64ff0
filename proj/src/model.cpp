#include "moes/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "moes/error.hpp"
#include "moes/ops.hpp"

namespace moes {

namespace {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

Model::Conv Model::make_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                             std::mt19937_64& rng) {
  Conv c;
  c.kernel = graph_.parameter(name + ".kernel", glorot_uniform({out, in, k, k}, in * k * k, out * k * k, rng));
  c.bias = graph_.parameter(name + ".bias", Tensor({out}, 0.0));
  return c;
}

Model::Dense Model::make_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  Dense d;
  d.weight = graph_.parameter(name + ".weight", glorot_uniform({in, out}, in, out, rng));
  d.bias = graph_.parameter(name + ".bias", Tensor({out}, 0.0));
  return d;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t k = config_.kernel_size;

  std::size_t channels = config_.input_channels;
  for (std::size_t s = 0; s < config_.trunk_stages.size(); ++s) {
    std::vector<Conv> stage;
    const auto& filters = config_.trunk_stages[s].filters;
    for (std::size_t i = 0; i < filters.size(); ++i) {
      stage.push_back(make_conv("trunk.conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1), channels,
                                filters[i], k, rng));
      channels = filters[i];
    }
    trunk_.push_back(std::move(stage));
  }

  std::size_t concat_channels = 0;
  for (auto s : config_.concat_stages) concat_channels += config_.trunk_stages[s].filters.back();
  for (std::size_t e = 0; e < config_.num_experts; ++e) {
    const std::string prefix = "expert" + std::to_string(e);
    Conv first = make_conv(prefix + ".conv_e1", concat_channels, config_.expert_conv1_filters, k, rng);
    Conv second = make_conv(prefix + ".conv_e2", config_.expert_conv1_filters, config_.expert_conv2_filters, 1, rng);
    // A positive offset keeps initial maps above the loss normalizer's floor.
    second.bias->value.fill(1.0);
    experts_.emplace_back(first, second);
  }

  center_bias_ =
      graph_.parameter("center_bias", Tensor({config_.num_experts, config_.cb_h, config_.cb_w}, 1.0));

  channels = config_.input_channels;
  std::size_t gh = config_.gating_input_h(), gw = config_.gating_input_w();
  for (std::size_t i = 0; i < config_.gating_conv_filters.size(); ++i) {
    gating_convs_.push_back(
        make_conv("gating.conv_g" + std::to_string(i + 1), channels, config_.gating_conv_filters[i], k, rng));
    channels = config_.gating_conv_filters[i];
    const auto& p = config_.gating_pool;
    gh = p.same ? (gh + p.stride - 1) / p.stride : (gh - p.window) / p.stride + 1;
    gw = p.same ? (gw + p.stride - 1) / p.stride : (gw - p.window) / p.stride + 1;
  }
  std::size_t width = channels * gh * gw;
  for (std::size_t i = 0; i < config_.gating_dense_units.size(); ++i) {
    gating_dense_.push_back(make_dense("gating.full" + std::to_string(i + 1), width, config_.gating_dense_units[i], rng));
    width = config_.gating_dense_units[i];
  }
  gating_dense_.push_back(make_dense("gating.full" + std::to_string(config_.gating_dense_units.size() + 1), width,
                                     config_.num_experts, rng));
}

Model build_model(const ModelConfig& config, std::uint64_t seed) { return Model(config, seed); }

std::vector<std::string> Model::gating_parameter_names() const {
  std::vector<std::string> names;
  for (const auto& p : graph_.parameters()) {
    if (p->name.rfind("gating.", 0) == 0) names.push_back(p->name);
  }
  return names;
}

ModelOutput Model::forward(const Tensor& images, const ForwardOptions& options) {
  const auto& c = config_;
  if (images.rank() != 4 || images.dim(1) != c.input_channels || images.dim(2) != c.input_h ||
      images.dim(3) != c.input_w) {
    throw UsageError("model expects images [N," + std::to_string(c.input_channels) + "," + std::to_string(c.input_h) +
                     "," + std::to_string(c.input_w) + "], got " + shape_to_string(images.shape()));
  }
  Graph& g = graph_;
  const std::size_t pad = c.kernel_size / 2;
  Var input = g.constant(images);

  Var x = input;
  std::vector<Var> stage_outputs;
  for (std::size_t s = 0; s < trunk_.size(); ++s) {
    for (const auto& conv : trunk_[s]) x = ops::relu(g, ops::conv2d(g, x, conv.kernel, conv.bias, 1, pad));
    if (c.trunk_stages[s].pool) x = ops::maxpool2d(g, x, *c.trunk_stages[s].pool);
    stage_outputs.push_back(x);
  }
  std::vector<Var> selected;
  for (auto s : c.concat_stages) selected.push_back(stage_outputs[s]);
  Var features = selected.size() == 1 ? selected.front() : ops::concat_channels(g, selected);

  std::vector<Var> maps;
  for (const auto& [first, second] : experts_) {
    Var h = ops::relu(g, ops::conv2d(g, features, first.kernel, first.bias, 1, pad));
    Var m = ops::conv2d(g, h, second.kernel, second.bias, 1, 0);
    if (c.expert_conv2_filters > 1) m = ops::channel_mean(g, m);
    maps.push_back(m);
  }
  ModelOutput out;
  out.expert_maps = maps.size() == 1 ? maps.front() : ops::concat_channels(g, maps);

  const std::size_t oh = out.expert_maps->value.dim(2), ow = out.expert_maps->value.dim(3);
  Var bias = ops::reshape(g, center_bias_, {1, c.num_experts, c.cb_h, c.cb_w});
  if (gradient_fault_ != 1.0) bias = ops::scale_gradient(g, bias, gradient_fault_);
  out.center_bias = ops::upsample_bilinear(g, bias, oh, ow);
  out.biased_expert_maps =
      options.bypass_center_bias ? out.expert_maps : ops::multiply_broadcast_batch(g, out.expert_maps, out.center_bias);

  Var gx = c.gating_downsample > 1 ? ops::avgpool2d(g, input, c.gating_downsample) : input;
  for (const auto& conv : gating_convs_) {
    gx = ops::relu(g, ops::conv2d(g, gx, conv.kernel, conv.bias, 1, pad));
    gx = ops::maxpool2d(g, gx, c.gating_pool);
  }
  gx = ops::flatten(g, gx);
  for (std::size_t i = 0; i < gating_dense_.size(); ++i) {
    gx = ops::dense(g, gx, gating_dense_[i].weight, gating_dense_[i].bias);
    if (i + 1 < gating_dense_.size()) gx = ops::relu(g, gx);
  }
  out.gate_logits = gx;
  out.gate_probs_tau = ops::softmax_tempered(g, gx, c.tau);
  out.gate_probs_1 = c.tau == 1.0 ? out.gate_probs_tau : ops::softmax_tempered(g, gx, 1.0);
  out.saliency = ops::gated_sum(g, out.biased_expert_maps, out.gate_probs_tau);
  return out;
}

Var saliency_loss(Graph& g, const ModelOutput& out, const Tensor& y, const ModelConfig& config) {
  Var fit = ops::normalized_saliency_error(g, out.saliency, y, config.alpha);
  if (config.lambda_cb == 0.0) return fit;
  Var reg = ops::scale(g, ops::center_bias_penalty(g, out.center_bias), config.lambda_cb);
  return ops::add(g, fit, reg);
}

Var class_loss(Graph& g, const ModelOutput& out, const Tensor& targets) {
  return ops::cross_entropy(g, out.gate_probs_1, targets);
}

Var total_loss(Graph& g, const ModelOutput& out, const Tensor& y, const Tensor& targets, const ModelConfig& config) {
  Var sal = ops::scale(g, saliency_loss(g, out, y, config), config.lambda_s);
  if (config.lambda_c == 0.0) return sal;
  return ops::add(g, sal, ops::scale(g, class_loss(g, out, targets), config.lambda_c));
}

Tensor clamp_for_export(const Tensor& saliency) {
  Tensor t = saliency;
  for (auto& v : t.values()) v = v < 0.0 ? 0.0 : v;
  return t;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const ModelConfig& config) { return fnv1a64(canonical_json(config)); }

namespace {

constexpr char kMagic[4] = {'M', 'O', 'E', 'S'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void write_le(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, std::size_t& offset, const char* what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what, offset);
  }
  offset += sizeof(T);
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  const std::string json = canonical_json(model.config());
  os.write(kMagic, 4);
  write_le<std::uint32_t>(os, kVersion);
  write_le<std::uint64_t>(os, json.size());
  os.write(json.data(), static_cast<std::streamsize>(json.size()));
  write_le<std::uint64_t>(os, fnv1a64(json));
  const auto flat = model.graph().flat_parameters();
  write_le<std::uint64_t>(os, flat.size());
  os.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::size_t offset = 0;
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  offset = 4;
  const auto version = read_le<std::uint32_t>(is, offset, "version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const auto json_len = read_le<std::uint64_t>(is, offset, "config length");
  if (json_len > (1u << 24)) throw FormatError("implausible config length", offset - 8);
  std::string json(json_len, '\0');
  if (!is.read(json.data(), static_cast<std::streamsize>(json_len))) throw FormatError("checkpoint truncated in config", offset);
  const std::size_t json_offset = offset;
  offset += json_len;
  const auto stored_hash = read_le<std::uint64_t>(is, offset, "config hash");
  if (stored_hash != fnv1a64(json)) throw FormatError("checkpoint config hash mismatch", json_offset);
  ModelConfig config;
  try {
    config = model_config_from_json(nlohmann::json::parse(json));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what(), json_offset);
  }
  if (canonical_json(config) != json) throw FormatError("checkpoint config is not canonical", json_offset);
  Model model(config, 0);
  const auto count = read_le<std::uint64_t>(is, offset, "parameter count");
  if (count != model.graph().parameter_scalar_count()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " values, config needs " +
                          std::to_string(model.graph().parameter_scalar_count()),
                      offset - 8);
  }
  std::vector<double> flat(count);
  if (!is.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
    throw FormatError("checkpoint truncated in parameters", offset);
  }
  model.graph().set_flat_parameters(flat);
  return model;
}

}  // namespace moes
