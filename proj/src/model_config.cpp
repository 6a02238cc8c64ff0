#include "moes/model_config.hpp"

#include <algorithm>
#include <set>

#include "moes/error.hpp"

namespace moes {

using nlohmann::json;

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.input_h = 480;
  c.input_w = 640;
  c.input_channels = 3;
  const ops::PoolSpec pool{2, 2, false};
  c.trunk_stages = {
      {{64, 64}, pool},
      {{128, 128}, pool},
      {{256, 256, 256}, pool},
      {{512, 512, 512}, ops::PoolSpec{2, 1, true}},
      {{512, 512, 512}, std::nullopt},
  };
  c.concat_stages = {2, 3, 4};
  c.num_experts = 20;
  c.expert_conv1_filters = 64;
  c.expert_conv2_filters = 16;
  c.gating_downsample = 4;
  c.gating_conv_filters = {32, 64, 128, 128};
  c.gating_pool = pool;
  c.gating_dense_units = {128};
  c.cb_h = 6;
  c.cb_w = 8;
  return c;
}

ModelConfig ModelConfig::desk_scale() {
  ModelConfig c;
  c.input_h = 64;
  c.input_w = 64;
  c.input_channels = 3;
  const ops::PoolSpec pool{2, 2, false};
  c.trunk_stages = {
      {{6}, pool},
      {{8}, pool},
      {{12}, ops::PoolSpec{2, 1, true}},
      {{12}, std::nullopt},
  };
  c.concat_stages = {1, 2, 3};
  c.num_experts = 4;
  c.expert_conv1_filters = 6;
  c.expert_conv2_filters = 1;
  c.gating_downsample = 4;
  c.gating_conv_filters = {8, 16};
  c.gating_pool = pool;
  c.gating_dense_units = {32};
  c.cb_h = 6;
  c.cb_w = 8;
  return c;
}

namespace {

std::size_t pooled_extent(std::size_t extent, const ops::PoolSpec& pool, const std::string& where) {
  if (pool.window == 0 || pool.stride == 0) throw ConfigError(where + ": pool window and stride must be >= 1");
  if (pool.same) return (extent + pool.stride - 1) / pool.stride;
  if (pool.window > extent) {
    throw ConfigError(where + ": pool window " + std::to_string(pool.window) + " larger than input extent " +
                      std::to_string(extent));
  }
  return (extent - pool.window) / pool.stride + 1;
}

struct StageExtent {
  std::size_t h, w, channels;
};

std::vector<StageExtent> stage_extents(const ModelConfig& c) {
  std::vector<StageExtent> out;
  std::size_t h = c.input_h, w = c.input_w, ch = c.input_channels;
  for (std::size_t s = 0; s < c.trunk_stages.size(); ++s) {
    const auto& stage = c.trunk_stages[s];
    if (stage.filters.empty()) throw ConfigError("trunk stage " + std::to_string(s) + " has no convolutions");
    for (auto f : stage.filters) {
      if (f == 0) throw ConfigError("trunk stage " + std::to_string(s) + " has a zero-width convolution");
    }
    ch = stage.filters.back();
    if (stage.pool) {
      const std::string where = "trunk stage " + std::to_string(s);
      h = pooled_extent(h, *stage.pool, where);
      w = pooled_extent(w, *stage.pool, where);
    }
    out.push_back({h, w, ch});
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_h == 0 || input_w == 0 || input_channels == 0) throw ConfigError("input extents must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
  if (trunk_stages.empty()) throw ConfigError("trunk_stages must not be empty");
  if (concat_stages.empty()) throw ConfigError("concat_stages must not be empty");
  std::set<std::size_t> seen;
  for (auto s : concat_stages) {
    if (s >= trunk_stages.size()) {
      throw ConfigError("concat stage index " + std::to_string(s) + " out of range (have " +
                        std::to_string(trunk_stages.size()) + " stages)");
    }
    if (!seen.insert(s).second) throw ConfigError("concat stage index " + std::to_string(s) + " repeated");
  }
  const auto extents = stage_extents(*this);
  const auto& ref = extents[concat_stages.front()];
  for (auto s : concat_stages) {
    if (extents[s].h != ref.h || extents[s].w != ref.w) {
      throw ConfigError("concatenated stages have different spatial extents");
    }
  }
  if (num_experts == 0) throw ConfigError("num_experts must be >= 1");
  if (expert_conv1_filters == 0 || expert_conv2_filters == 0) throw ConfigError("expert head widths must be positive");
  if (gating_downsample == 0 || input_h % gating_downsample != 0 || input_w % gating_downsample != 0) {
    throw ConfigError("gating_downsample must divide the input extents");
  }
  std::size_t gh = gating_input_h(), gw = gating_input_w();
  for (std::size_t i = 0; i < gating_conv_filters.size(); ++i) {
    if (gating_conv_filters[i] == 0) throw ConfigError("gating convolution widths must be positive");
    const std::string where = "gating pool " + std::to_string(i);
    gh = pooled_extent(gh, gating_pool, where);
    gw = pooled_extent(gw, gating_pool, where);
  }
  for (auto u : gating_dense_units) {
    if (u == 0) throw ConfigError("gating dense widths must be positive");
  }
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(lambda_s >= 0.0 && lambda_c >= 0.0 && lambda_cb >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  if (!(alpha > 1.0)) throw ConfigError("alpha must exceed 1 (the ground-truth maximum)");
  if (cb_h == 0 || cb_w == 0) throw ConfigError("center bias grid must be nonempty");
  if (cb_h > ref.h || cb_w > ref.w) throw ConfigError("center bias grid is larger than the saliency map");
}

std::size_t ModelConfig::output_h() const { return stage_extents(*this).at(concat_stages.at(0)).h; }
std::size_t ModelConfig::output_w() const { return stage_extents(*this).at(concat_stages.at(0)).w; }

namespace {

json pool_to_json(const ops::PoolSpec& p) { return {{"window", p.window}, {"stride", p.stride}, {"same", p.same}}; }

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

ops::PoolSpec pool_from_json(const json& j, const std::string& where) {
  reject_unknown(j, {"window", "stride", "same"}, where);
  ops::PoolSpec p;
  read(j, "window", p.window, where);
  read(j, "stride", p.stride, where);
  read(j, "same", p.same, where);
  return p;
}

}  // namespace

json to_json(const ModelConfig& c) {
  json stages = json::array();
  for (const auto& s : c.trunk_stages) {
    stages.push_back({{"filters", s.filters}, {"pool", s.pool ? pool_to_json(*s.pool) : json(nullptr)}});
  }
  return {
      {"input_h", c.input_h},
      {"input_w", c.input_w},
      {"input_channels", c.input_channels},
      {"kernel_size", c.kernel_size},
      {"trunk_stages", stages},
      {"concat_stages", c.concat_stages},
      {"num_experts", c.num_experts},
      {"expert_head", {c.expert_conv1_filters, c.expert_conv2_filters}},
      {"gating_downsample", c.gating_downsample},
      {"gating_conv_filters", c.gating_conv_filters},
      {"gating_pool", pool_to_json(c.gating_pool)},
      {"gating_dense_units", c.gating_dense_units},
      {"tau", c.tau},
      {"lambda_s", c.lambda_s},
      {"lambda_c", c.lambda_c},
      {"lambda_cb", c.lambda_cb},
      {"alpha", c.alpha},
      {"cb_h", c.cb_h},
      {"cb_w", c.cb_w},
  };
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& base) {
  const std::string where = "model";
  reject_unknown(j,
                 {"preset", "input_h", "input_w", "input_channels", "kernel_size", "trunk_stages", "concat_stages",
                  "num_experts", "expert_head", "gating_downsample", "gating_conv_filters", "gating_pool",
                  "gating_dense_units", "tau", "lambda_s", "lambda_c", "lambda_cb", "alpha", "cb_h", "cb_w"},
                 where);
  ModelConfig c = base;
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset == "desk") {
      c = ModelConfig::desk_scale();
    } else if (preset == "paper") {
      c = ModelConfig::paper_scale();
    } else {
      throw ConfigError("unknown model preset '" + preset + "' (expected desk or paper)");
    }
  }
  read(j, "input_h", c.input_h, where);
  read(j, "input_w", c.input_w, where);
  read(j, "input_channels", c.input_channels, where);
  read(j, "kernel_size", c.kernel_size, where);
  if (j.contains("trunk_stages")) {
    c.trunk_stages.clear();
    for (const auto& s : j.at("trunk_stages")) {
      reject_unknown(s, {"filters", "pool"}, "model.trunk_stages[]");
      TrunkStage stage;
      read(s, "filters", stage.filters, "model.trunk_stages[]");
      if (s.contains("pool") && !s.at("pool").is_null()) stage.pool = pool_from_json(s.at("pool"), "model.trunk_stages[].pool");
      c.trunk_stages.push_back(std::move(stage));
    }
  }
  read(j, "concat_stages", c.concat_stages, where);
  read(j, "num_experts", c.num_experts, where);
  if (j.contains("expert_head")) {
    std::vector<std::size_t> head;
    read(j, "expert_head", head, where);
    if (head.size() != 2) throw ConfigError("model.expert_head must list exactly two widths");
    c.expert_conv1_filters = head[0];
    c.expert_conv2_filters = head[1];
  }
  read(j, "gating_downsample", c.gating_downsample, where);
  read(j, "gating_conv_filters", c.gating_conv_filters, where);
  if (j.contains("gating_pool")) c.gating_pool = pool_from_json(j.at("gating_pool"), "model.gating_pool");
  read(j, "gating_dense_units", c.gating_dense_units, where);
  read(j, "tau", c.tau, where);
  read(j, "lambda_s", c.lambda_s, where);
  read(j, "lambda_c", c.lambda_c, where);
  read(j, "lambda_cb", c.lambda_cb, where);
  read(j, "alpha", c.alpha, where);
  read(j, "cb_h", c.cb_h, where);
  read(j, "cb_w", c.cb_w, where);
  c.validate();
  return c;
}

std::string canonical_json(const ModelConfig& config) { return to_json(config).dump(); }

std::vector<LayerInfo> layer_census(const ModelConfig& c) {
  std::vector<LayerInfo> out;
  const std::string trunk = "VGG16", experts = "Experts", gating = "Gating Network";
  LayerInfo input{trunk, "Input", "input"};
  input.extent_h = c.input_h;
  input.extent_w = c.input_w;
  out.push_back(input);
  for (std::size_t s = 0; s < c.trunk_stages.size(); ++s) {
    const auto& stage = c.trunk_stages[s];
    for (std::size_t i = 0; i < stage.filters.size(); ++i) {
      LayerInfo l{trunk, "Conv" + std::to_string(s + 1) + "-" + std::to_string(i + 1), "conv", stage.filters[i],
                  c.kernel_size, c.kernel_size};
      out.push_back(l);
    }
    if (stage.pool) {
      LayerInfo l{trunk, "Pool" + std::to_string(s + 1), "pool"};
      l.pool_window = stage.pool->window;
      l.pool_stride = stage.pool->stride;
      out.push_back(l);
    }
  }
  out.push_back({experts, "Conv-E-1", "conv", c.expert_conv1_filters, c.kernel_size, c.kernel_size});
  out.push_back({experts, "Conv-E-2", "conv", c.expert_conv2_filters, 1, 1});
  LayerInfo cb{experts, "Center bias", "center_bias"};
  cb.extent_h = c.cb_h;
  cb.extent_w = c.cb_w;
  out.push_back(cb);
  LayerInfo gin{gating, "Input", "input"};
  gin.extent_h = c.gating_input_h();
  gin.extent_w = c.gating_input_w();
  out.push_back(gin);
  for (std::size_t i = 0; i < c.gating_conv_filters.size(); ++i) {
    const auto idx = std::to_string(i + 1);
    out.push_back({gating, "Conv-G-" + idx, "conv", c.gating_conv_filters[i], c.kernel_size, c.kernel_size});
    LayerInfo p{gating, "Pool-G-" + idx, "pool"};
    p.pool_window = c.gating_pool.window;
    p.pool_stride = c.gating_pool.stride;
    out.push_back(p);
  }
  for (std::size_t i = 0; i < c.gating_dense_units.size(); ++i) {
    out.push_back({gating, "Full" + std::to_string(i + 1), "dense", c.gating_dense_units[i]});
  }
  out.push_back({gating, "Full" + std::to_string(c.gating_dense_units.size() + 1), "dense", c.num_experts});
  return out;
}

json census_to_json(const std::vector<LayerInfo>& census) {
  json arr = json::array();
  for (const auto& l : census) {
    json e = {{"group", l.group}, {"name", l.name}, {"kind", l.kind}};
    if (l.kind == "conv") {
      e["filters"] = l.filters;
      e["kernel"] = {l.kernel_h, l.kernel_w};
    } else if (l.kind == "pool") {
      e["window"] = l.pool_window;
      e["stride"] = l.pool_stride;
    } else if (l.kind == "dense") {
      e["units"] = l.filters;
    } else {
      e["height"] = l.extent_h;
      e["width"] = l.extent_w;
    }
    arr.push_back(std::move(e));
  }
  return arr;
}

}  // namespace moes
