#include "protograde/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "protograde/errors.hpp"
#include "protograde/ops.hpp"
#include "protograde/random.hpp"

namespace protograde {
namespace {

std::string join_sizes(const std::vector<ConvBlockSpec>& blocks, auto field) {
  std::ostringstream os;
  for (std::size_t i = 0; i < blocks.size(); ++i) os << (i ? "," : "") << field(blocks[i]);
  return os.str();
}

std::size_t positive(long long v, const std::string& key) {
  if (v <= 0) throw ConfigError(key + " must be positive");
  return static_cast<std::size_t>(v);
}

const Tensor& param(const ParameterSet& params, const std::string& name) { return params.at(name).value; }

Tensor apply_conv(Tape& tape, const Tensor& x, const ParameterSet& params, const std::string& name, bool with_bias,
                  bool activate) {
  Tensor y = ops::conv2d(tape, x, param(params, name + ".kernel"), ops::Padding::same);
  if (with_bias) y = ops::add_channel_bias(tape, y, param(params, name + ".bias"));
  return activate ? ops::relu(tape, y) : y;
}

void add_conv(ParameterSet& params, const std::string& name, std::size_t kh, std::size_t kw, std::size_t cin,
              std::size_t cout, bool with_bias, bool frozen, Rng& rng) {
  Tensor k = Tensor::zeros({kh, kw, cin, cout});
  glorot_uniform(k, kh * kw * cin, kh * kw * cout, rng);
  params.add(name + ".kernel", k, frozen);
  if (with_bias) params.add(name + ".bias", Tensor::zeros({cout}), frozen);
}

void add_dense(ParameterSet& params, const std::string& name, std::size_t n, std::size_t m, Rng& rng) {
  Tensor w = Tensor::zeros({n, m});
  glorot_uniform(w, n, m, rng);
  params.add(name + ".weights", w);
  params.add(name + ".bias", Tensor::zeros({m}));
}

}  // namespace

std::pair<std::size_t, std::size_t> EncoderConfig::feature_map_size() const {
  std::size_t h = height, w = width;
  for (const auto& b : conv_blocks)
    if (b.pool) {
      h /= 2;
      w /= 2;
    }
  return {h, w};
}

std::vector<std::size_t> EncoderConfig::attention_stages() const {
  std::vector<std::size_t> stages;
  for (std::size_t w = attention_width; w > 1; w /= 2) stages.push_back(w);
  return stages;
}

void EncoderConfig::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw ConfigError("image dimensions must be positive");
  if (conv_blocks.empty()) throw ConfigError("encoder needs at least one conv block");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
    const auto& b = conv_blocks[i];
    if (b.filters == 0 || b.kernel == 0)
      throw ConfigError("conv block " + std::to_string(i) + " needs positive filters and kernel");
    if (b.pool) {
      if (h < 2 || w < 2)
        throw ConfigError("conv block " + std::to_string(i) + " pools a map smaller than 2x2");
      h /= 2;
      w /= 2;
    }
  }
  if (residual_width == 0 || residual_vertical == 0 || attention_width == 0 || deep_channels == 0)
    throw ConfigError("residual, attention and deep channel widths must be positive");
  if (projection_hidden == 0 || projection_dim == 0) throw ConfigError("projection widths must be positive");
  if (projection_dim >= embedding_width())
    throw ConfigError("projection_dim (" + std::to_string(projection_dim) + ") must be below the embedding width (" +
                      std::to_string(embedding_width()) + ")");
  if (classes < 2) throw ConfigError("need at least two classes");
  rnfl::validate_edges(bag_edges);
}

EncoderConfig EncoderConfig::paper_scale() {
  EncoderConfig c;
  c.height = 248;
  c.width = 384;
  c.channels = 3;
  c.conv_blocks.clear();
  // VGG16: (2x64, 2x128, 3x256, 3x512, 3x512), pooling after each block.
  const std::vector<std::pair<std::size_t, std::size_t>> blocks{{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}};
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (std::size_t l = 0; l < blocks[b].second; ++l)
      c.conv_blocks.push_back({blocks[b].first, 3, b < 3, l + 1 == blocks[b].second});
  return c;
}

const std::vector<std::string>& EncoderConfig::config_keys() {
  static const std::vector<std::string> keys{
      "image_height",   "image_width",     "image_channels",    "conv_filters",     "conv_kernels",
      "conv_freeze",    "conv_pool",       "residual_width",    "residual_vertical", "attention_width",
      "deep_channels",  "projection_hidden", "projection_dim",  "projection_activation", "classes",
      "bag_edges"};
  return keys;
}

EncoderConfig EncoderConfig::from_config(const KeyValueConfig& cfg) {
  EncoderConfig c;
  if (cfg.contains("image_height")) c.height = positive(cfg.get_int("image_height"), "image_height");
  if (cfg.contains("image_width")) c.width = positive(cfg.get_int("image_width"), "image_width");
  if (cfg.contains("image_channels")) c.channels = positive(cfg.get_int("image_channels"), "image_channels");

  if (cfg.contains("conv_filters")) {
    const auto filters = cfg.get_int_list("conv_filters");
    c.conv_blocks.assign(filters.size(), ConvBlockSpec{});
    for (std::size_t i = 0; i < filters.size(); ++i) c.conv_blocks[i].filters = positive(filters[i], "conv_filters");
  }
  const std::size_t n = c.conv_blocks.size();
  auto per_block = [&](const std::string& key, auto assign) {
    if (!cfg.contains(key)) return;
    auto values = cfg.get_int_list(key);
    if (values.size() == 1) values.assign(n, values[0]);
    if (values.size() != n)
      throw ConfigError(key + " lists " + std::to_string(values.size()) + " entries for " + std::to_string(n) +
                        " conv blocks");
    for (std::size_t i = 0; i < n; ++i) assign(c.conv_blocks[i], values[i]);
  };
  per_block("conv_kernels", [](ConvBlockSpec& b, long long v) { b.kernel = positive(v, "conv_kernels"); });
  per_block("conv_freeze", [](ConvBlockSpec& b, long long v) { b.frozen = v != 0; });
  per_block("conv_pool", [](ConvBlockSpec& b, long long v) { b.pool = v != 0; });

  if (cfg.contains("residual_width")) c.residual_width = positive(cfg.get_int("residual_width"), "residual_width");
  if (cfg.contains("residual_vertical"))
    c.residual_vertical = positive(cfg.get_int("residual_vertical"), "residual_vertical");
  if (cfg.contains("attention_width")) c.attention_width = positive(cfg.get_int("attention_width"), "attention_width");
  if (cfg.contains("deep_channels")) c.deep_channels = positive(cfg.get_int("deep_channels"), "deep_channels");
  if (cfg.contains("projection_hidden"))
    c.projection_hidden = positive(cfg.get_int("projection_hidden"), "projection_hidden");
  if (cfg.contains("projection_dim")) c.projection_dim = positive(cfg.get_int("projection_dim"), "projection_dim");
  if (cfg.contains("projection_activation")) {
    const auto act = cfg.get_string("projection_activation");
    if (act != "relu" && act != "linear") throw ConfigError("projection_activation must be relu or linear");
    c.projection_relu = act == "relu";
  }
  if (cfg.contains("classes")) c.classes = positive(cfg.get_int("classes"), "classes");
  if (cfg.contains("bag_edges")) {
    const auto edges = cfg.get_double_list("bag_edges");
    if (edges.size() != c.bag_edges.size())
      throw ConfigError("bag_edges needs exactly " + std::to_string(c.bag_edges.size()) + " values");
    std::copy(edges.begin(), edges.end(), c.bag_edges.begin());
  }
  c.validate();
  return c;
}

void EncoderConfig::write_to(KeyValueConfig& cfg) const {
  cfg.set("image_height", std::to_string(height));
  cfg.set("image_width", std::to_string(width));
  cfg.set("image_channels", std::to_string(channels));
  cfg.set("conv_filters", join_sizes(conv_blocks, [](const ConvBlockSpec& b) { return b.filters; }));
  cfg.set("conv_kernels", join_sizes(conv_blocks, [](const ConvBlockSpec& b) { return b.kernel; }));
  cfg.set("conv_freeze", join_sizes(conv_blocks, [](const ConvBlockSpec& b) { return b.frozen ? 1 : 0; }));
  cfg.set("conv_pool", join_sizes(conv_blocks, [](const ConvBlockSpec& b) { return b.pool ? 1 : 0; }));
  cfg.set("residual_width", std::to_string(residual_width));
  cfg.set("residual_vertical", std::to_string(residual_vertical));
  cfg.set("attention_width", std::to_string(attention_width));
  cfg.set("deep_channels", std::to_string(deep_channels));
  cfg.set("projection_hidden", std::to_string(projection_hidden));
  cfg.set("projection_dim", std::to_string(projection_dim));
  cfg.set("projection_activation", projection_relu ? "relu" : "linear");
  cfg.set("classes", std::to_string(classes));
  std::string edges;
  for (std::size_t i = 0; i < bag_edges.size(); ++i) edges += (i ? "," : "") + format_double(bag_edges[i]);
  cfg.set("bag_edges", edges);
}

HybridEncoder::HybridEncoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  std::size_t cin = config_.channels;
  for (std::size_t i = 0; i < config_.conv_blocks.size(); ++i) {
    const auto& b = config_.conv_blocks[i];
    add_conv(params_, "conv" + std::to_string(i), b.kernel, b.kernel, cin, b.filters, true, b.frozen, rng);
    cin = b.filters;
  }
  const std::size_t stack_out = cin;
  add_conv(params_, "residual.in", 1, 1, stack_out, config_.residual_width, true, false, rng);
  add_conv(params_, "residual.vertical", 3, 1, config_.residual_width, config_.residual_vertical, true, false, rng);
  add_conv(params_, "residual.reduce", 1, 1, config_.residual_vertical + stack_out, config_.residual_width, true,
           false, rng);

  const std::size_t att_channels = config_.residual_width;
  const auto stages = config_.attention_stages();
  cin = att_channels;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    add_conv(params_, "attention.squeeze" + std::to_string(s), 1, 1, cin, stages[s], true, false, rng);
    cin = stages[s];
  }
  add_conv(params_, "attention.map", 1, 1, cin, 1, true, false, rng);
  cin = 1;
  for (std::size_t s = stages.size(); s-- > 0;) {
    add_conv(params_, "attention.expand" + std::to_string(s), 1, 1, cin, stages[s], false, false, rng);
    cin = stages[s];
  }
  add_conv(params_, "attention.out", 1, 1, cin, att_channels, true, false, rng);

  add_conv(params_, "final", 1, 1, att_channels, config_.deep_channels, true, false, rng);

  add_dense(params_, "head.hidden", config_.embedding_width(), config_.projection_hidden, rng);
  add_dense(params_, "head.projection", config_.projection_hidden, config_.projection_dim, rng);
  add_dense(params_, "head.softmax", config_.projection_dim, config_.classes, rng);
}

HybridEncoder::HybridEncoder(EncoderConfig config, ParameterSet params, rnfl::FeatureScaling scaling)
    : config_(std::move(config)), params_(std::move(params)), scaling_(scaling) {
  config_.validate();
  // Every parameter a freshly built encoder has must be present with the same shape.
  const HybridEncoder reference(config_, 0);
  if (reference.params_.size() != params_.size())
    throw ConfigError("parameter count " + std::to_string(params_.size()) + " does not match the encoder layout (" +
                      std::to_string(reference.params_.size()) + ")");
  for (const auto& p : reference.params_.items()) {
    if (!params_.contains(p.name)) throw ConfigError("missing parameter " + p.name);
    auto& mine = params_.at(p.name);
    if (mine.value.shape() != p.value.shape())
      throw ConfigError("parameter " + p.name + " has shape " + shape_to_string(mine.value.shape()) + ", expected " +
                        shape_to_string(p.value.shape()));
    mine.frozen = p.frozen;
    mine.value.set_requires_grad(!p.frozen);
  }
}

HybridEncoder HybridEncoder::clone() const { return HybridEncoder(Unchecked{}, config_, params_.clone(), scaling_); }

bool HybridEncoder::is_head_parameter(const std::string& name) { return name.rfind("head.", 0) == 0; }

void HybridEncoder::check_image(const Tensor& image) const {
  const Shape expected{config_.height, config_.width, config_.channels};
  if (image.shape() != expected)
    throw ShapeError("image shape " + shape_to_string(image.shape()) + " does not match encoder input " +
                     shape_to_string(expected));
}

Tensor HybridEncoder::conv_layer(Tape& tape, const Tensor& x, const std::string& name, bool with_bias,
                                 bool activate) const {
  return apply_conv(tape, x, params_, name, with_bias, activate);
}

Tensor attention_module(Tape& tape, const Tensor& x, const ParameterSet& params, std::size_t attention_width,
                        const Tensor* forced_map, Tensor* map_out) {
  std::vector<std::size_t> stages;
  for (std::size_t w = attention_width; w > 1; w /= 2) stages.push_back(w);

  Tensor h = x;
  for (std::size_t s = 0; s < stages.size(); ++s)
    h = apply_conv(tape, h, params, "attention.squeeze" + std::to_string(s), true, true);
  Tensor map = ops::sigmoid(tape, apply_conv(tape, h, params, "attention.map", true, false));
  if (forced_map) {
    if (forced_map->shape() != map.shape())
      throw ShapeError("forced attention map " + shape_to_string(forced_map->shape()) + " vs " +
                       shape_to_string(map.shape()));
    map = *forced_map;
  }
  if (map_out) *map_out = map;

  Tensor e = ops::affine(tape, map, 1.0, -1.0);
  for (std::size_t s = stages.size(); s-- > 0;)
    e = apply_conv(tape, e, params, "attention.expand" + std::to_string(s), false, true);
  e = apply_conv(tape, e, params, "attention.out", true, false);
  return ops::add(tape, x, ops::mul(tape, x, e));
}

DeepBranchTrace HybridEncoder::deep_branch(Tape& tape, const Tensor& image, const Tensor* forced_attention) const {
  check_image(image);
  Tensor x = image;
  for (std::size_t i = 0; i < config_.conv_blocks.size(); ++i) {
    x = conv_layer(tape, x, "conv" + std::to_string(i), true, true);
    if (config_.conv_blocks[i].pool) x = ops::max_pool2x2(tape, x);
  }
  const Tensor shortcut = x;
  Tensor r = conv_layer(tape, x, "residual.in", true, true);
  r = conv_layer(tape, r, "residual.vertical", true, true);
  x = conv_layer(tape, ops::concat_channels(tape, r, shortcut), "residual.reduce", true, true);

  DeepBranchTrace trace;
  trace.attention_input = x;
  trace.attention_output =
      attention_module(tape, x, params_, config_.attention_width, forced_attention, &trace.attention_map);
  trace.features = conv_layer(tape, trace.attention_output, "final", true, false);
  return trace;
}

Tensor HybridEncoder::deep_branch_forward(Tape& tape, const Tensor& image) const {
  return deep_branch(tape, image).features;
}

Tensor HybridEncoder::encode_maps(Tape& tape, const Tensor& deep_maps, const rnfl::HandFeatureVector& hand) const {
  const auto scaled = scaling_.apply(hand);
  const Tensor hand_tensor = Tensor::from({scaled.size()}, std::vector<double>(scaled.begin(), scaled.end()));
  const Tensor parts[] = {ops::gap(tape, deep_maps), hand_tensor};
  return ops::concat(tape, parts);
}

Tensor HybridEncoder::encode(Tape& tape, const Tensor& image, const rnfl::HandFeatureVector& hand) const {
  return encode_maps(tape, deep_branch_forward(tape, image), hand);
}

Tensor HybridEncoder::project(Tape& tape, const Tensor& embedding) const {
  Tensor h = ops::dense(tape, embedding, param(params_, "head.hidden.weights"), param(params_, "head.hidden.bias"));
  if (config_.projection_relu) h = ops::relu(tape, h);
  return ops::dense(tape, h, param(params_, "head.projection.weights"), param(params_, "head.projection.bias"));
}

Tensor HybridEncoder::classify(Tape& tape, const Tensor& embedding) const {
  const Tensor z = project(tape, embedding);
  return ops::softmax(tape,
                      ops::dense(tape, z, param(params_, "head.softmax.weights"), param(params_, "head.softmax.bias")));
}

EmbeddingVector HybridEncoder::embed(const Tensor& image, const rnfl::HandFeatureVector& hand) const {
  Tape tape(false);
  const Tensor r = encode(tape, image, hand);
  return {std::vector<double>(r.data().begin(), r.data().end())};
}

EmbeddingVector HybridEncoder::embed(const Tensor& image, const rnfl::RnflMask& mask, double age) const {
  if (mask.height() != config_.height || mask.width() != config_.width)
    throw ShapeError("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                     " does not match image " + std::to_string(config_.height) + "x" + std::to_string(config_.width));
  return embed(image, rnfl::hand_features(mask, age, config_.bag_edges));
}

}  // namespace protograde
