#pragma once

// Hybrid B-scan encoder: a convolutional branch (conv stack, vertical residual
// block, attention module, 1x1 output conv) pooled to a vector and
// concatenated with the standardised RNFL descriptor. A small projection head
// with a softmax layer sits on top for conventional classification.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "protograde/config.hpp"
#include "protograde/rnfl.hpp"
#include "protograde/tensor.hpp"

namespace protograde {

struct ConvBlockSpec {
  std::size_t filters = 8;
  std::size_t kernel = 3;
  bool frozen = false;
  bool pool = true;
};

struct EncoderConfig {
  std::size_t height = 62;
  std::size_t width = 96;
  std::size_t channels = 1;
  std::vector<ConvBlockSpec> conv_blocks{{8, 3, false, true}, {16, 3, false, true}, {16, 3, false, true}};
  std::size_t residual_width = 8;      // both 1x1 convs of the residual block
  std::size_t residual_vertical = 8;   // the 3x1 conv
  std::size_t attention_width = 4;     // first squeeze stage; halves down to 1
  std::size_t deep_channels = 8;       // C
  std::size_t projection_hidden = 16;
  std::size_t projection_dim = 8;      // U_proj
  bool projection_relu = true;         // false makes the whole head affine
  std::size_t classes = 3;
  rnfl::BagEdges bag_edges = rnfl::kDefaultBagEdges;

  std::size_t hand_width() const { return rnfl::kFeatureCount; }
  std::size_t embedding_width() const { return deep_channels + hand_width(); }
  /// Spatial size H x W of the deep feature maps.
  std::pair<std::size_t, std::size_t> feature_map_size() const;
  /// Squeeze widths of the attention module, e.g. {4, 2} for width 4.
  std::vector<std::size_t> attention_stages() const;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  /// 248x384x3 input with the VGG16 convolution layout, first three blocks frozen.
  static EncoderConfig paper_scale();

  /// Reads the encoder keys from a flat config; absent keys keep defaults.
  static EncoderConfig from_config(const KeyValueConfig& cfg);
  void write_to(KeyValueConfig& cfg) const;
  static const std::vector<std::string>& config_keys();
};

/// Fixed-length latent representation R.
struct EmbeddingVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const EmbeddingVector&) const = default;
};

/// Intermediate tensors of one deep-branch pass.
struct DeepBranchTrace {
  Tensor attention_input;
  Tensor attention_map;  // [H, W, 1], sigmoid range
  Tensor attention_output;
  Tensor features;       // [H, W, C]
};

class HybridEncoder {
 public:
  HybridEncoder(EncoderConfig config, std::uint64_t seed);
  /// Wraps existing parameters (e.g. from a checkpoint); names must match.
  HybridEncoder(EncoderConfig config, ParameterSet params, rnfl::FeatureScaling scaling);

  HybridEncoder(const HybridEncoder&) = delete;
  HybridEncoder& operator=(const HybridEncoder&) = delete;
  HybridEncoder(HybridEncoder&&) = default;
  HybridEncoder& operator=(HybridEncoder&&) = default;

  /// Deep copy with independent parameter storage.
  HybridEncoder clone() const;

  const EncoderConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  const rnfl::FeatureScaling& scaling() const { return scaling_; }
  void set_scaling(const rnfl::FeatureScaling& scaling) { scaling_ = scaling; }

  /// Conv stack, residual block, attention module and final 1x1 conv.
  /// `forced_attention`, when given, replaces the sigmoid map.
  DeepBranchTrace deep_branch(Tape& tape, const Tensor& image, const Tensor* forced_attention = nullptr) const;
  Tensor deep_branch_forward(Tape& tape, const Tensor& image) const;

  /// R = gap(deep maps) ++ standardised hand features.
  Tensor encode(Tape& tape, const Tensor& image, const rnfl::HandFeatureVector& hand) const;
  Tensor encode_maps(Tape& tape, const Tensor& deep_maps, const rnfl::HandFeatureVector& hand) const;

  /// Projection head output Z.
  Tensor project(Tape& tape, const Tensor& embedding) const;
  /// softmax over classes on top of the projection head.
  Tensor classify(Tape& tape, const Tensor& embedding) const;

  EmbeddingVector embed(const Tensor& image, const rnfl::HandFeatureVector& hand) const;
  EmbeddingVector embed(const Tensor& image, const rnfl::RnflMask& mask, double age) const;

  /// Names of the projection/softmax head parameters.
  static bool is_head_parameter(const std::string& name);

 private:
  struct Unchecked {};
  HybridEncoder(Unchecked, EncoderConfig config, ParameterSet params, rnfl::FeatureScaling scaling)
      : config_(std::move(config)), params_(std::move(params)), scaling_(scaling) {}

  Tensor conv_layer(Tape& tape, const Tensor& x, const std::string& name, bool with_bias, bool activate) const;
  void check_image(const Tensor& image) const;

  EncoderConfig config_;
  ParameterSet params_;
  rnfl::FeatureScaling scaling_;
};

/// The attention module on its own: squeeze chain to a sigmoid map `a`,
/// mirrored expansion e = expand(a - 1), output x + x * e.
/// Expansion convs carry no bias except the last, so a == 1 with a zero
/// final bias gives back x exactly.
Tensor attention_module(Tape& tape, const Tensor& x, const ParameterSet& params, std::size_t attention_width,
                        const Tensor* forced_map = nullptr, Tensor* map_out = nullptr);

}  // namespace protograde
