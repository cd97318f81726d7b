#pragma once

// Class activation maps over the final deep feature maps.

#include <vector>

#include "protograde/encoder.hpp"
#include "protograde/proto.hpp"

namespace protograde::cam {

struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major, in [0, 1]
  int predicted = -1;
};

/// Gradient-weighted map for the score -delta(R, prototype of the predicted class).
Heatmap grad_cam(const HybridEncoder& encoder, const Tensor& image, const rnfl::HandFeatureVector& hand,
                 const proto::PrototypeSet& prototypes);

/// Gradient-weighted map for the log-probability of the head's predicted class.
Heatmap grad_cam_head(const HybridEncoder& encoder, const Tensor& image, const rnfl::HandFeatureVector& hand);

/// Classic CAM from the composed head weights; needs a linear projection head.
/// Throws ConfigError otherwise.
Heatmap classic_cam(const HybridEncoder& encoder, const Tensor& image, const rnfl::HandFeatureVector& hand);

/// Min-max normalises `coarse` ([h, w]) to [0, 1] (all zeros when flat) and
/// upsamples it by nearest neighbour to out_h x out_w.
Heatmap finish(const std::vector<double>& coarse, std::size_t h, std::size_t w, std::size_t out_h,
               std::size_t out_w);

}  // namespace protograde::cam
