#include "protograde/cam.hpp"

#include <algorithm>
#include <cmath>

#include "protograde/errors.hpp"
#include "protograde/ops.hpp"

namespace protograde::cam {
namespace {

struct Maps {
  Tensor features;  // leaf with gradient, [h, w, C]
  std::size_t h, w, c;
};

Maps feature_leaf(const HybridEncoder& encoder, const Tensor& image) {
  Tape off(false);
  const Tensor f = encoder.deep_branch_forward(off, image);
  return {Tensor::from(f.shape(), std::vector<double>(f.data().begin(), f.data().end()), true), f.dim(0), f.dim(1),
          f.dim(2)};
}

// relu(sum_k alpha_k F_k) with alpha_k the spatial mean of dScore/dF_k.
Heatmap weighted_maps(const Maps& m, const HybridEncoder& encoder, int predicted) {
  const auto g = m.features.grad();
  const auto f = m.features.data();
  const std::size_t n = m.h * m.w;
  std::vector<double> alpha(m.c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m.c; ++k) alpha[k] += g[i * m.c + k];
  for (auto& a : alpha) a /= static_cast<double>(n);
  std::vector<double> coarse(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < m.c; ++k) s += alpha[k] * f[i * m.c + k];
    coarse[i] = std::max(0.0, s);
  }
  Heatmap out = finish(coarse, m.h, m.w, encoder.config().height, encoder.config().width);
  out.predicted = predicted;
  return out;
}

}  // namespace

Heatmap finish(const std::vector<double>& coarse, std::size_t h, std::size_t w, std::size_t out_h,
               std::size_t out_w) {
  if (coarse.size() != h * w) throw ShapeError("heatmap values do not match its dims");
  const auto [lo, hi] = std::minmax_element(coarse.begin(), coarse.end());
  const double range = *hi - *lo;
  Heatmap out{out_h, out_w, std::vector<double>(out_h * out_w, 0.0)};
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(h - 1, y * h / out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(w - 1, x * w / out_w);
      out.values[y * out_w + x] = range > 0.0 ? (coarse[sy * w + sx] - *lo) / range : 0.0;
    }
  }
  return out;
}

Heatmap grad_cam(const HybridEncoder& encoder, const Tensor& image, const rnfl::HandFeatureVector& hand,
                 const proto::PrototypeSet& prototypes) {
  Maps m = feature_leaf(encoder, image);
  Tape tape;
  const Tensor r = encoder.encode_maps(tape, m.features, hand);
  const auto probs =
      proto::class_probabilities(EmbeddingVector{{r.data().begin(), r.data().end()}}, prototypes);
  const auto predicted = proto::argmax(probs);
  const auto& rho = prototypes.prototypes[predicted].values;
  const Tensor target = Tensor::from({rho.size()}, rho);
  const Tensor score = ops::affine(tape, proto::distance(tape, r, target, prototypes.distance), -1.0, 0.0);
  tape.backward(score);
  return weighted_maps(m, encoder, static_cast<int>(predicted));
}

Heatmap grad_cam_head(const HybridEncoder& encoder, const Tensor& image, const rnfl::HandFeatureVector& hand) {
  Maps m = feature_leaf(encoder, image);
  Tape tape;
  const Tensor p = encoder.classify(tape, encoder.encode_maps(tape, m.features, hand));
  const auto predicted = proto::argmax(p.data());
  std::vector<double> onehot(p.size(), 0.0);
  onehot[predicted] = 1.0;
  // -cce against the predicted class is its log-probability.
  tape.backward(ops::affine(tape, ops::cce_loss(tape, p, onehot), -1.0, 0.0));
  return weighted_maps(m, encoder, static_cast<int>(predicted));
}

Heatmap classic_cam(const HybridEncoder& encoder, const Tensor& image, const rnfl::HandFeatureVector& hand) {
  const auto& cfg = encoder.config();
  if (cfg.projection_relu)
    throw ConfigError("classic CAM needs projection_activation = linear; use the gradient-based map instead");
  const auto& params = encoder.parameters();
  // Compose the affine head into one [embedding, classes] matrix.
  std::vector<double> m;
  std::size_t rows = 0, cols = 0;
  for (const char* name : {"head.hidden.weights", "head.projection.weights", "head.softmax.weights"}) {
    const Tensor& w = params.at(name).value;
    const std::size_t n = w.dim(0), k = w.dim(1);
    if (m.empty()) {
      m.assign(w.data().begin(), w.data().end());
      rows = n;
      cols = k;
      continue;
    }
    std::vector<double> next(rows * k, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t l = 0; l < k; ++l) next[i * k + l] += m[i * cols + j] * w[j * k + l];
    m = std::move(next);
    cols = k;
  }

  Tape off(false);
  const Tensor f = encoder.deep_branch_forward(off, image);
  const Tensor p = encoder.classify(off, encoder.encode_maps(off, f, hand));
  const auto predicted = proto::argmax(p.data());
  const std::size_t h = f.dim(0), w = f.dim(1), c = f.dim(2);
  std::vector<double> coarse(h * w, 0.0);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t k = 0; k < c; ++k) coarse[i] += m[k * cols + predicted] * f[i * c + k];
  Heatmap out = finish(coarse, h, w, cfg.height, cfg.width);
  out.predicted = static_cast<int>(predicted);
  return out;
}

}  // namespace protograde::cam
