#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "protograde/encoder.hpp"
#include "protograde/random.hpp"
#include "protograde/rnfl.hpp"
#include "protograde/tensor.hpp"
#include "protograde/train.hpp"

namespace testing {

using namespace protograde;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Small encoder with at most a few thousand parameters.
inline EncoderConfig random_tiny_config(Rng& rng) {
  EncoderConfig c;
  c.height = 8 + rng.below(6);
  c.width = 8 + rng.below(8);
  c.channels = 1 + rng.below(2);
  c.conv_blocks.clear();
  const std::size_t blocks = 1 + rng.below(2);
  for (std::size_t b = 0; b < blocks; ++b)
    c.conv_blocks.push_back({2 + rng.below(3), 3, false, rng.below(2) == 1});
  c.residual_width = 2 + rng.below(3);
  c.residual_vertical = 2 + rng.below(3);
  c.attention_width = rng.below(2) == 0 ? 2 : 4;
  c.deep_channels = 2 + rng.below(3);
  c.projection_hidden = 4 + rng.below(4);
  c.projection_dim = 2 + rng.below(3);
  c.projection_relu = rng.below(4) != 0;
  return c;
}

inline rnfl::HandFeatureVector random_hand(std::size_t columns, std::size_t height, Rng& rng) {
  rnfl::ThicknessVector t;
  for (std::size_t j = 0; j < columns; ++j) t.values.push_back(static_cast<std::uint32_t>(rng.below(height + 1)));
  return rnfl::hand_features(t, rng.uniform(40.0, 80.0));
}

// Uniform-noise images keep activations away from exact ReLU/max-pool ties.
inline std::vector<Sample> random_samples(const EncoderConfig& c, std::size_t per_class, Rng& rng) {
  std::vector<Sample> out;
  for (std::size_t k = 0; k < c.classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      Sample s;
      s.image = random_tensor({c.height, c.width, c.channels}, rng, 0.0, 1.0);
      s.hand = random_hand(c.width, c.height, rng);
      s.label = static_cast<int>(k);
      s.id = "s" + std::to_string(out.size());
      out.push_back(std::move(s));
    }
  return out;
}

inline void fit_scaling(HybridEncoder& encoder, const std::vector<Sample>& samples) {
  std::vector<rnfl::HandFeatureVector> hand;
  for (const auto& s : samples) hand.push_back(s.hand);
  encoder.set_scaling(rnfl::FeatureScaling::fit(hand));
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t kinks = 0;     // points with a hinge inside the finite-difference step
  std::size_t failures = 0;
  double worst = 0.0;        // largest relative error among smooth points
  std::string first_failure;
  std::string first_kink;
};

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Compares analytic gradients against central differences for every scalar
// of every tensor in `targets`. `loss` must zero and refill the gradients it
// reports; it is also used for the perturbed evaluations.
inline GradCheck check_gradients(const std::vector<std::pair<std::string, Tensor>>& targets,
                                 const std::function<double()>& loss, double eps, double tolerance,
                                 double floor) {
  const double centre = loss();
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : targets) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheck r;
  for (std::size_t p = 0; p < targets.size(); ++p) {
    Tensor t = targets[p].second;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + eps;
      const double up = loss();
      t[i] = orig - eps;
      const double down = loss();
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      ++r.checked;
      const double err = relative_error(analytic[p][i], numeric, floor);
      if (err <= tolerance) {
        r.worst = std::max(r.worst, err);
        continue;
      }
      const double right = (up - centre) / eps, left = (centre - down) / eps;
      // A hinge inside the step bends only one side: the analytic value then
      // follows the smooth side while the two sides disagree.
      const double side = std::min(relative_error(analytic[p][i], left, floor),
                                   relative_error(analytic[p][i], right, floor));
      if (relative_error(right, left, floor) > tolerance && side <= 10.0 * tolerance) {
        if (r.kinks++ == 0)
          r.first_kink = targets[p].first + "[" + std::to_string(i) + "]: analytic " + sci(analytic[p][i]) +
                         " left " + sci(left) + " right " + sci(right);
        continue;
      }
      if (r.failures++ == 0)
        r.first_failure = targets[p].first + "[" + std::to_string(i) + "]: analytic " +
                          sci(analytic[p][i]) + " numeric " + sci(numeric);
    }
  }
  return r;
}

inline std::vector<std::pair<std::string, Tensor>> trainable(const ParameterSet& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : params.items())
    if (!p.frozen) out.emplace_back(p.name, p.value);
  return out;
}

// Zero biases put whole zero regions exactly on ReLU hinges, where the loss
// has no derivative. Small random biases move the check to smooth points.
inline void jitter_biases(ParameterSet& params, Rng& rng) {
  for (auto& p : params.items())
    if (p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0)
      for (auto& v : p.value.data()) v = rng.uniform(-0.1, 0.1);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("protograde_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
