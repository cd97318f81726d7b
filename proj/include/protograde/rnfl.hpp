#pragma once

// Hand-crafted RNFL descriptor: per-column layer thickness summarised as a
// four-bag histogram plus min/max/mean thickness and patient age.

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace protograde::rnfl {

/// Binary layer mask, row-major, 1 = RNFL pixel.
class RnflMask {
 public:
  RnflMask() = default;
  /// Throws DataError if any value is not 0 or 1.
  RnflMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> values);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::uint8_t at(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }
  std::span<const std::uint8_t> values() const { return values_; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> values_;
};

/// Layer thickness in pixels for each mask column.
struct ThicknessVector {
  std::vector<std::uint32_t> values;
};

inline constexpr std::size_t kBagCount = 4;
inline constexpr std::size_t kFeatureCount = 8;

/// Bag boundaries D; bag b covers [D[b], D[b+1]).
using BagEdges = std::array<double, kBagCount + 1>;

inline constexpr BagEdges kDefaultBagEdges{0.0, 15.0, 30.0, 45.0, std::numeric_limits<double>::infinity()};

/// Throws ConfigError unless edges start at 0, end at +inf and strictly increase.
void validate_edges(const BagEdges& edges);

struct HandFeatureVector {
  std::array<double, kBagCount> bags{};
  double t_min = 0.0;
  double t_max = 0.0;
  double t_mean = 0.0;
  double age = 0.0;

  /// [bag1..bag4, t_min, t_max, t_mean, age].
  std::array<double, kFeatureCount> to_array() const;
};

ThicknessVector compute_thickness(const RnflMask& mask);

std::array<std::uint32_t, kBagCount> bag_histogram(const ThicknessVector& thickness,
                                                   const BagEdges& edges = kDefaultBagEdges);

/// Throws DataError on a zero-width mask.
HandFeatureVector hand_features(const RnflMask& mask, double age, const BagEdges& edges = kDefaultBagEdges);
HandFeatureVector hand_features(const ThicknessVector& thickness, double age,
                                const BagEdges& edges = kDefaultBagEdges);

/// Per-feature z-score parameters estimated on a training set.
struct FeatureScaling {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> stddev{1, 1, 1, 1, 1, 1, 1, 1};

  /// Zero-variance features get stddev 1 so they standardise to 0.
  static FeatureScaling fit(std::span<const HandFeatureVector> features);
  std::array<double, kFeatureCount> apply(const HandFeatureVector& f) const;
};

}  // namespace protograde::rnfl
