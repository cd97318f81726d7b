#include "protograde/rnfl.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "protograde/errors.hpp"

namespace protograde::rnfl {

RnflMask::RnflMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != height_ * width_)
    throw DataError("mask holds " + std::to_string(values_.size()) + " values, expected " +
                    std::to_string(height_ * width_));
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (values_[i] > 1)
      throw DataError("mask is not binary: value " + std::to_string(values_[i]) + " at row " +
                      std::to_string(i / width_) + ", column " + std::to_string(i % width_));
}

void validate_edges(const BagEdges& edges) {
  if (edges.front() != 0.0) throw ConfigError("bag edges must start at 0");
  if (!std::isinf(edges.back()) || edges.back() < 0) throw ConfigError("bag edges must end at +inf");
  for (std::size_t b = 0; b + 1 < edges.size(); ++b)
    if (!(edges[b] < edges[b + 1])) throw ConfigError("bag edges must be strictly increasing");
}

std::array<double, kFeatureCount> HandFeatureVector::to_array() const {
  return {bags[0], bags[1], bags[2], bags[3], t_min, t_max, t_mean, age};
}

ThicknessVector compute_thickness(const RnflMask& mask) {
  ThicknessVector t;
  t.values.assign(mask.width(), 0);
  const auto v = mask.values();
  for (std::size_t r = 0; r < mask.height(); ++r)
    for (std::size_t c = 0; c < mask.width(); ++c) t.values[c] += v[r * mask.width() + c];
  return t;
}

std::array<std::uint32_t, kBagCount> bag_histogram(const ThicknessVector& thickness, const BagEdges& edges) {
  validate_edges(edges);
  std::array<std::uint32_t, kBagCount> counts{};
  for (auto t : thickness.values) {
    // upper_bound finds the first edge > t; its predecessor opens t's bag.
    const auto it = std::upper_bound(edges.begin(), edges.end(), static_cast<double>(t));
    const auto bag = static_cast<std::size_t>(it - edges.begin()) - 1;
    ++counts[std::min(bag, kBagCount - 1)];
  }
  return counts;
}

HandFeatureVector hand_features(const ThicknessVector& thickness, double age, const BagEdges& edges) {
  if (thickness.values.empty()) throw DataError("cannot describe an empty mask (zero columns)");
  HandFeatureVector f;
  const auto counts = bag_histogram(thickness, edges);
  for (std::size_t b = 0; b < kBagCount; ++b) f.bags[b] = counts[b];
  const auto [lo, hi] = std::minmax_element(thickness.values.begin(), thickness.values.end());
  f.t_min = *lo;
  f.t_max = *hi;
  double total = 0.0;
  for (auto t : thickness.values) total += t;
  f.t_mean = total / static_cast<double>(thickness.values.size());
  f.age = age;
  return f;
}

HandFeatureVector hand_features(const RnflMask& mask, double age, const BagEdges& edges) {
  if (mask.width() == 0) throw DataError("cannot describe an empty mask (zero columns)");
  return hand_features(compute_thickness(mask), age, edges);
}

FeatureScaling FeatureScaling::fit(std::span<const HandFeatureVector> features) {
  FeatureScaling s;
  if (features.empty()) return s;
  const double n = static_cast<double>(features.size());
  for (const auto& f : features) {
    const auto a = f.to_array();
    for (std::size_t k = 0; k < kFeatureCount; ++k) s.mean[k] += a[k];
  }
  for (auto& m : s.mean) m /= n;
  std::array<double, kFeatureCount> var{};
  for (const auto& f : features) {
    const auto a = f.to_array();
    for (std::size_t k = 0; k < kFeatureCount; ++k) var[k] += (a[k] - s.mean[k]) * (a[k] - s.mean[k]);
  }
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    const double sd = std::sqrt(var[k] / n);
    s.stddev[k] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

std::array<double, kFeatureCount> FeatureScaling::apply(const HandFeatureVector& f) const {
  auto a = f.to_array();
  for (std::size_t k = 0; k < kFeatureCount; ++k) a[k] = (a[k] - mean[k]) / stddev[k];
  return a;
}

}  // namespace protograde::rnfl
