#pragma once

// Prototype classification: distances in embedding space, per-class
// prototypes, distance-softmax probabilities and K-shot episode sampling.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "protograde/encoder.hpp"
#include "protograde/tensor.hpp"

namespace protograde::proto {

enum class DistanceKind { euclidean, cosine, manhattan, canberra };
enum class Statistic { mean, median };

inline constexpr DistanceKind kAllDistances[] = {DistanceKind::euclidean, DistanceKind::cosine,
                                                 DistanceKind::manhattan, DistanceKind::canberra};
inline constexpr Statistic kAllStatistics[] = {Statistic::mean, Statistic::median};

std::string to_string(DistanceKind kind);
std::string to_string(Statistic statistic);
/// Throws ConfigError on unknown names.
DistanceKind parse_distance(const std::string& name);
Statistic parse_statistic(const std::string& name);

/// euclidean: ||a-b||_2; cosine: 1 - a.b/(|a||b|); manhattan: sum|a-b|;
/// canberra: sum |a-b|/(|a|+|b|) with 0/0 terms taken as 0.
/// Throws ShapeError on length mismatch, std::domain_error for cosine with a zero vector.
double distance(std::span<const double> a, std::span<const double> b, DistanceKind kind);
double distance(const EmbeddingVector& a, const EmbeddingVector& b, DistanceKind kind);

/// Differentiable distance between two 1-D tensors; returns a scalar tensor.
Tensor distance(Tape& tape, const Tensor& a, const Tensor& b, DistanceKind kind);

struct PrototypeSet {
  std::vector<EmbeddingVector> prototypes;  // index = class
  Statistic statistic = Statistic::mean;
  DistanceKind distance = DistanceKind::euclidean;

  std::size_t classes() const { return prototypes.size(); }
};

/// Coordinate-wise mean or median of each class group.
/// Throws DataError if a group is empty or lengths disagree.
PrototypeSet compute_prototypes(const std::vector<std::vector<EmbeddingVector>>& grouped, Statistic statistic,
                                DistanceKind distance = DistanceKind::euclidean);

/// Differentiable prototype of one class group.
Tensor prototype(Tape& tape, std::span<const Tensor> embeddings, Statistic statistic);

/// softmax(-delta) over classes.
std::vector<double> probabilities_from_distances(std::span<const double> distances);
std::vector<double> class_probabilities(const EmbeddingVector& embedding, const PrototypeSet& prototypes);
Tensor class_probabilities(Tape& tape, const Tensor& embedding, std::span<const Tensor> prototypes,
                           DistanceKind kind);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Per-class record indices of one K-shot episode.
struct Episode {
  std::vector<std::vector<std::size_t>> support;  // [class][k]
  std::vector<std::vector<std::size_t>> query;    // [class][u]
  std::size_t k_shot = 0;
  std::size_t u_query = 0;
};

/// Smallest per-class count among `labels` (0 if a class is absent).
std::size_t minority_count(std::span<const int> labels, std::size_t classes);

/// Draws K support and P_min - K query records per class without replacement.
/// Throws ConfigError unless 1 <= k_shot <= P_min - 1, reporting the valid range.
Episode sample_episode(std::span<const int> labels, std::size_t classes, std::size_t k_shot, std::uint64_t seed);

/// CSV with '#' metadata lines (config_hash, statistic, distance), header
/// `class,e0,...` and one row per class, values in round-trip precision.
void write_prototypes(const std::filesystem::path& path, const PrototypeSet& prototypes,
                      const std::string& config_hash);
struct LoadedPrototypes {
  PrototypeSet prototypes;
  std::string config_hash;
};
LoadedPrototypes read_prototypes(const std::filesystem::path& path);

}  // namespace protograde::proto
