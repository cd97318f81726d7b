#pragma once

// Training strategies: conventional softmax classification, static
// prototypes inferred after conventional training, and dynamic episodic
// prototypes. Also prediction and the K / distance-statistic sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protograde/encoder.hpp"
#include "protograde/proto.hpp"
#include "protograde/rnfl.hpp"
#include "protograde/tensor.hpp"

namespace protograde {

enum class Strategy { conventional, static_prototypes, dynamic_prototypes };
std::string to_string(Strategy strategy);
/// Accepts "conventional", "static" and "dynamic".
Strategy parse_strategy(const std::string& name);

/// One labelled B-scan ready for the encoder.
struct Sample {
  Tensor image;  // [H, W, channels]
  rnfl::HandFeatureVector hand;
  int label = 0;
  std::string id;
};

struct TrainOptions {
  Strategy strategy = Strategy::dynamic_prototypes;
  double learning_rate = 0.001;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  std::uint64_t seed = 42;
  std::size_t k_shot = 20;
  std::size_t episodes_per_epoch = 1;
  proto::DistanceKind distance = proto::DistanceKind::euclidean;
  proto::Statistic statistic = proto::Statistic::mean;
  /// Called after each epoch with (epoch index, epoch loss).
  std::function<void(std::size_t, double)> on_epoch;

  static TrainOptions defaults_for(Strategy strategy);
};

struct TrainRun {
  TrainOptions options;
  std::vector<double> loss_trace;  // one mean loss per completed epoch
};

struct DynamicResult {
  TrainRun run;
  proto::PrototypeSet prototypes;
};

/// Probability vector for record `index`, built on the given tape.
using ClassifierForward = std::function<Tensor(Tape&, std::size_t)>;

/// Mean cross-entropy of `batch`; gradients are accumulated into whatever
/// the forward pass reads. Throws NumericError on a non-finite loss.
double batch_backward(std::span<const int> labels, std::size_t classes, const ClassifierForward& forward,
                      std::span<const std::size_t> batch);

/// Minibatch SGD on mean cross-entropy over shuffled batches.
/// Throws DataError when a class has no records or a label is out of range.
TrainRun train_classifier(ParameterSet& params, std::span<const int> labels, std::size_t classes,
                          const ClassifierForward& forward, const TrainOptions& options);

/// Fits the hand-feature scaling on `train` and trains encoder + head.
TrainRun train_conventional(HybridEncoder& encoder, std::span<const Sample> train, const TrainOptions& options);

/// Prototypes from every training embedding, per class.
proto::PrototypeSet infer_static_prototypes(const HybridEncoder& encoder, std::span<const Sample> train,
                                            proto::Statistic statistic, proto::DistanceKind distance);

/// Mean query cross-entropy of one episode; gradients reach the encoder
/// through both the query embeddings and the support prototypes.
double episode_backward(const HybridEncoder& encoder, std::span<const Sample> train, const proto::Episode& episode,
                        proto::DistanceKind distance, proto::Statistic statistic);

/// Fits the hand-feature scaling on `train`, trains episodically and
/// returns prototypes recomputed from all of `train`.
DynamicResult train_dynamic(HybridEncoder& encoder, std::span<const Sample> train, const TrainOptions& options);

struct Prediction {
  std::vector<int> labels;
  std::vector<std::vector<double>> probabilities;
};

std::vector<EmbeddingVector> embed_all(const HybridEncoder& encoder, std::span<const Sample> samples);
Prediction predict(const HybridEncoder& encoder, std::span<const Sample> samples,
                   const proto::PrototypeSet& prototypes);
/// Uses the softmax head instead of prototypes.
Prediction predict_with_head(const HybridEncoder& encoder, std::span<const Sample> samples);

/// Fraction of correct predictions and mean cross-entropy against `samples`.
double accuracy(const Prediction& prediction, std::span<const Sample> samples);
double mean_cross_entropy(const Prediction& prediction, std::span<const Sample> samples);

struct SweepRow {
  std::size_t k_shot = 0;
  proto::DistanceKind distance = proto::DistanceKind::euclidean;
  proto::Statistic statistic = proto::Statistic::mean;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
};

/// One dynamic training run per K from a copy of `initial`, scored on `validation`.
/// Every K is checked against the episode range before any training starts.
std::vector<SweepRow> sweep_k(const HybridEncoder& initial, std::span<const Sample> train,
                              std::span<const Sample> validation, std::span<const std::size_t> k_values,
                              const TrainOptions& options, std::size_t threads = 1);

/// The 4 distances x 2 statistics grid, distance-major.
std::vector<SweepRow> sweep_distance_statistic(const HybridEncoder& initial, std::span<const Sample> train,
                                               std::span<const Sample> validation, const TrainOptions& options,
                                               std::size_t threads = 1);

/// CSV with '#' metadata lines and header `k_shot,distance,statistic,val_accuracy,val_loss`.
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows, std::uint64_t seed,
                     const std::string& config_hash);

/// PROTOGRADE_THREADS, defaulting to 1.
std::size_t thread_count_from_env();

}  // namespace protograde
