#include "protograde/train.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "protograde/errors.hpp"
#include "protograde/ops.hpp"
#include "protograde/random.hpp"

namespace protograde {
namespace {

std::vector<double> one_hot(int label, std::size_t classes) {
  std::vector<double> y(classes, 0.0);
  y[static_cast<std::size_t>(label)] = 1.0;
  return y;
}

void check_labels(std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) throw DataError("training set is empty");
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw DataError("record " + std::to_string(i) + " has label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(classes - 1) + "]");
    ++counts[static_cast<std::size_t>(labels[i])];
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (counts[c] == 0) throw DataError("class " + std::to_string(c) + " is absent from the training set");
}

std::vector<int> labels_of(std::span<const Sample> samples) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return labels;
}

void fit_scaling(HybridEncoder& encoder, std::span<const Sample> train) {
  std::vector<rnfl::HandFeatureVector> hand;
  hand.reserve(train.size());
  for (const auto& s : train) hand.push_back(s.hand);
  encoder.set_scaling(rnfl::FeatureScaling::fit(hand));
}

void check_finite(double loss, std::size_t epoch) {
  if (!std::isfinite(loss))
    throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + "; training diverged");
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; results are written by index.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::conventional: return "conventional";
    case Strategy::static_prototypes: return "static";
    case Strategy::dynamic_prototypes: return "dynamic";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "conventional") return Strategy::conventional;
  if (name == "static") return Strategy::static_prototypes;
  if (name == "dynamic") return Strategy::dynamic_prototypes;
  throw ConfigError("unknown strategy '" + name + "' (expected conventional, static or dynamic)");
}

TrainOptions TrainOptions::defaults_for(Strategy strategy) {
  TrainOptions o;
  o.strategy = strategy;
  if (strategy == Strategy::dynamic_prototypes) {
    o.learning_rate = 0.001;
    o.epochs = 50;
  } else {
    o.learning_rate = 0.0005;
    o.epochs = 200;
  }
  return o;
}

double batch_backward(std::span<const int> labels, std::size_t classes, const ClassifierForward& forward,
                      std::span<const std::size_t> batch) {
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t i : batch) {
    Tape tape;
    const Tensor p = forward(tape, i);
    const auto y = one_hot(labels[i], classes);
    const Tensor loss = ops::affine(tape, ops::cce_loss(tape, p, y), scale, 0.0);
    total += loss.item();
    if (loss.requires_grad()) tape.backward(loss);
  }
  return total;
}

TrainRun train_classifier(ParameterSet& params, std::span<const int> labels, std::size_t classes,
                          const ClassifierForward& forward, const TrainOptions& options) {
  check_labels(labels, classes);
  if (options.batch_size == 0) throw ConfigError("batch_size must be positive");
  TrainRun run;
  run.options = options;
  Rng rng(options.seed);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      params.zero_grad();
      const double loss = batch_backward(labels, classes, forward, batch);
      check_finite(loss, epoch);
      sgd_step(params, options.learning_rate);
      epoch_loss += loss * static_cast<double>(batch.size());
    }
    epoch_loss /= static_cast<double>(order.size());
    run.loss_trace.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
  }
  return run;
}

TrainRun train_conventional(HybridEncoder& encoder, std::span<const Sample> train, const TrainOptions& options) {
  const auto labels = labels_of(train);
  check_labels(labels, encoder.config().classes);
  fit_scaling(encoder, train);
  const ClassifierForward forward = [&](Tape& tape, std::size_t i) {
    return encoder.classify(tape, encoder.encode(tape, train[i].image, train[i].hand));
  };
  return train_classifier(encoder.parameters(), labels, encoder.config().classes, forward, options);
}

std::vector<EmbeddingVector> embed_all(const HybridEncoder& encoder, std::span<const Sample> samples) {
  std::vector<EmbeddingVector> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(encoder.embed(s.image, s.hand));
  return out;
}

proto::PrototypeSet infer_static_prototypes(const HybridEncoder& encoder, std::span<const Sample> train,
                                            proto::Statistic statistic, proto::DistanceKind distance) {
  check_labels(labels_of(train), encoder.config().classes);
  std::vector<std::vector<EmbeddingVector>> grouped(encoder.config().classes);
  for (const auto& s : train) grouped[static_cast<std::size_t>(s.label)].push_back(encoder.embed(s.image, s.hand));
  return proto::compute_prototypes(grouped, statistic, distance);
}

double episode_backward(const HybridEncoder& encoder, std::span<const Sample> train, const proto::Episode& episode,
                        proto::DistanceKind distance, proto::Statistic statistic) {
  // Embeddings are computed once without a tape, the episode loss is
  // differentiated with respect to them, and each sample is then re-run on
  // its own tape seeded with that gradient. Memory stays at one sample.
  const std::size_t classes = episode.support.size();
  std::vector<std::size_t> members;
  std::vector<Tensor> leaves;
  auto leaf = [&](std::size_t index) {
    const auto e = encoder.embed(train[index].image, train[index].hand);
    members.push_back(index);
    leaves.push_back(Tensor::from({e.size()}, e.values, true));
    return leaves.back();
  };

  Tape head;
  std::vector<Tensor> prototypes;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<Tensor> support;
    for (std::size_t i : episode.support[c]) support.push_back(leaf(i));
    prototypes.push_back(proto::prototype(head, support, statistic));
  }
  std::vector<Tensor> losses;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i : episode.query[c]) {
      const Tensor p = proto::class_probabilities(head, leaf(i), prototypes, distance);
      losses.push_back(ops::cce_loss(head, p, one_hot(static_cast<int>(c), classes)));
    }
  if (losses.empty()) throw ConfigError("episode has no query records");
  const Tensor loss = ops::mean(head, ops::stack(head, losses));
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("non-finite episode loss; training diverged");
  head.backward(loss);

  for (std::size_t m = 0; m < members.size(); ++m) {
    Tape tape;
    const auto& s = train[members[m]];
    const Tensor r = encoder.encode(tape, s.image, s.hand);
    if (r.requires_grad()) tape.backward(r, leaves[m].grad());
  }
  return value;
}

DynamicResult train_dynamic(HybridEncoder& encoder, std::span<const Sample> train, const TrainOptions& options) {
  const std::size_t classes = encoder.config().classes;
  const auto labels = labels_of(train);
  check_labels(labels, classes);
  if (options.episodes_per_epoch == 0) throw ConfigError("episodes_per_epoch must be positive");
  // Validates K before any work is done.
  proto::sample_episode(labels, classes, options.k_shot, options.seed);
  fit_scaling(encoder, train);

  DynamicResult result;
  result.run.options = options;
  Rng episode_seeds(options.seed);
  auto& params = encoder.parameters();
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t e = 0; e < options.episodes_per_epoch; ++e) {
      const auto episode = proto::sample_episode(labels, classes, options.k_shot, episode_seeds.next());
      params.zero_grad();
      const double loss = episode_backward(encoder, train, episode, options.distance, options.statistic);
      check_finite(loss, epoch);
      sgd_step(params, options.learning_rate);
      epoch_loss += loss;
    }
    epoch_loss /= static_cast<double>(options.episodes_per_epoch);
    result.run.loss_trace.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
  }
  result.prototypes = infer_static_prototypes(encoder, train, options.statistic, options.distance);
  return result;
}

Prediction predict(const HybridEncoder& encoder, std::span<const Sample> samples,
                   const proto::PrototypeSet& prototypes) {
  Prediction out;
  for (const auto& s : samples) {
    auto p = proto::class_probabilities(encoder.embed(s.image, s.hand), prototypes);
    out.labels.push_back(static_cast<int>(proto::argmax(p)));
    out.probabilities.push_back(std::move(p));
  }
  return out;
}

Prediction predict_with_head(const HybridEncoder& encoder, std::span<const Sample> samples) {
  Prediction out;
  for (const auto& s : samples) {
    Tape tape(false);
    const Tensor p = encoder.classify(tape, encoder.encode(tape, s.image, s.hand));
    std::vector<double> probs(p.data().begin(), p.data().end());
    out.labels.push_back(static_cast<int>(proto::argmax(probs)));
    out.probabilities.push_back(std::move(probs));
  }
  return out;
}

double accuracy(const Prediction& prediction, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) hits += prediction.labels[i] == samples[i].label;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

double mean_cross_entropy(const Prediction& prediction, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    total -= std::log(std::max(prediction.probabilities[i][static_cast<std::size_t>(samples[i].label)], ops::kLogFloor));
  return total / static_cast<double>(samples.size());
}

namespace {

SweepRow run_cell(const HybridEncoder& initial, std::span<const Sample> train, std::span<const Sample> validation,
                  TrainOptions options) {
  options.on_epoch = nullptr;
  HybridEncoder encoder = initial.clone();
  const auto result = train_dynamic(encoder, train, options);
  const auto prediction = predict(encoder, validation, result.prototypes);
  return {options.k_shot, options.distance, options.statistic, accuracy(prediction, validation),
          mean_cross_entropy(prediction, validation)};
}

}  // namespace

std::vector<SweepRow> sweep_k(const HybridEncoder& initial, std::span<const Sample> train,
                              std::span<const Sample> validation, std::span<const std::size_t> k_values,
                              const TrainOptions& options, std::size_t threads) {
  const auto labels = labels_of(train);
  for (std::size_t k : k_values) proto::sample_episode(labels, initial.config().classes, k, options.seed);
  std::vector<SweepRow> rows(k_values.size());
  parallel_for(k_values.size(), threads, [&](std::size_t i) {
    TrainOptions o = options;
    o.k_shot = k_values[i];
    rows[i] = run_cell(initial, train, validation, o);
  });
  return rows;
}

std::vector<SweepRow> sweep_distance_statistic(const HybridEncoder& initial, std::span<const Sample> train,
                                               std::span<const Sample> validation, const TrainOptions& options,
                                               std::size_t threads) {
  std::vector<TrainOptions> cells;
  for (auto d : proto::kAllDistances)
    for (auto s : proto::kAllStatistics) {
      TrainOptions o = options;
      o.distance = d;
      o.statistic = s;
      cells.push_back(o);
    }
  std::vector<SweepRow> rows(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t i) { rows[i] = run_cell(initial, train, validation, cells[i]); });
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows, std::uint64_t seed,
                     const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write sweep results to " + path.string());
  out << "# seed=" << seed << "\n# config_hash=" << config_hash << "\n";
  out << "k_shot,distance,statistic,val_accuracy,val_loss\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.val_accuracy, r.val_loss);
    out << r.k_shot << ',' << proto::to_string(r.distance) << ',' << proto::to_string(r.statistic) << ',' << buf
        << "\n";
  }
}

std::size_t thread_count_from_env() {
  const char* v = std::getenv("PROTOGRADE_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("PROTOGRADE_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

}  // namespace protograde
