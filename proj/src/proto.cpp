#include "protograde/proto.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "protograde/config.hpp"
#include "protograde/errors.hpp"
#include "protograde/ops.hpp"
#include "protograde/random.hpp"

namespace protograde::proto {
namespace {

double sign(double v) { return (v > 0.0) - (v < 0.0); }

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Indices of `column` ordered by (value, index); the median is read from the middle.
std::vector<std::size_t> median_sources(const std::vector<double>& column) {
  std::vector<std::size_t> order(column.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return column[a] < column[b]; });
  const std::size_t n = order.size();
  if (n % 2 == 1) return {order[n / 2]};
  return {order[n / 2 - 1], order[n / 2]};
}

}  // namespace

std::string to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::euclidean: return "euclidean";
    case DistanceKind::cosine: return "cosine";
    case DistanceKind::manhattan: return "manhattan";
    case DistanceKind::canberra: return "canberra";
  }
  return "?";
}

std::string to_string(Statistic statistic) { return statistic == Statistic::mean ? "mean" : "median"; }

DistanceKind parse_distance(const std::string& name) {
  for (auto k : kAllDistances)
    if (to_string(k) == name) return k;
  throw ConfigError("unknown distance '" + name + "' (expected euclidean, cosine, manhattan or canberra)");
}

Statistic parse_statistic(const std::string& name) {
  for (auto s : kAllStatistics)
    if (to_string(s) == name) return s;
  throw ConfigError("unknown statistic '" + name + "' (expected mean or median)");
}

double distance(std::span<const double> a, std::span<const double> b, DistanceKind kind) {
  if (a.size() != b.size())
    throw ShapeError("distance between vectors of length " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  double acc = 0.0;
  switch (kind) {
    case DistanceKind::euclidean:
      for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
      return std::sqrt(acc);
    case DistanceKind::manhattan:
      for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
      return acc;
    case DistanceKind::canberra:
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double den = std::abs(a[i]) + std::abs(b[i]);
        if (den > 0.0) acc += std::abs(a[i] - b[i]) / den;
      }
      return acc;
    case DistanceKind::cosine: {
      const double na = norm(a), nb = norm(b);
      if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine distance is undefined for a zero vector");
      for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
      return 1.0 - acc / (na * nb);
    }
  }
  return acc;
}

double distance(const EmbeddingVector& a, const EmbeddingVector& b, DistanceKind kind) {
  return distance(std::span<const double>(a.values), std::span<const double>(b.values), kind);
}

Tensor distance(Tape& tape, const Tensor& a, const Tensor& b, DistanceKind kind) {
  if (a.rank() != 1 || a.shape() != b.shape())
    throw ShapeError("distance between " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  Tensor out = Tensor::zeros({1}, tape.tracks({&a, &b}));
  out[0] = distance(a.data(), b.data(), kind);
  if (!out.requires_grad()) return out;

  tape.record({a, b}, out, [a, b, out, kind]() mutable {
    const double g = out.grad()[0];
    const auto av = a.data(), bv = b.data();
    const std::size_t n = av.size();
    std::vector<double> da(n, 0.0), db(n, 0.0);
    switch (kind) {
      case DistanceKind::euclidean: {
        const double d = out[0];
        if (d > 0.0)
          for (std::size_t i = 0; i < n; ++i) {
            da[i] = (av[i] - bv[i]) / d;
            db[i] = -da[i];
          }
        break;
      }
      case DistanceKind::manhattan:
        for (std::size_t i = 0; i < n; ++i) {
          da[i] = sign(av[i] - bv[i]);
          db[i] = -da[i];
        }
        break;
      case DistanceKind::canberra:
        for (std::size_t i = 0; i < n; ++i) {
          const double s = std::abs(av[i]) + std::abs(bv[i]);
          if (s == 0.0) continue;
          const double u = av[i] - bv[i];
          da[i] = sign(u) / s - std::abs(u) * sign(av[i]) / (s * s);
          db[i] = -sign(u) / s - std::abs(u) * sign(bv[i]) / (s * s);
        }
        break;
      case DistanceKind::cosine: {
        const double na = norm(av), nb = norm(bv);
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += av[i] * bv[i];
        const double sim = dot / (na * nb);
        for (std::size_t i = 0; i < n; ++i) {
          da[i] = -(bv[i] / (na * nb) - sim * av[i] / (na * na));
          db[i] = -(av[i] / (na * nb) - sim * bv[i] / (nb * nb));
        }
        break;
      }
    }
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g * da[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < n; ++i) gb[i] += g * db[i];
    }
  });
  return out;
}

PrototypeSet compute_prototypes(const std::vector<std::vector<EmbeddingVector>>& grouped, Statistic statistic,
                                DistanceKind kind) {
  PrototypeSet set;
  set.statistic = statistic;
  set.distance = kind;
  for (std::size_t c = 0; c < grouped.size(); ++c) {
    const auto& group = grouped[c];
    if (group.empty()) throw DataError("class " + std::to_string(c) + " has no embeddings to build a prototype");
    const std::size_t dim = group.front().size();
    EmbeddingVector proto{std::vector<double>(dim, 0.0)};
    for (const auto& e : group)
      if (e.size() != dim) throw DataError("embeddings of class " + std::to_string(c) + " differ in length");
    std::vector<double> column(group.size());
    for (std::size_t j = 0; j < dim; ++j) {
      for (std::size_t i = 0; i < group.size(); ++i) column[i] = group[i][j];
      if (statistic == Statistic::mean) {
        double s = 0.0;
        for (double v : column) s += v;
        proto.values[j] = s / static_cast<double>(column.size());
      } else {
        const auto src = median_sources(column);
        proto.values[j] = src.size() == 1 ? column[src[0]] : 0.5 * (column[src[0]] + column[src[1]]);
      }
    }
    set.prototypes.push_back(std::move(proto));
  }
  return set;
}

Tensor prototype(Tape& tape, std::span<const Tensor> embeddings, Statistic statistic) {
  if (embeddings.empty()) throw DataError("cannot build a prototype from zero embeddings");
  const Shape shape = embeddings.front().shape();
  if (shape.size() != 1) throw ShapeError("prototype expects 1-D embeddings");
  for (const auto& e : embeddings)
    if (e.shape() != shape) throw ShapeError("prototype embeddings differ in shape");
  const std::size_t n = embeddings.size(), dim = shape[0];

  Tensor out = Tensor::zeros(shape, tape.tracks(embeddings));
  std::vector<std::vector<std::size_t>> sources(dim);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = embeddings[i][j];
    if (statistic == Statistic::mean) {
      double s = 0.0;
      for (double v : column) s += v;
      out[j] = s / static_cast<double>(n);
    } else {
      sources[j] = median_sources(column);
      out[j] = sources[j].size() == 1 ? column[sources[j][0]] : 0.5 * (column[sources[j][0]] + column[sources[j][1]]);
    }
  }
  if (out.requires_grad()) {
    std::vector<Tensor> inputs(embeddings.begin(), embeddings.end());
    tape.record(inputs, out, [inputs, out, statistic, sources = std::move(sources), n, dim]() mutable {
      const auto g = out.grad();
      if (statistic == Statistic::mean) {
        const double inv = 1.0 / static_cast<double>(n);
        for (auto& e : inputs) {
          if (!e.requires_grad()) continue;
          auto ge = e.grad();
          for (std::size_t j = 0; j < dim; ++j) ge[j] += g[j] * inv;
        }
      } else {
        for (std::size_t j = 0; j < dim; ++j) {
          const double share = 1.0 / static_cast<double>(sources[j].size());
          for (auto i : sources[j])
            if (inputs[i].requires_grad()) inputs[i].grad()[j] += g[j] * share;
        }
      }
    });
  }
  return out;
}

std::vector<double> probabilities_from_distances(std::span<const double> distances) {
  std::vector<double> p(distances.size());
  const double shift = *std::min_element(distances.begin(), distances.end());
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) total += (p[c] = std::exp(-(distances[c] - shift)));
  for (auto& v : p) v /= total;
  return p;
}

std::vector<double> class_probabilities(const EmbeddingVector& embedding, const PrototypeSet& prototypes) {
  std::vector<double> d;
  d.reserve(prototypes.classes());
  for (const auto& p : prototypes.prototypes) d.push_back(distance(embedding, p, prototypes.distance));
  return probabilities_from_distances(d);
}

Tensor class_probabilities(Tape& tape, const Tensor& embedding, std::span<const Tensor> prototypes,
                           DistanceKind kind) {
  std::vector<Tensor> d;
  d.reserve(prototypes.size());
  for (const auto& p : prototypes) d.push_back(distance(tape, embedding, p, kind));
  return ops::softmax(tape, ops::affine(tape, ops::stack(tape, d), -1.0, 0.0));
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::size_t minority_count(std::span<const int> labels, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (int y : labels)
    if (y >= 0 && static_cast<std::size_t>(y) < classes) ++counts[static_cast<std::size_t>(y)];
  return *std::min_element(counts.begin(), counts.end());
}

Episode sample_episode(std::span<const int> labels, std::size_t classes, std::size_t k_shot, std::uint64_t seed) {
  const std::size_t p_min = minority_count(labels, classes);
  if (p_min < 2 || k_shot < 1 || k_shot > p_min - 1) {
    const std::string range = p_min < 2 ? "none (minority class has " + std::to_string(p_min) + " records)"
                                        : "[1, " + std::to_string(p_min - 1) + "]";
    throw ConfigError("k_shot = " + std::to_string(k_shot) + " is outside the valid range " + range);
  }
  Episode ep;
  ep.k_shot = k_shot;
  ep.u_query = p_min - k_shot;
  ep.support.resize(classes);
  ep.query.resize(classes);
  Rng rng(seed);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == static_cast<int>(c)) pool.push_back(i);
    rng.shuffle(std::span<std::size_t>(pool));
    ep.support[c].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k_shot));
    ep.query[c].assign(pool.begin() + static_cast<std::ptrdiff_t>(k_shot),
                       pool.begin() + static_cast<std::ptrdiff_t>(k_shot + ep.u_query));
  }
  return ep;
}

void write_prototypes(const std::filesystem::path& path, const PrototypeSet& prototypes,
                      const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write prototypes to " + path.string());
  out << "# config_hash=" << config_hash << "\n";
  out << "# statistic=" << to_string(prototypes.statistic) << "\n";
  out << "# distance=" << to_string(prototypes.distance) << "\n";
  out << "class";
  const std::size_t dim = prototypes.prototypes.empty() ? 0 : prototypes.prototypes.front().size();
  for (std::size_t j = 0; j < dim; ++j) out << ",e" << j;
  out << "\n";
  char buf[40];
  for (std::size_t c = 0; c < prototypes.classes(); ++c) {
    out << c;
    for (double v : prototypes.prototypes[c].values) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
}

LoadedPrototypes read_prototypes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prototypes file " + path.string());
  LoadedPrototypes loaded;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      if (key == "config_hash") loaded.config_hash = value;
      if (key == "statistic") loaded.prototypes.statistic = parse_statistic(value);
      if (key == "distance") loaded.prototypes.distance = parse_distance(value);
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    if (std::stoul(cell) != loaded.prototypes.classes())
      throw DataError(path.string() + ": prototype rows must be listed in class order");
    EmbeddingVector e;
    while (std::getline(ss, cell, ',')) e.values.push_back(std::stod(cell));
    loaded.prototypes.prototypes.push_back(std::move(e));
  }
  if (loaded.prototypes.prototypes.empty()) throw DataError(path.string() + " contains no prototypes");
  return loaded;
}

}  // namespace protograde::proto
