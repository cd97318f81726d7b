#include "protograde/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "protograde/cam.hpp"
#include "protograde/checkpoint.hpp"
#include "protograde/errors.hpp"
#include "protograde/metrics.hpp"
#include "protograde/pgm.hpp"

namespace protograde {
namespace fs = std::filesystem;
namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

fs::path absolute_under(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) path = base / path;
  return fs::absolute(path).lexically_normal();
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

enum class Part { train, validation, test };

Part parse_part(const std::string& name) {
  if (name == "train") return Part::train;
  if (name == "val" || name == "validation") return Part::validation;
  if (name == "test") return Part::test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

const std::vector<dataset::BScanRecord>& records_of(const dataset::Split& split, Part part) {
  return part == Part::train ? split.train : part == Part::validation ? split.validation : split.test;
}

std::string part_name(Part part) {
  return part == Part::train ? "train" : part == Part::validation ? "val" : "test";
}

dataset::Split load_split(const RunConfig& run) {
  return dataset::patient_split(dataset::load_manifest(run.manifest), run.split);
}

struct Restored {
  RunConfig run;
  HybridEncoder encoder;
  std::string hash;
};

Restored restore(const fs::path& checkpoint_path) {
  auto ck = load_checkpoint(checkpoint_path);
  const auto raw = KeyValueConfig::parse(ck.config_text, checkpoint_path.string());
  RunConfig run = RunConfig::resolve(raw, checkpoint_path.parent_path());
  HybridEncoder encoder(run.encoder, std::move(ck.params), ck.scaling);
  return {std::move(run), std::move(encoder), ck.config_hash};
}

void write_report(const fs::path& dir, const std::string& prefix, std::span<const Sample> samples,
                  const Prediction& prediction, std::ostream& out) {
  std::vector<int> truth;
  for (const auto& s : samples) truth.push_back(s.label);
  const auto cm = metrics::confusion(truth, prediction.labels, dataset::kClassNames.size());
  const auto report = metrics::make_report(cm, dataset::class_names());
  write_text(dir / (prefix + "_per_class.csv"), metrics::per_class_csv(report));
  write_text(dir / (prefix + "_averages.csv"), metrics::averages_csv(report));
  write_text(dir / (prefix + "_confusion.csv"), metrics::confusion_csv(cm, dataset::class_names()));
  const std::string text = metrics::report_text(report);
  write_text(dir / (prefix + "_report.txt"), text);
  out << text;
  char line[64];
  std::snprintf(line, sizeof line, "accuracy: %.4f (%zu records)\n", accuracy(prediction, samples), samples.size());
  out << line;
}

void print_counts(std::ostream& out, const std::vector<dataset::BScanRecord>& records, const std::string& title) {
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& r : records) ++counts[r.label];
  out << title << ": " << records.size() << " records (healthy " << counts[0] << ", early " << counts[1]
      << ", advanced " << counts[2] << ")\n";
}

// ---- commands -------------------------------------------------------------

int cmd_gen_synthetic(const std::string& spec_path, const std::string& out_dir,
                      const std::optional<long long>& samples, const std::optional<long long>& seed,
                      std::ostream& out) {
  KeyValueConfig cfg = spec_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(spec_path);
  if (samples) cfg.set("samples_per_class", std::to_string(*samples));
  if (seed) cfg.set("seed", std::to_string(*seed));
  const auto spec = dataset::SyntheticSpec::from_config(cfg);
  const auto set = dataset::generate_synthetic(spec, out_dir);
  print_counts(out, set.records, "wrote " + (fs::path(out_dir) / "manifest.csv").string());
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::optional<std::string>& strategy,
              const std::string& out_override, std::ostream& out) {
  KeyValueConfig raw = KeyValueConfig::load(config_path);
  const fs::path base = fs::absolute(config_path).parent_path();
  if (!out_override.empty()) raw.set("out_dir", fs::absolute(out_override).lexically_normal().string());
  const RunConfig run = RunConfig::resolve(raw, base, strategy);
  fs::create_directories(run.out_dir);
  write_text(run.out_dir / "config.resolved.txt", run.text());

  const auto split = load_split(run);
  print_counts(out, split.train, "train");
  print_counts(out, split.validation, "val");
  const auto train = dataset::load_samples(split.train, run.encoder);
  const auto val = dataset::load_samples(split.validation, run.encoder);

  HybridEncoder encoder(run.encoder, run.options.seed);
  TrainOptions options = run.options;
  options.on_epoch = [&](std::size_t epoch, double loss) {
    if ((epoch + 1) % 10 == 0 || epoch == 0 || epoch + 1 == options.epochs) {
      char line[96];
      std::snprintf(line, sizeof line, "epoch %zu/%zu loss %.6f\n", epoch + 1, options.epochs, loss);
      out << line << std::flush;
    }
  };

  TrainRun trace;
  std::optional<proto::PrototypeSet> prototypes;
  switch (run.strategy) {
    case Strategy::conventional:
      trace = train_conventional(encoder, train, options);
      break;
    case Strategy::static_prototypes:
      trace = train_conventional(encoder, train, options);
      prototypes = infer_static_prototypes(encoder, train, options.statistic, options.distance);
      break;
    case Strategy::dynamic_prototypes: {
      auto result = train_dynamic(encoder, train, options);
      trace = std::move(result.run);
      prototypes = std::move(result.prototypes);
      break;
    }
  }

  save_checkpoint(run.out_dir / "checkpoint.pgck", encoder, run.text());
  if (prototypes) proto::write_prototypes(run.out_dir / "prototypes.csv", *prototypes, run.hash());
  std::string loss = "epoch,loss\n";
  for (std::size_t e = 0; e < trace.loss_trace.size(); ++e)
    loss += std::to_string(e + 1) + "," + fmt17(trace.loss_trace[e]) + "\n";
  write_text(run.out_dir / "loss_trace.csv", loss);

  out << "validation (" << to_string(run.strategy) << ")\n";
  const auto prediction = prototypes ? predict(encoder, val, *prototypes) : predict_with_head(encoder, val);
  write_report(run.out_dir, "val", val, prediction, out);
  out << "outputs in " << run.out_dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& prototypes_path, const std::string& split_name,
             const std::string& config_path, const std::string& out_override, std::ostream& out) {
  const Part part = parse_part(split_name);
  auto restored = restore(checkpoint);
  if (!config_path.empty()) {
    const auto given = RunConfig::load(config_path);
    if (given.hash() != restored.hash)
      throw ConfigError("config hash " + given.hash() + " does not match checkpoint hash " + restored.hash);
  }
  std::optional<proto::PrototypeSet> prototypes;
  if (!prototypes_path.empty()) {
    auto loaded = proto::read_prototypes(prototypes_path);
    if (loaded.config_hash != restored.hash)
      throw ConfigError("prototypes were written for config " + loaded.config_hash + " but the checkpoint has " +
                        restored.hash);
    if (loaded.prototypes.classes() != restored.run.encoder.classes ||
        loaded.prototypes.prototypes.front().size() != restored.run.encoder.embedding_width())
      throw ConfigError("prototype file does not fit the checkpoint's encoder");
    prototypes = std::move(loaded.prototypes);
  } else if (restored.run.strategy != Strategy::conventional) {
    throw ConfigError("--prototypes is required for the " + to_string(restored.run.strategy) + " strategy");
  }

  const auto split = load_split(restored.run);
  const auto samples = dataset::load_samples(records_of(split, part), restored.run.encoder);
  const auto prediction =
      prototypes ? predict(restored.encoder, samples, *prototypes) : predict_with_head(restored.encoder, samples);
  const fs::path dir = out_override.empty() ? fs::absolute(checkpoint).parent_path() : fs::path(out_override);
  fs::create_directories(dir);
  out << part_name(part) << " split\n";
  write_report(dir, "eval_" + part_name(part), samples, prediction, out);
  return kExitOk;
}

int cmd_sweep(const std::string& mode, const std::string& config_path, const std::string& out_override,
              std::ostream& out) {
  if (mode != "k" && mode != "distance") throw ConfigError("--mode must be k or distance");
  KeyValueConfig raw = KeyValueConfig::load(config_path);
  if (!out_override.empty()) raw.set("out_dir", fs::absolute(out_override).lexically_normal().string());
  const RunConfig run = RunConfig::resolve(raw, fs::absolute(config_path).parent_path(), std::string("dynamic"));
  fs::create_directories(run.out_dir);
  write_text(run.out_dir / "config.resolved.txt", run.text());

  const auto split = load_split(run);
  const auto train = dataset::load_samples(split.train, run.encoder);
  const auto val = dataset::load_samples(split.validation, run.encoder);
  const HybridEncoder initial(run.encoder, run.options.seed);
  const std::size_t threads = thread_count_from_env();

  const auto rows = mode == "k" ? sweep_k(initial, train, val, run.k_values, run.options, threads)
                                : sweep_distance_statistic(initial, train, val, run.options, threads);
  const fs::path csv = run.out_dir / (mode == "k" ? "sweep_k.csv" : "sweep_distance.csv");
  write_sweep_csv(csv, rows, run.options.seed, run.hash());
  out << "k_shot  distance   statistic  val_accuracy  val_loss\n";
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%6zu  %-9s  %-9s  %12.4f  %8.4f\n", r.k_shot, proto::to_string(r.distance).c_str(),
                  proto::to_string(r.statistic).c_str(), r.val_accuracy, r.val_loss);
    out << line;
  }
  out << "wrote " << csv.string() << "\n";
  return kExitOk;
}

int cmd_export(const std::string& checkpoint, const std::string& split_name, const std::string& out_path,
               std::ostream& out) {
  const Part part = parse_part(split_name);
  auto restored = restore(checkpoint);
  const auto split = load_split(restored.run);
  const auto train = dataset::load_samples(split.train, restored.run.encoder);
  const auto protos = infer_static_prototypes(restored.encoder, train, restored.run.options.statistic,
                                              restored.run.options.distance);
  const auto samples =
      part == Part::train ? train : dataset::load_samples(records_of(split, part), restored.run.encoder);

  std::string csv = "kind,id,label";
  for (std::size_t j = 0; j < restored.run.encoder.embedding_width(); ++j) csv += ",e" + std::to_string(j);
  csv += "\n";
  auto row = [&](const std::string& kind, const std::string& id, int label, const EmbeddingVector& e) {
    csv += kind + "," + id + "," + dataset::kClassNames[static_cast<std::size_t>(label)];
    for (double v : e.values) csv += "," + fmt17(v);
    csv += "\n";
  };
  const auto embeddings = embed_all(restored.encoder, samples);
  for (std::size_t i = 0; i < samples.size(); ++i) row("record", samples[i].id, samples[i].label, embeddings[i]);
  for (std::size_t c = 0; c < protos.classes(); ++c)
    row("prototype", std::string("prototype_") + dataset::kClassNames[c], static_cast<int>(c), protos.prototypes[c]);

  const fs::path path = out_path.empty()
                            ? fs::absolute(checkpoint).parent_path() / ("embeddings_" + part_name(part) + ".csv")
                            : fs::path(out_path);
  write_text(path, csv);
  out << "wrote " << samples.size() << " embeddings and " << protos.classes() << " prototypes to " << path.string()
      << "\n";
  return kExitOk;
}

int cmd_cam(const std::string& checkpoint, const std::string& image_path, const std::string& mask_path,
            const std::optional<double>& age_opt, const std::string& prototypes_path, const std::string& method,
            const std::string& out_path, std::ostream& out, std::ostream& err) {
  if (method != "auto" && method != "grad" && method != "classic")
    throw ConfigError("--method must be auto, grad or classic");
  auto restored = restore(checkpoint);
  const auto& ecfg = restored.run.encoder;
  if (restored.run.options.epochs == 0 || restored.run.options.learning_rate == 0.0)
    err << "warning: checkpoint was never updated by training; the map reflects initial weights\n";

  const auto img = pgm::read(image_path);
  if (img.height != ecfg.height || img.width != ecfg.width)
    throw DataError(image_path + " is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                    ", the checkpoint expects " + std::to_string(ecfg.height) + "x" + std::to_string(ecfg.width));
  const auto grey = pgm::normalized(img);
  std::vector<double> values(grey.size() * ecfg.channels);
  for (std::size_t i = 0; i < grey.size(); ++i)
    for (std::size_t k = 0; k < ecfg.channels; ++k) values[i * ecfg.channels + k] = grey[i];
  const Tensor image = Tensor::from({img.height, img.width, ecfg.channels}, std::move(values));

  rnfl::RnflMask mask;
  if (!mask_path.empty()) {
    mask = dataset::load_mask(mask_path);
  } else {
    std::vector<std::uint8_t> bits(grey.size());
    for (std::size_t i = 0; i < grey.size(); ++i) bits[i] = grey[i] >= 0.5 ? 1 : 0;
    mask = rnfl::RnflMask(img.height, img.width, std::move(bits));
  }
  if (mask.height() != img.height || mask.width() != img.width)
    throw DataError("mask dimensions differ from the image");
  const double age = age_opt ? *age_opt : restored.encoder.scaling().mean[rnfl::kFeatureCount - 1];
  const auto hand = rnfl::hand_features(mask, age, ecfg.bag_edges);

  std::string protos = prototypes_path;
  if (protos.empty() && restored.run.strategy != Strategy::conventional) {
    const fs::path beside = fs::absolute(checkpoint).parent_path() / "prototypes.csv";
    if (fs::exists(beside)) protos = beside.string();
  }
  cam::Heatmap map;
  if (method == "classic") {
    map = cam::classic_cam(restored.encoder, image, hand);
  } else if (!protos.empty()) {
    const auto loaded = proto::read_prototypes(protos);
    if (loaded.config_hash != restored.hash) throw ConfigError("prototypes do not belong to this checkpoint");
    map = cam::grad_cam(restored.encoder, image, hand, loaded.prototypes);
  } else {
    map = cam::grad_cam_head(restored.encoder, image, hand);
  }
  const fs::path path = out_path.empty() ? fs::path(fs::path(image_path).stem().string() + "_cam.pgm") : fs::path(out_path);
  pgm::write(path, pgm::from_unit(map.height, map.width, map.values));
  out << "predicted " << dataset::kClassNames[static_cast<std::size_t>(map.predicted)] << "; wrote " << path.string()
      << "\n";
  return kExitOk;
}

}  // namespace

const std::vector<std::string>& RunConfig::run_keys() {
  static const std::vector<std::string> keys{
      "strategy",  "manifest",  "out_dir",  "seed",          "learning_rate", "epochs",       "batch_size",
      "k_shot",    "k_values",  "distance", "statistic",     "test_fraction", "val_fraction", "episodes_per_epoch"};
  return keys;
}

RunConfig RunConfig::resolve(const KeyValueConfig& raw, const fs::path& base_dir,
                             const std::optional<std::string>& strategy_override) {
  std::set<std::string> allowed(run_keys().begin(), run_keys().end());
  allowed.insert(EncoderConfig::config_keys().begin(), EncoderConfig::config_keys().end());
  raw.reject_unknown(allowed);

  RunConfig run;
  KeyValueConfig& r = run.resolved;
  r = raw;
  if (strategy_override) r.set("strategy", *strategy_override);
  run.strategy = parse_strategy(r.get_string("strategy", "dynamic"));
  r.set("strategy", to_string(run.strategy));

  if (!r.contains("manifest")) throw ConfigError("config key 'manifest' is required");
  run.manifest = absolute_under(base_dir, r.get_string("manifest"));
  r.set("manifest", run.manifest.string());
  run.out_dir = absolute_under(base_dir, r.get_string("out_dir", "run"));
  r.set("out_dir", run.out_dir.string());

  const TrainOptions defaults = TrainOptions::defaults_for(run.strategy);
  r.set_default("learning_rate", format_double(defaults.learning_rate));
  r.set_default("epochs", std::to_string(defaults.epochs));
  r.set_default("batch_size", std::to_string(defaults.batch_size));
  r.set_default("seed", std::to_string(defaults.seed));
  r.set_default("k_shot", std::to_string(defaults.k_shot));
  r.set_default("episodes_per_epoch", std::to_string(defaults.episodes_per_epoch));
  r.set_default("k_values", "1,5,10,20");
  r.set_default("distance", proto::to_string(defaults.distance));
  r.set_default("statistic", proto::to_string(defaults.statistic));
  r.set_default("test_fraction", "1/6");
  r.set_default("val_fraction", "1/5");

  auto non_negative = [&](const std::string& key) {
    const long long v = r.get_int(key);
    if (v < 0) throw ConfigError(key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  TrainOptions& o = run.options;
  o = defaults;
  o.learning_rate = r.get_double("learning_rate");
  if (!std::isfinite(o.learning_rate) || o.learning_rate < 0.0)
    throw ConfigError("learning_rate must be finite and non-negative");
  o.epochs = non_negative("epochs");
  o.batch_size = non_negative("batch_size");
  if (o.batch_size == 0) throw ConfigError("batch_size must be positive");
  o.seed = static_cast<std::uint64_t>(non_negative("seed"));
  o.k_shot = non_negative("k_shot");
  o.episodes_per_epoch = non_negative("episodes_per_epoch");
  if (o.episodes_per_epoch == 0) throw ConfigError("episodes_per_epoch must be positive");
  o.distance = proto::parse_distance(r.get_string("distance"));
  o.statistic = proto::parse_statistic(r.get_string("statistic"));
  for (long long k : r.get_int_list("k_values")) {
    if (k < 1) throw ConfigError("k_values entries must be positive");
    run.k_values.push_back(static_cast<std::size_t>(k));
  }
  r.set("k_values", join_sizes(run.k_values));

  run.split.test_fraction = r.get_double("test_fraction");
  run.split.val_fraction = r.get_double("val_fraction");
  run.split.seed = o.seed;
  run.split.validate();

  run.encoder = EncoderConfig::from_config(r);
  run.encoder.validate();
  if (run.encoder.classes != dataset::kClassNames.size())
    throw ConfigError("classes must be " + std::to_string(dataset::kClassNames.size()) +
                      " to match the label set");
  run.encoder.write_to(r);
  return run;
}

RunConfig RunConfig::load(const fs::path& path, const std::optional<std::string>& strategy_override) {
  return resolve(KeyValueConfig::load(path), fs::absolute(path).parent_path(), strategy_override);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prototype-based glaucoma grading from circumpapillary OCT B-scans", "protograde"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, checkpoint, prototypes, split_name = "test", mode, image, mask,
      method = "auto";
  std::optional<long long> samples, seed;
  std::optional<std::string> strategy;
  std::optional<double> age;

  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic B-scan dataset and manifest");
  gen->add_option("--spec", spec_path, "Synthetic spec file (key = value)")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--samples-per-class", samples, "Override samples_per_class");
  gen->add_option("--seed", seed, "Override the generator seed");

  auto* train = app.add_subcommand("train", "Train an encoder with the configured strategy");
  train->add_option("--config", config_path, "Run config file")->required();
  train->add_option("--strategy", strategy, "conventional, static or dynamic");
  train->add_option("--out", out_dir, "Override out_dir");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--prototypes", prototypes, "Prototype file (omit for the conventional head)");
  eval->add_option("--split", split_name, "train, val or test");
  eval->add_option("--config", config_path, "Optional config that must match the checkpoint");
  eval->add_option("--out", out_dir, "Report directory (default: next to the checkpoint)");

  auto* sweep = app.add_subcommand("sweep", "K-shot or distance/statistic sweep");
  sweep->add_option("--mode", mode, "k or distance")->required();
  sweep->add_option("--config", config_path, "Run config file")->required();
  sweep->add_option("--out", out_dir, "Override out_dir");

  auto* exp = app.add_subcommand("export-embeddings", "Write embeddings and prototypes as CSV");
  exp->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  exp->add_option("--split", split_name, "train, val or test");
  exp->add_option("--out", out_dir, "Output CSV path");

  auto* cam_cmd = app.add_subcommand("cam", "Write a class activation heatmap as PGM");
  cam_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  cam_cmd->add_option("--image", image, "Input B-scan (PGM)")->required();
  cam_cmd->add_option("--mask", mask, "RNFL mask (PGM); default thresholds the image");
  cam_cmd->add_option("--age", age, "Patient age; default is the training mean");
  cam_cmd->add_option("--prototypes", prototypes, "Prototype file (default: prototypes.csv beside the checkpoint)");
  cam_cmd->add_option("--method", method, "auto, grad or classic");
  cam_cmd->add_option("--out", out_dir, "Output PGM path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_synthetic(spec_path, out_dir, samples, seed, out);
    if (train->parsed()) return cmd_train(config_path, strategy, out_dir, out);
    if (eval->parsed()) return cmd_eval(checkpoint, prototypes, split_name, config_path, out_dir, out);
    if (sweep->parsed()) return cmd_sweep(mode, config_path, out_dir, out);
    if (exp->parsed()) return cmd_export(checkpoint, split_name, out_dir, out);
    if (cam_cmd->parsed()) return cmd_cam(checkpoint, image, mask, age, prototypes, method, out_dir, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"protograde"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace protograde
