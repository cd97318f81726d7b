#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "protograde/dataset.hpp"
#include "protograde/errors.hpp"
#include "protograde/pgm.hpp"

namespace protograde::dataset {
namespace fs = std::filesystem;
namespace {

std::array<double, 3> triple(const KeyValueConfig& cfg, const std::string& key, std::array<double, 3> fallback) {
  if (!cfg.contains(key)) return fallback;
  const auto v = cfg.get_double_list(key);
  if (v.size() != 3) throw ConfigError(key + " needs one value per class (3), got " + std::to_string(v.size()));
  return {v[0], v[1], v[2]};
}

std::string join(const std::array<double, 3>& v) {
  return format_double(v[0]) + "," + format_double(v[1]) + "," + format_double(v[2]);
}

}  // namespace

const std::vector<std::string>& SyntheticSpec::config_keys() {
  static const std::vector<std::string> keys{"image_height", "image_width", "thickness_mean", "thickness_std",
                                             "level_std",    "age_mean",    "age_std",        "noise",
                                             "samples_per_class", "seed"};
  return keys;
}

void SyntheticSpec::validate() const {
  if (height == 0 || width == 0) throw ConfigError("synthetic image dims must be positive");
  if (samples_per_class == 0) throw ConfigError("samples_per_class must be at least 1");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be a finite non-negative level");
  if (!(level_std >= 0.0)) throw ConfigError("level_std must be non-negative");
  for (std::size_t c = 0; c < 3; ++c) {
    if (!(thickness_mean[c] > 0.0) || !(thickness_std[c] >= 0.0) || !(age_std[c] >= 0.0))
      throw ConfigError(std::string("invalid thickness/age parameters for class ") + kClassNames[c]);
    const double sigma = std::hypot(thickness_std[c], level_std);
    if (thickness_mean[c] + 3.0 * sigma > static_cast<double>(height))
      throw ConfigError(std::string("class ") + kClassNames[c] + ": thickness mean + 3 sigma (" +
                        format_double(thickness_mean[c] + 3.0 * sigma) + ") exceeds image height " +
                        std::to_string(height));
  }
  if (!(thickness_mean[0] > thickness_mean[1] && thickness_mean[1] > thickness_mean[2]))
    throw ConfigError("thickness means must be strictly decreasing: healthy > early > advanced");
}

SyntheticSpec SyntheticSpec::from_config(const KeyValueConfig& cfg) {
  cfg.reject_unknown({config_keys().begin(), config_keys().end()});
  SyntheticSpec s;
  auto count = [&](const std::string& key, std::size_t fallback) -> std::size_t {
    if (!cfg.contains(key)) return fallback;
    const long long v = cfg.get_int(key);
    if (v < 0) throw ConfigError(key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  s.height = count("image_height", s.height);
  s.width = count("image_width", s.width);
  s.thickness_mean = triple(cfg, "thickness_mean", s.thickness_mean);
  s.thickness_std = triple(cfg, "thickness_std", s.thickness_std);
  s.age_mean = triple(cfg, "age_mean", s.age_mean);
  s.age_std = triple(cfg, "age_std", s.age_std);
  if (cfg.contains("level_std")) s.level_std = cfg.get_double("level_std");
  if (cfg.contains("noise")) s.noise = cfg.get_double("noise");
  s.samples_per_class = count("samples_per_class", s.samples_per_class);
  s.seed = static_cast<std::uint64_t>(count("seed", s.seed));
  s.validate();
  return s;
}

KeyValueConfig SyntheticSpec::to_config() const {
  KeyValueConfig cfg;
  cfg.set("image_height", std::to_string(height));
  cfg.set("image_width", std::to_string(width));
  cfg.set("thickness_mean", join(thickness_mean));
  cfg.set("thickness_std", join(thickness_std));
  cfg.set("level_std", format_double(level_std));
  cfg.set("age_mean", join(age_mean));
  cfg.set("age_std", join(age_std));
  cfg.set("noise", format_double(noise));
  cfg.set("samples_per_class", std::to_string(samples_per_class));
  cfg.set("seed", std::to_string(seed));
  return cfg;
}

SyntheticScan render_scan(const SyntheticSpec& spec, int label, Rng& rng) {
  const auto c = static_cast<std::size_t>(label);
  const std::size_t h = spec.height, w = spec.width;
  constexpr double two_pi = 2.0 * std::numbers::pi;

  // Smooth unit-variance profile: three low-frequency sinusoids whose
  // squared amplitudes sum to 2.
  double amp[3], phase[3], norm = 0.0;
  for (int j = 0; j < 3; ++j) {
    amp[j] = rng.uniform(0.5, 1.0);
    phase[j] = rng.uniform(0.0, two_pi);
    norm += amp[j] * amp[j];
  }
  const double scale = std::sqrt(2.0 / norm);
  const double level = spec.thickness_mean[c] + spec.level_std * rng.normal();
  const double drift_phase = rng.uniform(0.0, two_pi);

  SyntheticScan scan;
  scan.image.assign(h * w, 0.0);
  scan.mask.assign(h * w, 0);
  scan.thickness.resize(w);
  for (std::size_t x = 0; x < w; ++x) {
    const double u = static_cast<double>(x) / static_cast<double>(w);
    double s = 0.0;
    for (int j = 0; j < 3; ++j) s += scale * amp[j] * std::sin(two_pi * (j + 1) * u + phase[j]);
    const double t = std::clamp(std::round(level + spec.thickness_std[c] * s), 1.0, static_cast<double>(h));
    const auto thick = static_cast<std::size_t>(t);
    const double centre = 0.5 * static_cast<double>(h) + 0.05 * static_cast<double>(h) * std::sin(two_pi * u + drift_phase);
    const double top_f = std::round(centre - 0.5 * t);
    const auto top = static_cast<std::size_t>(std::clamp(top_f, 0.0, static_cast<double>(h - thick)));
    scan.thickness[x] = static_cast<std::uint32_t>(thick);
    for (std::size_t y = top; y < top + thick; ++y) {
      scan.image[y * w + x] = 1.0;
      scan.mask[y * w + x] = 1;
    }
  }
  if (spec.noise > 0.0)
    for (auto& v : scan.image) v = std::clamp(v + spec.noise * rng.normal(), 0.0, 1.0);
  return scan;
}

SyntheticSet generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  const fs::path root = fs::absolute(out_dir).lexically_normal();

  SyntheticSet set;
  Rng rng(spec.seed);
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t patient = 0, remaining_in_patient = 0;
    double age = 0.0;
    std::string patient_id;
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      if (remaining_in_patient == 0) {
        ++patient;
        remaining_in_patient = 1 + rng.below(2);
        age = std::round(std::clamp(rng.normal(spec.age_mean[c], spec.age_std[c]), 18.0, 95.0));
        char id[48];
        std::snprintf(id, sizeof id, "%s-p%03zu", kClassNames[c], patient);
        patient_id = id;
      }
      --remaining_in_patient;

      const auto scan = render_scan(spec, static_cast<int>(c), rng);
      char name[48];
      std::snprintf(name, sizeof name, "%s_%03zu.pgm", kClassNames[c], i);
      BScanRecord r;
      r.image = root / "images" / name;
      r.mask = root / "masks" / name;
      r.patient_id = patient_id;
      r.age = age;
      r.label = static_cast<int>(c);
      pgm::write(r.image, pgm::from_unit(spec.height, spec.width, scan.image));
      std::vector<double> mask_values(scan.mask.begin(), scan.mask.end());
      pgm::write(r.mask, pgm::from_unit(spec.height, spec.width, mask_values));
      set.records.push_back(std::move(r));
      set.thickness.push_back(scan.thickness);
    }
  }
  write_manifest(root / "manifest.csv", set.records);
  std::ofstream echo(root / "spec.txt");
  echo << spec.to_config().to_text();
  return set;
}

}  // namespace protograde::dataset
