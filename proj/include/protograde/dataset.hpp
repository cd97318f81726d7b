#pragma once

// Manifest handling, patient-level splitting, sample loading and the
// synthetic layered B-scan generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protograde/config.hpp"
#include "protograde/encoder.hpp"
#include "protograde/random.hpp"
#include "protograde/rnfl.hpp"
#include "protograde/train.hpp"

namespace protograde::dataset {

inline constexpr std::array<const char*, 3> kClassNames{"healthy", "early", "advanced"};
std::vector<std::string> class_names();
/// Throws DataError for names outside the closed label set.
int parse_label(const std::string& name);

struct BScanRecord {
  std::filesystem::path image;
  std::filesystem::path mask;
  std::string patient_id;
  double age = 0.0;
  int label = 0;

  bool operator==(const BScanRecord&) const = default;
};

/// CSV `image,mask,patient_id,age,label`; relative paths resolve against
/// the manifest's directory. Errors name the offending row.
std::vector<BScanRecord> load_manifest(const std::filesystem::path& path);
/// Paths inside the manifest directory are written relative to it.
void write_manifest(const std::filesystem::path& path, const std::vector<BScanRecord>& records);

struct SplitSpec {
  double test_fraction = 1.0 / 6.0;
  double val_fraction = 1.0 / 5.0;  // of what remains after the test split
  std::uint64_t seed = 42;

  /// Throws ConfigError unless both fractions lie in (0, 1) and sum below 1.
  void validate() const;
};

struct Split {
  std::vector<BScanRecord> train, validation, test;
  std::vector<std::string> warnings;
};

/// Patient-grouped split: every patient's records land in one partition.
/// Patients are shuffled per class and assigned greedily towards the
/// target counts. A class without patients is rejected; fewer than three
/// patients only produces a warning.
Split patient_split(const std::vector<BScanRecord>& records, const SplitSpec& spec);

/// Reads the image (replicated to `config.channels`) and mask, checks both
/// against the encoder dims and computes the hand features.
Sample load_sample(const BScanRecord& record, const EncoderConfig& config);
std::vector<Sample> load_samples(const std::vector<BScanRecord>& records, const EncoderConfig& config);
rnfl::RnflMask load_mask(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t height = 62;
  std::size_t width = 96;
  std::array<double, 3> thickness_mean{45.0, 25.0, 10.0};
  std::array<double, 3> thickness_std{5.0, 5.0, 3.0};  // spread of the per-column profile
  double level_std = 1.0;                              // per-scan offset of the whole profile
  std::array<double, 3> age_mean{55.0, 63.0, 70.0};
  std::array<double, 3> age_std{8.0, 8.0, 8.0};
  double noise = 0.05;
  std::size_t samples_per_class = 60;
  std::uint64_t seed = 42;

  /// Throws ConfigError on invalid settings (ordering, mean + 3 sigma > height, ...).
  void validate() const;
  static SyntheticSpec from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
  static const std::vector<std::string>& config_keys();
};

struct SyntheticScan {
  std::vector<double> image;  // [height * width], values in [0, 1] before quantisation
  std::vector<std::uint8_t> mask;
  std::vector<std::uint32_t> thickness;  // per column, equals the mask column counts
};

/// One scan with the given mean thickness profile; deterministic in `rng`.
SyntheticScan render_scan(const SyntheticSpec& spec, int label, Rng& rng);

struct SyntheticSet {
  std::vector<BScanRecord> records;
  std::vector<std::vector<std::uint32_t>> thickness;  // parallel to records
};

/// Writes images/, masks/, manifest.csv and spec.txt under `out_dir`.
SyntheticSet generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace protograde::dataset
