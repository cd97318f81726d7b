#pragma once

// Command-line front end. run_cli is callable in-process so tests can drive
// every command without spawning a shell.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "protograde/config.hpp"
#include "protograde/dataset.hpp"
#include "protograde/encoder.hpp"
#include "protograde/train.hpp"

namespace protograde {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Fully resolved run configuration. Relative paths are resolved against
/// the directory of the config file; every key is present in `resolved`.
struct RunConfig {
  KeyValueConfig resolved;
  Strategy strategy = Strategy::dynamic_prototypes;
  TrainOptions options;
  EncoderConfig encoder;
  dataset::SplitSpec split;
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::vector<std::size_t> k_values;

  /// Throws ConfigError on unknown keys or invalid values.
  static RunConfig resolve(const KeyValueConfig& raw, const std::filesystem::path& base_dir,
                           const std::optional<std::string>& strategy_override = std::nullopt);
  static RunConfig load(const std::filesystem::path& path,
                        const std::optional<std::string>& strategy_override = std::nullopt);
  static const std::vector<std::string>& run_keys();

  std::string text() const { return resolved.to_text(); }
  std::string hash() const { return resolved.hash(); }
};

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protograde
