#pragma once

// Versioned binary weight container. Layout (all integers little-endian):
//
//   "PGCK"            4-byte magic
//   u32 version       currently 1
//   u64 n, n bytes    config echo (flat key = value text)
//   u64 hash          FNV-1a 64 of the config echo
//   u32 count         number of tensors
//   count x { u32 name_len, name, u8 frozen, u32 rank, u64 dims[rank],
//             f64 values[prod(dims)] }
//
// Feature-scaling statistics travel as tensors "scaling.mean" and
// "scaling.stddev".

#include <filesystem>
#include <string>

#include "protograde/encoder.hpp"

namespace protograde {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  std::string config_text;
  std::string config_hash;
  ParameterSet params;
  rnfl::FeatureScaling scaling;
};

void save_checkpoint(const std::filesystem::path& path, const HybridEncoder& encoder, const std::string& config_text);

/// Throws DataError on a truncated, corrupt or wrong-version file.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protograde
