#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "udmt/params.hpp"

namespace udmt {

/// Binary parameter container.
///
/// Layout (little-endian): magic "UDMTCKPT", u32 format version, u32 metadata
/// entry count, then per entry two length-prefixed strings; u64 parameter
/// count, then per parameter a length-prefixed name, u32 rank, u64 extents and
/// the raw IEEE-754 doubles. Values round-trip bit-exactly.
struct Checkpoint {
  ParameterSet params;
  std::map<std::string, std::string> metadata;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace udmt
