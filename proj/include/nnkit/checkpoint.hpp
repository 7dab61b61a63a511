#pragma once

#include <filesystem>
#include <span>

#include "nnkit/graph.hpp"

namespace nnkit {

// "NNKC", u32 version, u32 count, then per parameter: u32 name length, name
// bytes, u32 rows, u32 cols, rows*cols little-endian f64 in row-major order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params);

// Loads by name; every parameter in `params` must be present with a matching
// shape. Extra entries in the file are ignored.
void load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params);

}  // namespace nnkit
