#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mpcn/voxel.hpp"

namespace mpcn {

/// Parses a binvox stream: text header ("#binvox 1", "dim", optional
/// "translate"/"scale", "data") then (value, count) run-length pairs.
/// Translate and scale are accepted and discarded. Throws ParseError.
VoxelGrid read_binvox(std::span<const std::uint8_t> bytes);

/// Canonical encoding: translate 0 0 0, scale 1, maximal runs capped at 255.
std::vector<std::uint8_t> write_binvox(const VoxelGrid& g);

VoxelGrid read_binvox_file(const std::filesystem::path& path);
void write_binvox_file(const VoxelGrid& g, const std::filesystem::path& path);

}  // namespace mpcn
