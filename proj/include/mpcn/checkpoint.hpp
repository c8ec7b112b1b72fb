#pragma once

#include <filesystem>
#include <string>

#include "mpcn/memory.hpp"
#include "mpcn/model.hpp"

namespace mpcn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Model archive: magic "MPCNCKPT", version, element width, JSON metadata
/// (model spec plus caller-supplied fields under "extra"), then named
/// parameter tensors. Integers little-endian.
template <typename T>
void save_model(Model<T>& model, const std::filesystem::path& path, const std::string& extra_json = "{}");

/// Rebuilds the model from the stored spec. extra_json receives the stored
/// "extra" object when non-null.
template <typename T>
Model<T> load_model(const std::filesystem::path& path, std::string* extra_json = nullptr);

/// Bank archive: magic "MPCNBANK", version, geometry, next tick, then per
/// slot its tick, key and binvox-encoded value.
void save_bank(const MemoryBank& bank, const std::filesystem::path& path);
MemoryBank load_bank(const std::filesystem::path& path);

}  // namespace mpcn
