#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpcn/voxel.hpp"

namespace mpcn {

enum class Primitive { kBox, kEllipsoid, kCylinder, kLComposite, kRing, kCross };
enum class Role { kBase, kNovel };

const char* to_string(Primitive p);
const char* to_string(Role r);
Role role_from_string(const std::string& s);

/// jitter scales every random range about its midpoint: 0 gives one fixed,
/// centred, axis-aligned shape per family.
struct ShapeFamily {
  std::string name;
  Primitive primitive = Primitive::kBox;
  Role role = Role::kBase;
  double jitter = 1.0;
};

/// box, ellipsoid, cylinder, lshape (base), ring, cross (novel).
std::vector<ShapeFamily> default_families();

struct SamplePair {
  std::string sample_id;
  std::string category;
  Role role = Role::kBase;
  std::uint64_t seed = 0;
  int view = 0;  // axis * 2 + flip
  std::shared_ptr<const VoxelGrid> voxel;
  DepthImage image;
};

struct Dataset {
  std::vector<SamplePair> samples;
  std::vector<std::string> categories() const;
};

struct GenerationOptions {
  std::vector<ShapeFamily> families = default_families();
  int per_family = 300;
  int views_per_shape = 1;
  int resolution = 32;
  bool random_view = false;
  std::uint64_t seed = 0;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kMinOccupancy = 0.01;
inline constexpr double kMaxOccupancy = 0.90;

/// One shape of a family from its sample seed. Throws GenerationError when
/// the occupancy leaves [kMinOccupancy, kMaxOccupancy].
VoxelGrid generate_shape(const ShapeFamily& family, std::uint64_t sample_seed, int resolution);

/// View index -> (axis, flip). The canonical view is 4 (z axis, near side).
inline constexpr int kCanonicalView = 4;
DepthImage render_view(const VoxelGrid& g, int view);

Dataset generate_dataset(const GenerationOptions& opt);

/// Writes manifest.csv plus images/<id>.pgm and voxels/<id>.binvox under root.
/// Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& root);

struct LoadError : std::runtime_error {
  LoadError(const std::string& what, std::vector<std::string> items);
  std::vector<std::string> items;
};

/// Reads a manifest (paths relative to its directory). Every row is checked;
/// all failures are reported together in one LoadError.
Dataset load_binvox_dataset(const std::filesystem::path& manifest, int resolution = 32);

struct FewShotSplit {
  std::vector<const SamplePair*> base, support, query;
};

/// base: samples of every category not listed as novel. support: `shots`
/// seeded draws per novel category. query: the remaining novel samples.
FewShotSplit split_fewshot(const Dataset& data, const std::vector<std::string>& novel, int shots,
                           std::uint64_t seed);

/// Novel category names of a dataset (by role).
std::vector<std::string> novel_categories(const Dataset& data);

/// Deterministic 64-bit mixing of a seed with a stream index.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace mpcn
