#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mpcn {

/// Binary occupancy cube. Storage follows binvox order: linear index
/// (x * r + z) * r + y, so y runs fastest.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(int resolution);
  /// data must hold resolution^3 values, each 0 or 1.
  VoxelGrid(int resolution, std::vector<std::uint8_t> data);

  int resolution() const { return resolution_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<std::uint8_t>& data() const { return data_; }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * resolution_ + z) * resolution_ + y;
  }
  bool at(int x, int y, int z) const { return data_[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { data_[index(x, y, z)] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return data_[i] != 0; }

  std::size_t count() const;
  double occupancy() const { return size() ? static_cast<double>(count()) / static_cast<double>(size()) : 0.0; }

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  int resolution_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Real-valued occupancy probabilities in [0,1], same layout as VoxelGrid.
class ProbVolume {
 public:
  ProbVolume() = default;
  explicit ProbVolume(int resolution, float fill = 0.0f);
  ProbVolume(int resolution, std::vector<float> data);
  static ProbVolume from_grid(const VoxelGrid& g);

  int resolution() const { return resolution_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Thresholds with strict `>`.
  VoxelGrid binarize(double t) const;

 private:
  int resolution_ = 0;
  std::vector<float> data_;
};

/// Intersection over union of {pred > t} and {gt = 1}. Two empty sets give 1.
double iou(const ProbVolume& pred, const VoxelGrid& gt, double t);
double iou(const VoxelGrid& a, const VoxelGrid& b);

/// Mean squared voxel difference.
double shape_distance(const ProbVolume& pr, const VoxelGrid& gt);
double shape_distance(const VoxelGrid& a, const VoxelGrid& b);

enum class Axis { X = 0, Y = 1, Z = 2 };

/// Square single-channel image, row-major.
struct DepthImage {
  int size = 0;
  std::vector<float> pixels;

  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * size + col]; }
  friend bool operator==(const DepthImage&, const DepthImage&) = default;
};

/// Orthographic depth along `axis`. Rows/columns index the two remaining axes
/// in (x, y, z) order. A ray that first hits at depth index d (0 nearest the
/// viewer) gives (r - d) / r; a ray that hits nothing gives 0. flip views from
/// the far side.
DepthImage orthographic_depth(const VoxelGrid& g, Axis axis, bool flip);

/// Binary PGM (P5) with maxval = image size, storing round(v * size); exact
/// for depth images.
void write_depth_pgm(const DepthImage& img, const std::filesystem::path& path);
DepthImage read_depth_pgm(const std::filesystem::path& path);

/// Debug aid: montage of the r axial (z) slices as an 8-bit PGM.
void write_slice_montage(const ProbVolume& v, const std::filesystem::path& path);

}  // namespace mpcn
