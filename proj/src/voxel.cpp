#include "mpcn/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mpcn/errors.hpp"

namespace mpcn {

namespace {

std::size_t cube(int r) { return static_cast<std::size_t>(r) * r * r; }

void check_resolution(int r) {
  if (r <= 0) throw ShapeError("voxel resolution must be positive, got " + std::to_string(r));
}

void require_match(int a, int b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": resolution mismatch " + std::to_string(a) + " vs " + std::to_string(b));
}

}  // namespace

VoxelGrid::VoxelGrid(int resolution) : resolution_(resolution) {
  check_resolution(resolution);
  data_.assign(cube(resolution), 0);
}

VoxelGrid::VoxelGrid(int resolution, std::vector<std::uint8_t> data) : resolution_(resolution), data_(std::move(data)) {
  check_resolution(resolution);
  if (data_.size() != cube(resolution)) throw ShapeError("VoxelGrid: data size does not match resolution");
  for (auto v : data_)
    if (v > 1) throw ShapeError("VoxelGrid: occupancy values must be 0 or 1");
}

std::size_t VoxelGrid::count() const {
  std::size_t n = 0;
  for (auto v : data_) n += v;
  return n;
}

ProbVolume::ProbVolume(int resolution, float fill) : resolution_(resolution) {
  check_resolution(resolution);
  data_.assign(cube(resolution), fill);
}

ProbVolume::ProbVolume(int resolution, std::vector<float> data) : resolution_(resolution), data_(std::move(data)) {
  check_resolution(resolution);
  if (data_.size() != cube(resolution)) throw ShapeError("ProbVolume: data size does not match resolution");
}

ProbVolume ProbVolume::from_grid(const VoxelGrid& g) {
  std::vector<float> d(g.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] ? 1.0f : 0.0f;
  return ProbVolume(g.resolution(), std::move(d));
}

VoxelGrid ProbVolume::binarize(double t) const {
  std::vector<std::uint8_t> d(data_.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = data_[i] > t ? 1 : 0;
  return VoxelGrid(resolution_, std::move(d));
}

double iou(const ProbVolume& pred, const VoxelGrid& gt, double t) {
  require_match(pred.resolution(), gt.resolution(), "iou");
  const float* p = pred.data().data();
  const std::uint8_t* g = gt.data().data();
  std::size_t inter = 0, uni = 0;
  const std::size_t n = pred.size();
#pragma omp simd reduction(+ : inter, uni)
  for (std::size_t i = 0; i < n; ++i) {
    const bool a = static_cast<double>(p[i]) > t;
    const bool b = g[i] != 0;
    inter += (a && b);
    uni += (a || b);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double iou(const VoxelGrid& a, const VoxelGrid& b) {
  require_match(a.resolution(), b.resolution(), "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double shape_distance(const ProbVolume& pr, const VoxelGrid& gt) {
  require_match(pr.resolution(), gt.resolution(), "shape_distance");
  double sum = 0.0;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    const double d = static_cast<double>(pr[i]) - (gt[i] ? 1.0 : 0.0);
    sum += d * d;
  }
  return sum / static_cast<double>(pr.size());
}

double shape_distance(const VoxelGrid& a, const VoxelGrid& b) {
  require_match(a.resolution(), b.resolution(), "shape_distance");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] != b[i]);
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

DepthImage orthographic_depth(const VoxelGrid& g, Axis axis, bool flip) {
  const int r = g.resolution();
  DepthImage img{r, std::vector<float>(static_cast<std::size_t>(r) * r, 0.0f)};
  const int a = static_cast<int>(axis);
  for (int row = 0; row < r; ++row)
    for (int col = 0; col < r; ++col) {
      for (int d = 0; d < r; ++d) {
        const int depth = flip ? r - 1 - d : d;
        int c[3];
        c[a] = depth;
        c[a == 0 ? 1 : 0] = row;
        c[a == 2 ? 1 : 2] = col;
        if (g.at(c[0], c[1], c[2])) {
          img.pixels[static_cast<std::size_t>(row) * r + col] = static_cast<float>(r - d) / static_cast<float>(r);
          break;
        }
      }
    }
  return img;
}

void write_depth_pgm(const DepthImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.size << ' ' << img.size << '\n' << img.size << '\n';
  for (float v : img.pixels) out.put(static_cast<char>(std::lround(v * img.size)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

DepthImage read_depth_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || w != h || maxval <= 0 || maxval > 255)
    throw ParseError("unsupported depth PGM " + path.string(), static_cast<std::size_t>(std::max<std::streamoff>(0, in.tellg())));
  in.get();
  DepthImage img{w, std::vector<float>(static_cast<std::size_t>(w) * h)};
  for (auto& v : img.pixels) {
    const int c = in.get();
    if (c == EOF) throw ParseError("truncated PGM " + path.string(), static_cast<std::size_t>(in.gcount()));
    v = static_cast<float>(c) / static_cast<float>(maxval);
  }
  return img;
}

void write_slice_montage(const ProbVolume& v, const std::filesystem::path& path) {
  const int r = v.resolution();
  const int tiles = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(r))));
  const int w = tiles * (r + 1);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * w, 64);
  for (int z = 0; z < r; ++z) {
    const int ty = z / tiles, tx = z % tiles;
    for (int x = 0; x < r; ++x)
      for (int y = 0; y < r; ++y) {
        const float p = v[(static_cast<std::size_t>(x) * r + z) * r + y];
        px[static_cast<std::size_t>(ty * (r + 1) + x) * w + tx * (r + 1) + y] =
            static_cast<std::uint8_t>(std::clamp(p, 0.0f, 1.0f) * 255.0f);
      }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << w << ' ' << w << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

}  // namespace mpcn
