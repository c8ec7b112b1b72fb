#include "mpcn/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "mpcn/binvox.hpp"
#include "mpcn/errors.hpp"

namespace mpcn {

const char* to_string(Primitive p) {
  switch (p) {
    case Primitive::kBox: return "box";
    case Primitive::kEllipsoid: return "ellipsoid";
    case Primitive::kCylinder: return "cylinder";
    case Primitive::kLComposite: return "lshape";
    case Primitive::kRing: return "ring";
    case Primitive::kCross: return "cross";
  }
  return "?";
}

const char* to_string(Role r) { return r == Role::kBase ? "base" : "novel"; }

Role role_from_string(const std::string& s) {
  if (s == "base") return Role::kBase;
  if (s == "novel") return Role::kNovel;
  throw ConfigError("unknown role '" + s + "'");
}

std::vector<ShapeFamily> default_families() {
  return {{"box", Primitive::kBox, Role::kBase},         {"ellipsoid", Primitive::kEllipsoid, Role::kBase},
          {"cylinder", Primitive::kCylinder, Role::kBase}, {"lshape", Primitive::kLComposite, Role::kBase},
          {"ring", Primitive::kRing, Role::kNovel},       {"cross", Primitive::kCross, Role::kNovel}};
}

std::vector<std::string> Dataset::categories() const {
  std::vector<std::string> out;
  for (const auto& s : samples)
    if (std::find(out.begin(), out.end(), s.category) == out.end()) out.push_back(s.category);
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {

class ShapeSampler {
 public:
  ShapeSampler(std::uint64_t seed, double jitter) : rng_(seed), jitter_(jitter) {}

  // value in [lo, hi] pulled toward the midpoint by (1 - jitter)
  double range(double lo, double hi) {
    const double u = std::uniform_real_distribution<double>(lo, hi)(rng_);
    const double mid = 0.5 * (lo + hi);
    return mid + jitter_ * (u - mid);
  }
 private:
  std::mt19937_64 rng_;
  double jitter_;
};

}  // namespace

VoxelGrid generate_shape(const ShapeFamily& family, std::uint64_t sample_seed, int r) {
  if (r < 4) throw GenerationError("resolution too small for shape generation");
  if (family.jitter < 0 || family.jitter > 1) throw GenerationError("jitter must lie in [0, 1]");
  ShapeSampler s(sample_seed, family.jitter);
  const double R = r;
  const std::array<double, 3> c{R / 2 + s.range(-0.06, 0.06) * R, R / 2 + s.range(-0.06, 0.06) * R,
                                R / 2 + s.range(-0.06, 0.06) * R};

  std::function<bool(double, double, double)> inside;
  switch (family.primitive) {
    case Primitive::kBox: {
      const double hx = s.range(0.24, 0.38) * R, hy = s.range(0.24, 0.38) * R, hz = s.range(0.12, 0.2) * R;
      inside = [=](double u, double v, double w) { return std::abs(u) <= hx && std::abs(v) <= hy && std::abs(w) <= hz; };
      break;
    }
    case Primitive::kEllipsoid: {
      const double a = s.range(0.26, 0.42) * R, b = s.range(0.26, 0.42) * R, e = s.range(0.26, 0.42) * R;
      inside = [=](double u, double v, double w) { return (u / a) * (u / a) + (v / b) * (v / b) + (w / e) * (w / e) <= 1; };
      break;
    }
    case Primitive::kCylinder: {
      const double rad = s.range(0.14, 0.22) * R, h = s.range(0.3, 0.44) * R;
      inside = [=](double u, double v, double w) { return u * u + v * v <= rad * rad && std::abs(w) <= h; };
      break;
    }
    case Primitive::kLComposite: {
      // L profile in (u, v), extruded along w
      const double t = s.range(0.12, 0.2) * R, a = s.range(0.5, 0.85) * R, b = s.range(0.5, 0.85) * R;
      const double d = s.range(0.12, 0.3) * R;
      inside = [=](double u, double v, double w) {
        if (std::abs(u) > a / 2 || std::abs(v) > b / 2 || std::abs(w) > d) return false;
        return u + a / 2 <= t || v + b / 2 <= t;
      };
      break;
    }
    case Primitive::kRing: {
      const double major = s.range(0.22, 0.34) * R, minor = s.range(0.07, 0.12) * R;
      inside = [=](double u, double v, double w) {
        const double q = std::sqrt(u * u + v * v) - major;
        return q * q + w * w <= minor * minor;
      };
      break;
    }
    case Primitive::kCross: {
      const double lu = s.range(0.3, 0.44) * R, lv = s.range(0.3, 0.44) * R, lw = s.range(0.3, 0.44) * R;
      const double t = s.range(0.06, 0.1) * R;
      inside = [=](double u, double v, double w) {
        const double au = std::abs(u), av = std::abs(v), aw = std::abs(w);
        return (au <= lu && av <= t && aw <= t) || (av <= lv && au <= t && aw <= t) ||
               (aw <= lw && au <= t && av <= t);
      };
      break;
    }
  }

  VoxelGrid g(r);
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z) {
        const std::array<double, 3> d{x + 0.5 - c[0], y + 0.5 - c[1], z + 0.5 - c[2]};
        if (inside(d[0], d[1], d[2])) g.set(x, y, z, true);
      }
  const double occ = g.occupancy();
  if (occ < kMinOccupancy || occ > kMaxOccupancy) {
    std::ostringstream msg;
    msg << family.name << " sample (seed " << sample_seed << ") has occupancy " << occ << ", outside ["
        << kMinOccupancy << ", " << kMaxOccupancy << "]";
    throw GenerationError(msg.str());
  }
  return g;
}

DepthImage render_view(const VoxelGrid& g, int view) {
  if (view < 0 || view > 5) throw ShapeError("view index must lie in [0, 5]");
  return orthographic_depth(g, static_cast<Axis>(view / 2), view % 2 == 1);
}

Dataset generate_dataset(const GenerationOptions& opt) {
  if (opt.per_family < 1) throw GenerationError("per_family must be at least 1");
  if (opt.views_per_shape < 1) throw GenerationError("views_per_shape must be at least 1");
  if (opt.families.empty()) throw GenerationError("no shape families");
  std::set<std::string> names;
  for (const auto& f : opt.families)
    if (!names.insert(f.name).second) throw GenerationError("duplicate family name " + f.name);

  const int nf = static_cast<int>(opt.families.size());
  const int per_shape = opt.views_per_shape;
  Dataset data;
  data.samples.resize(static_cast<std::size_t>(nf) * opt.per_family * per_shape);
  std::vector<std::string> errors(static_cast<std::size_t>(nf) * opt.per_family);

#pragma omp parallel for schedule(dynamic)
  for (int job = 0; job < nf * opt.per_family; ++job) {
    const int fi = job / opt.per_family, i = job % opt.per_family;
    const auto& fam = opt.families[fi];
    const std::uint64_t seed = mix_seed(mix_seed(opt.seed, static_cast<std::uint64_t>(fi)), static_cast<std::uint64_t>(i));
    try {
      auto grid = std::make_shared<const VoxelGrid>(generate_shape(fam, seed, opt.resolution));
      std::mt19937_64 view_rng(mix_seed(seed, 0xc0ffee));
      for (int v = 0; v < per_shape; ++v) {
        int view = opt.random_view ? static_cast<int>(view_rng() % 6) : (kCanonicalView + 2 * v) % 6;
        auto& s = data.samples[static_cast<std::size_t>(job) * per_shape + v];
        char id[96];
        std::snprintf(id, sizeof id, "%s-%04d-v%d", fam.name.c_str(), i, view);
        s.sample_id = id;
        if (per_shape > 1) s.sample_id += "-" + std::to_string(v);
        s.category = fam.name;
        s.role = fam.role;
        s.seed = seed;
        s.view = view;
        s.voxel = grid;
        s.image = render_view(*grid, view);
      }
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(job)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw GenerationError(e);
  return data;
}

namespace {

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) throw GenerationError("manifest field contains separator: " + s);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

constexpr const char* kManifestHeader = "sample_id,category,role,image_path,voxel_path,seed";

// "<family>-<index>-v<view>[-<n>]"; canonical view when absent
int view_from_id(const std::string& id) {
  const auto pos = id.rfind("-v");
  if (pos == std::string::npos || pos + 2 >= id.size()) return kCanonicalView;
  const char ch = id[pos + 2];
  if (ch < '0' || ch > '5') return kCanonicalView;
  return ch - '0';
}

}  // namespace

std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  fs::create_directories(root / "voxels");
  const fs::path manifest = root / "manifest.csv";
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  out << kManifestHeader << '\n';
  for (const auto& s : data.samples) {
    check_field(s.sample_id);
    check_field(s.category);
    const std::string image = "images/" + s.sample_id + ".pgm";
    const std::string voxel = "voxels/" + s.sample_id + ".binvox";
    write_depth_pgm(s.image, root / image);
    write_binvox_file(*s.voxel, root / voxel);
    out << s.sample_id << ',' << s.category << ',' << to_string(s.role) << ',' << image << ',' << voxel << ','
        << s.seed << '\n';
  }
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + manifest.string());
  return manifest;
}

LoadError::LoadError(const std::string& what, std::vector<std::string> list)
    : std::runtime_error([&] {
        std::string msg = what;
        for (const auto& item : list) msg += "\n  " + item;
        return msg;
      }()),
      items(std::move(list)) {}

Dataset load_binvox_dataset(const std::filesystem::path& manifest, int resolution) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw LoadError("cannot open manifest", {manifest.string()});
  const auto dir = manifest.parent_path();
  Dataset data;
  std::vector<std::string> errors;
  std::string line;
  int row = 0;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      header = false;
      if (line != kManifestHeader) throw LoadError("bad manifest header", {"row 0: '" + line + "'"});
      continue;
    }
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "row " + std::to_string(row) + (f.empty() ? "" : " (" + f[0] + ")");
    if (f.size() != 6) {
      errors.push_back(where + ": expected 6 fields, got " + std::to_string(f.size()));
      continue;
    }
    try {
      SamplePair s;
      s.sample_id = f[0];
      s.category = f[1];
      s.role = role_from_string(f[2]);
      std::size_t used = 0;
      s.seed = std::stoull(f[5], &used);
      if (used != f[5].size()) throw ConfigError("bad seed '" + f[5] + "'");
      s.view = view_from_id(s.sample_id);
      auto grid = read_binvox_file(dir / f[4]);
      if (grid.resolution() != resolution)
        throw ShapeError("voxel resolution " + std::to_string(grid.resolution()) + " (expected " +
                         std::to_string(resolution) + ")");
      s.voxel = std::make_shared<const VoxelGrid>(std::move(grid));
      s.image = read_depth_pgm(dir / f[3]);
      if (s.image.size != resolution) throw ShapeError("image size " + std::to_string(s.image.size));
      data.samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      errors.push_back(where + ": " + e.what());
    }
  }
  if (!errors.empty()) throw LoadError("dataset load failed (" + std::to_string(errors.size()) + " rows)", errors);
  return data;
}

std::vector<std::string> novel_categories(const Dataset& data) {
  std::vector<std::string> out;
  for (const auto& s : data.samples)
    if (s.role == Role::kNovel && std::find(out.begin(), out.end(), s.category) == out.end())
      out.push_back(s.category);
  return out;
}

FewShotSplit split_fewshot(const Dataset& data, const std::vector<std::string>& novel, int shots,
                           std::uint64_t seed) {
  if (shots < 0) throw ConfigError("shots must be non-negative");
  std::map<std::string, std::vector<const SamplePair*>> by_cat;
  FewShotSplit split;
  for (const auto& s : data.samples) {
    if (std::find(novel.begin(), novel.end(), s.category) != novel.end())
      by_cat[s.category].push_back(&s);
    else
      split.base.push_back(&s);
  }
  for (std::size_t c = 0; c < novel.size(); ++c) {
    auto it = by_cat.find(novel[c]);
    if (it == by_cat.end()) throw ConfigError("novel category '" + novel[c] + "' has no samples");
    auto& members = it->second;
    if (static_cast<std::size_t>(shots) > members.size())
      throw ConfigError(std::to_string(shots) + " shots requested but '" + novel[c] + "' has only " +
                        std::to_string(members.size()) + " samples");
    // the draw depends only on the category's sample count and name, so
    // smaller shot counts give prefixes of larger ones
    std::vector<std::size_t> order(members.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(mix_seed(seed, std::hash<std::string>{}(novel[c])));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> chosen(members.size(), 0);
    for (int i = 0; i < shots; ++i) {
      chosen[order[i]] = 1;
      split.support.push_back(members[order[i]]);
    }
    for (std::size_t i = 0; i < members.size(); ++i)
      if (!chosen[i]) split.query.push_back(members[i]);
  }
  return split;
}

}  // namespace mpcn
