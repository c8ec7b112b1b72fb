#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

#include "mpcn/binvox.hpp"
#include "mpcn/datagen.hpp"
#include "mpcn/errors.hpp"

using namespace mpcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("mpcn-datagen-" + tag + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GenerationOptions small(int per_family, std::uint64_t seed) {
  GenerationOptions o;
  o.per_family = per_family;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(Datagen, SameSeedGivesByteIdenticalManifests) {
  const auto dir = scratch_dir("det");
  const auto a = write_dataset(generate_dataset(small(5, 7)), dir / "a");
  const auto b = write_dataset(generate_dataset(small(5, 7)), dir / "b");
  const auto c = write_dataset(generate_dataset(small(5, 8)), dir / "c");
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), slurp(c));
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / fs::relative(e.path(), dir / "a"))) << e.path();
  }
  fs::remove_all(dir);
}

TEST(Datagen, ManifestLayout) {
  const auto data = generate_dataset(small(3, 1));
  EXPECT_EQ(data.samples.size(), 18u);
  const auto dir = scratch_dir("layout");
  const auto manifest = write_dataset(data, dir);
  std::ifstream in(manifest);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "sample_id,category,role,image_path,voxel_path,seed");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 18);
  fs::remove_all(dir);
}

TEST(Datagen, ZeroJitterBoxIsACuboid) {
  ShapeFamily box{"box", Primitive::kBox, Role::kBase, 0.0};
  const auto g = generate_shape(box, mix_seed(0, 0), 32);
  int lo[3] = {32, 32, 32}, hi[3] = {-1, -1, -1};
  for (int x = 0; x < 32; ++x)
    for (int y = 0; y < 32; ++y)
      for (int z = 0; z < 32; ++z)
        if (g.at(x, y, z)) {
          const int c[3] = {x, y, z};
          for (int d = 0; d < 3; ++d) {
            lo[d] = std::min(lo[d], c[d]);
            hi[d] = std::max(hi[d], c[d]);
          }
        }
  ASSERT_GE(hi[0], 0);
  std::size_t filled = 0;
  for (int x = lo[0]; x <= hi[0]; ++x)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int z = lo[2]; z <= hi[2]; ++z) filled += g.at(x, y, z);
  EXPECT_EQ(filled, static_cast<std::size_t>(hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1));
  EXPECT_EQ(filled, g.count());
  // zero jitter means every seed gives the same shape
  EXPECT_EQ(generate_shape(box, 12345, 32), g);
}

TEST(Datagen, OccupancyWithinBounds) {
  const auto data = generate_dataset(small(17, 3));  // 102 samples
  ASSERT_GE(data.samples.size(), 100u);
  for (const auto& s : data.samples) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.voxel->size(); ++i) n += (*s.voxel)[i] != 0;
    const double f = static_cast<double>(n) / s.voxel->size();
    EXPECT_GT(f, 0.01) << s.sample_id;
    EXPECT_LT(f, 0.9) << s.sample_id;
  }
}

TEST(Datagen, ImagesRegenerateFromVoxels) {
  GenerationOptions o = small(4, 5);
  o.views_per_shape = 2;
  o.random_view = true;
  const auto data = generate_dataset(o);
  EXPECT_EQ(data.samples.size(), 48u);
  std::set<int> views;
  for (const auto& s : data.samples) {
    views.insert(s.view);
    EXPECT_EQ(render_view(*s.voxel, s.view), s.image) << s.sample_id;
    const auto direct = orthographic_depth(*s.voxel, static_cast<Axis>(s.view / 2), s.view % 2 == 1);
    EXPECT_EQ(direct, s.image);
  }
  EXPECT_GT(views.size(), 1u);
  for (const auto& s : generate_dataset(small(2, 5)).samples) EXPECT_EQ(s.view, kCanonicalView);
}

TEST(Datagen, BadOptionsAreGenerationErrors) {
  auto o = small(0, 1);
  EXPECT_THROW(generate_dataset(o), GenerationError);
  o = small(2, 1);
  o.families.push_back(o.families.front());
  EXPECT_THROW(generate_dataset(o), GenerationError);
  ShapeFamily f{"x", Primitive::kBox, Role::kBase, 2.0};
  EXPECT_THROW(generate_shape(f, 1, 32), GenerationError);
}

TEST(Split, ZeroShotsGiveEmptySupport) {
  const auto data = generate_dataset(small(6, 2));
  const auto novel = novel_categories(data);
  EXPECT_EQ(novel, (std::vector<std::string>{"ring", "cross"}));
  const auto s = split_fewshot(data, novel, 0, 1);
  EXPECT_TRUE(s.support.empty());
  EXPECT_EQ(s.query.size(), 12u);
  EXPECT_EQ(s.base.size(), 24u);
}

TEST(Split, DisjointAndCovering) {
  GenerationOptions o = small(200, 9);
  o.resolution = 8;
  const auto data = generate_dataset(o);
  const auto novel = novel_categories(data);
  const auto s = split_fewshot(data, novel, 10, 4);
  std::map<std::string, int> per_cat;
  std::set<const SamplePair*> sup(s.support.begin(), s.support.end()), qry(s.query.begin(), s.query.end());
  for (auto* p : s.support) ++per_cat[p->category];
  for (const auto& c : novel) EXPECT_EQ(per_cat[c], 10);
  for (auto* p : s.support) EXPECT_EQ(qry.count(p), 0u);
  // every novel sample lands in exactly one of support/query
  std::size_t novel_count = 0;
  for (const auto& p : data.samples) {
    if (p.role == Role::kNovel) {
      ++novel_count;
      EXPECT_EQ(sup.count(&p) + qry.count(&p), 1u) << p.sample_id;
    } else {
      EXPECT_EQ(sup.count(&p) + qry.count(&p), 0u);
    }
  }
  EXPECT_EQ(sup.size() + qry.size(), novel_count);
  EXPECT_EQ(s.base.size(), 800u);
  for (auto* p : s.base) EXPECT_EQ(p->role, Role::kBase);

  // deterministic, and smaller shot counts take a prefix of larger ones
  const auto again = split_fewshot(data, novel, 10, 4);
  EXPECT_EQ(again.support, s.support);
  const auto five = split_fewshot(data, novel, 5, 4);
  for (auto* p : five.support) EXPECT_EQ(sup.count(p), 1u);
  EXPECT_NE(split_fewshot(data, novel, 10, 5).support, s.support);
}

TEST(Split, Errors) {
  const auto data = generate_dataset(small(4, 2));
  EXPECT_THROW(split_fewshot(data, {"ring"}, 5, 1), ConfigError);
  EXPECT_THROW(split_fewshot(data, {"ring"}, -1, 1), ConfigError);
  EXPECT_THROW(split_fewshot(data, {"nothing"}, 1, 1), ConfigError);
  EXPECT_NO_THROW(split_fewshot(data, {"ring"}, 4, 1));
}

TEST(Loader, EmptyManifestGivesEmptyDataset) {
  const auto dir = scratch_dir("empty");
  std::ofstream(dir / "zero.csv").close();
  std::ofstream(dir / "header.csv") << "sample_id,category,role,image_path,voxel_path,seed\n";
  EXPECT_TRUE(load_binvox_dataset(dir / "zero.csv").samples.empty());
  EXPECT_TRUE(load_binvox_dataset(dir / "header.csv").samples.empty());
  fs::remove_all(dir);
}

TEST(Loader, RoundTripIsVoxelExact) {
  GenerationOptions o = small(3, 11);
  o.views_per_shape = 2;
  o.random_view = true;
  const auto data = generate_dataset(o);
  const auto dir = scratch_dir("rt");
  const auto back = load_binvox_dataset(write_dataset(data, dir));
  ASSERT_EQ(back.samples.size(), data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& a = data.samples[i];
    const auto& b = back.samples[i];
    EXPECT_EQ(a.sample_id, b.sample_id);
    EXPECT_EQ(a.category, b.category);
    EXPECT_EQ(a.role, b.role);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.view, b.view);
    EXPECT_EQ(*a.voxel, *b.voxel);
    EXPECT_EQ(a.image, b.image);
  }
  fs::remove_all(dir);
}

TEST(Loader, BadRowsAreItemised) {
  const auto data = generate_dataset(small(1, 3));
  const auto dir = scratch_dir("bad");
  const auto manifest = write_dataset(data, dir);
  write_binvox_file(VoxelGrid(64), dir / "voxels" / "big.binvox");
  std::string text = slurp(manifest);
  // row 2 points at the 64^3 file, row 4 at a missing one
  std::vector<std::string> lines;
  std::stringstream ss(text);
  for (std::string l; std::getline(ss, l);) lines.push_back(l);
  auto retarget = [&](int row, const std::string& file) {
    auto& l = lines[row];
    const auto end = l.rfind(',');
    const auto start = l.rfind(',', end - 1);
    l = l.substr(0, start + 1) + file + l.substr(end);
  };
  retarget(2, "voxels/big.binvox");
  retarget(4, "voxels/missing.binvox");
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  for (const auto& l : lines) out << l << "\n";
  out.close();
  try {
    load_binvox_dataset(manifest);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    ASSERT_EQ(e.items.size(), 2u);
    EXPECT_NE(e.items[0].find("row 2"), std::string::npos) << e.items[0];
    EXPECT_NE(e.items[0].find("64"), std::string::npos) << e.items[0];
    EXPECT_NE(e.items[1].find("row 4"), std::string::npos) << e.items[1];
  }
  fs::remove_all(dir);
}

TEST(Datagen, FamiliesSeparableByNearestCentroid) {
  const auto data = generate_dataset(small(100, 21));
  const auto cats = data.categories();
  auto pooled = [](const VoxelGrid& g) {
    std::vector<double> f(512, 0.0);
    for (int x = 0; x < 32; ++x)
      for (int y = 0; y < 32; ++y)
        for (int z = 0; z < 32; ++z) f[(x / 4) * 64 + (y / 4) * 8 + z / 4] += g.at(x, y, z) / 64.0;
    return f;
  };
  std::map<std::string, std::vector<double>> centroid;
  std::map<std::string, int> count;
  std::vector<std::pair<std::string, std::vector<double>>> held;
  for (const auto& s : data.samples) {
    auto f = pooled(*s.voxel);
    if (count[s.category]++ % 2 == 0) {
      auto& c = centroid[s.category];
      c.resize(512, 0.0);
      for (int i = 0; i < 512; ++i) c[i] += f[i];
    } else {
      held.emplace_back(s.category, std::move(f));
    }
  }
  for (auto& [name, c] : centroid)
    for (auto& v : c) v /= 50.0;
  int correct = 0;
  for (const auto& [cat, f] : held) {
    std::string best;
    double best_d = 1e300;
    for (const auto& [name, c] : centroid) {
      double d = 0;
      for (int i = 0; i < 512; ++i) d += (f[i] - c[i]) * (f[i] - c[i]);
      if (d < best_d) {
        best_d = d;
        best = name;
      }
    }
    correct += best == cat;
  }
  const double acc = static_cast<double>(correct) / held.size();
  EXPECT_GE(acc, 0.95) << "accuracy " << acc;
  EXPECT_EQ(cats.size(), 6u);
}
