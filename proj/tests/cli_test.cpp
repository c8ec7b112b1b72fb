#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "mpcn/errors.hpp"

using namespace mpcn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result mpcn_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// FNV-1a over relative paths and contents, in sorted path order.
std::uint64_t tree_checksum(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& f : files) {
    mix(f.string());
    mix(slurp(root / f));
  }
  return h;
}

std::string value_after(const std::string& text, const std::string& key) {
  const auto p = text.find(key + "=");
  if (p == std::string::npos) return "";
  const auto e = text.find('\n', p);
  return text.substr(p + key.size() + 1, e - p - key.size() - 1);
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("mpcn-cli-" + std::to_string(::getpid()) + "-" +
                                         ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
    ::setenv("MPCN_RUN_DIR", (root_ / "runs").c_str(), 1);
  }
  void TearDown() override {
    ::unsetenv("MPCN_RUN_DIR");
    fs::remove_all(root_);
  }
  fs::path root_;
};

}  // namespace

TEST_F(CliTest, GenDataIsDeterministic) {
  const auto a = mpcn_run({"gen-data", "--seed", "7", "--per-family", "4", "--out", (root_ / "a").string()});
  const auto b = mpcn_run({"gen-data", "--seed", "7", "--per-family", "4", "--out", (root_ / "b").string()});
  const auto c = mpcn_run({"gen-data", "--seed", "8", "--per-family", "4", "--out", (root_ / "c").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NE(a.out.find("manifest.csv"), std::string::npos);
  EXPECT_EQ(tree_checksum(root_ / "a"), tree_checksum(root_ / "b"));
  EXPECT_NE(tree_checksum(root_ / "a"), tree_checksum(root_ / "c"));
}

TEST_F(CliTest, GenDataRowCount) {
  const auto r = mpcn_run({"gen-data", "--families", "6", "--per-family", "300"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(root_ / "runs" / "data" / "manifest.csv");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines - 1, 1800);
}

TEST_F(CliTest, MalformedFlagPrintsUsage) {
  for (const auto& args : std::vector<std::vector<std::string>>{{"train", "--batch", "abc"},
                                                                 {"train", "--shots", "3"},
                                                                 {"eval", "--ablate", "everything"},
                                                                 {"gen-data", "--families", "9"},
                                                                 {"frobnicate"},
                                                                 {}}) {
    const auto r = mpcn_run(args);
    EXPECT_NE(r.code, 0);
    EXPECT_NE((r.out + r.err).find("Usage"), std::string::npos) << r.out << r.err;
  }
}

TEST_F(CliTest, ConfigErrorsStopBeforeTraining) {
  ASSERT_EQ(mpcn_run({"gen-data", "--per-family", "3", "--out", (root_ / "d").string()}).code, 0);
  const auto data = (root_ / "d" / "manifest.csv").string();
  std::ofstream(root_ / "bad.json") << R"({"batch": 16, "learning_rate": 0.1})";
  std::ofstream(root_ / "neg.json") << R"({"tau": -1})";
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"train", "--config", (root_ / "bad.json").string(), "--data", data},
           {"train", "--config", (root_ / "neg.json").string(), "--data", data},
           {"train", "--lr", "-1", "--data", data},
           {"train"},
           {"train", "--stage", "finetune", "--data", data},
           {"eval", "--data", data}}) {
    const auto r = mpcn_run(args);
    EXPECT_EQ(r.code, 2) << r.err;
    EXPECT_NE(r.err.find("config error"), std::string::npos) << r.err;
    EXPECT_EQ(r.out.find("epoch"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(root_ / "runs" / "config.json"));
  if (fs::exists(root_ / "runs")) {
    for (const auto& e : fs::directory_iterator(root_ / "runs")) ADD_FAILURE() << "created " << e.path();
  }
  // a manifest pointing nowhere is a load error
  std::ofstream(root_ / "broken.csv") << "sample_id,category,role,image_path,voxel_path,seed\nx,box,base,a.pgm,a.binvox,1\n";
  const auto r = mpcn_run({"train", "--data", (root_ / "broken.csv").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("row 1"), std::string::npos) << r.err;
}

TEST_F(CliTest, TwoStageProtocolAndRerun) {
  ASSERT_EQ(mpcn_run({"gen-data", "--per-family", "8", "--seed", "2", "--out", (root_ / "d").string()}).code, 0);
  const auto data = (root_ / "d" / "manifest.csv").string();
  std::string reports[2];
  std::string csvs[2];
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = (root_ / ("run" + std::to_string(rep))).string();
    const auto base = mpcn_run({"train", "--stage", "base", "--data", data, "--seed", "4", "--epochs", "1", "--batch",
                                "8", "--lr", "1e-3", "--run-dir", dir});
    ASSERT_EQ(base.code, 0) << base.err;
    EXPECT_EQ(value_after(base.out, "run_dir"), dir);
    EXPECT_TRUE(fs::exists(fs::path(dir) / "base.ckpt"));
    EXPECT_TRUE(fs::exists(fs::path(dir) / "config.json"));
    const auto ft = mpcn_run({"train", "--stage", "finetune", "--run-dir", dir, "--shots", "5", "--epochs", "2"});
    ASSERT_EQ(ft.code, 0) << ft.err;
    EXPECT_TRUE(fs::exists(fs::path(dir) / "finetune-5shot.ckpt"));
    const auto ev = mpcn_run({"eval", "--run-dir", dir, "--shots", "5"});
    ASSERT_EQ(ev.code, 0) << ev.err;
    const fs::path report = fs::path(dir) / "report-mpcn-5shot.txt";
    ASSERT_EQ(value_after(ev.out, "report"), report.string());
    reports[rep] = slurp(report);
    csvs[rep] = slurp(fs::path(dir) / "report-mpcn-5shot.csv");
  }
  EXPECT_EQ(reports[0], reports[1]);
  EXPECT_EQ(csvs[0], csvs[1]);
  EXPECT_EQ(value_after(reports[0], "config.seed"), "4");
  EXPECT_EQ(value_after(reports[0], "config.shots"), "5");
  EXPECT_EQ(value_after(reports[0], "config.finetune_epochs"), "2");
  EXPECT_EQ(value_after(reports[0], "config.lr"), "0.001");
  EXPECT_EQ(value_after(reports[0], "support_size"), "10");
  EXPECT_EQ(value_after(reports[0], "base.epochs"), "1");
  EXPECT_EQ(value_after(reports[0], "finetune.epochs"), "2");
  EXPECT_EQ(std::count(csvs[0].begin(), csvs[0].end(), '\n'), 1 + 6);

  const auto dir = (root_ / "run0").string();
  const auto np = mpcn_run({"eval", "--run-dir", dir, "--shots", "5", "--ablate", "no-prior"});
  ASSERT_EQ(np.code, 0) << np.err;
  EXPECT_TRUE(fs::exists(fs::path(dir) / "report-no-prior-5shot.txt"));
  const auto nf = mpcn_run({"eval", "--run-dir", dir, "--shots", "1", "--ablate", "no-finetune"});
  ASSERT_EQ(nf.code, 0) << nf.err;
  const auto missing = mpcn_run({"eval", "--run-dir", dir, "--shots", "10"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("finetune-10shot.ckpt"), std::string::npos);

  // default run directory lands under MPCN_RUN_DIR
  const auto fresh = mpcn_run({"train", "--data", data, "--epochs", "0", "--seed", "11"});
  ASSERT_EQ(fresh.code, 0) << fresh.err;
  const auto where = fs::path(value_after(fresh.out, "run_dir"));
  EXPECT_EQ(where.parent_path(), root_ / "runs");
  EXPECT_NE(where.filename().string().find("-seed11"), std::string::npos);
}

TEST_F(CliTest, PlotSidecarMatchesReports) {
  auto write_report = [&](const std::string& name, const std::string& method, int shots, const std::string& iou) {
    std::ofstream(root_ / name) << "method=" << method << "\nconfig.shots=" << shots << "\nmean_iou=" << iou << "\n";
    return (root_ / name).string();
  };
  const std::vector<std::string> reps{write_report("a.txt", "mpcn", 1, "0.31234567890123456"),
                                      write_report("b.txt", "mpcn", 10, "0.40000000000000002"),
                                      write_report("c.txt", "mpcn", 25, "0.45"),
                                      write_report("d.txt", "no-prior", 1, "0.2"),
                                      write_report("e.txt", "no-prior", 25, "0.25"),
                                      write_report("f.txt", "mpcn", 25, "0.55")};
  std::vector<std::string> args{"plot-shots", "--out", (root_ / "p" / "shots.svg").string()};
  args.insert(args.end(), reps.begin(), reps.end());
  const auto r = mpcn_run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto svg = slurp(root_ / "p" / "shots.svg");
  std::size_t polylines = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++polylines;
  EXPECT_EQ(polylines, 2u);

  std::ifstream csv(root_ / "p" / "shots.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "method,shots,mean_iou,reports");
  std::map<std::string, double> got;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string m, s, v, n;
    std::getline(ss, m, ',');
    std::getline(ss, s, ',');
    std::getline(ss, v, ',');
    got[m + "@" + s] = std::stod(v);
  }
  EXPECT_EQ(got.size(), 5u);
  EXPECT_EQ(got["mpcn@1"], 0.31234567890123456);
  EXPECT_EQ(got["mpcn@10"], 0.40000000000000002);
  EXPECT_EQ(got["mpcn@25"], (0.45 + 0.55) / 2);
  EXPECT_EQ(got["no-prior@25"], 0.25);

  // one method, one series
  const auto single = mpcn_run({"plot-shots", "--out", (root_ / "s.svg").string(), reps[0], reps[1]});
  ASSERT_EQ(single.code, 0) << single.err;
  // missing fields are listed per file
  std::ofstream(root_ / "bad1.txt") << "method=mpcn\n";
  std::ofstream(root_ / "bad2.txt") << "mean_iou=0.1\n";
  const auto bad = mpcn_run({"plot-shots", reps[0], (root_ / "bad1.txt").string(), (root_ / "bad2.txt").string()});
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("bad1.txt: missing config.shots, mean_iou"), std::string::npos) << bad.err;
  EXPECT_NE(bad.err.find("bad2.txt: missing method, config.shots"), std::string::npos) << bad.err;
  // one shot count is not a curve
  EXPECT_EQ(mpcn_run({"plot-shots", reps[0]}).code, 2);
}

TEST(CliConfig, JsonRoundTrip) {
  cli::RunConfig c;
  c.preset = "paper";
  c.data = "x/manifest.csv";
  c.episode.lr = 0.1 + 0.2;
  c.episode.seed = 18446744073709551615ull;
  c.episode.ablation = Ablation::kUniformNce;
  const auto back = cli::config_from_json(cli::config_json(c));
  EXPECT_EQ(cli::config_json(back), cli::config_json(c));
  EXPECT_EQ(back.episode.lr, c.episode.lr);
  EXPECT_EQ(back.episode.seed, c.episode.seed);
  EXPECT_THROW(cli::config_from_json("{\"nope\": 1}"), ConfigError);
  EXPECT_THROW(cli::config_from_json("[1,"), ConfigError);
  EXPECT_THROW(cli::config_from_json("{\"batch\": \"many\"}"), ConfigError);
}
