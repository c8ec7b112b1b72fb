#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpcn/checkpoint.hpp"
#include "mpcn/errors.hpp"

namespace mpcn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  (void)ModelSpec::by_name(preset);
  episode.validate();
}

namespace {

json to_json_obj(const RunConfig& c) {
  const auto& e = c.episode;
  return json{{"preset", c.preset},
              {"data", c.data},
              {"stage", to_string(e.stage)},
              {"batch", e.batch},
              {"lr", e.lr},
              {"delta", e.delta},
              {"gamma", e.gamma},
              {"topk", e.topk},
              {"tau", e.tau},
              {"memory_train", e.memory_train},
              {"memory_test", e.memory_test},
              {"lambda", e.lambda},
              {"threshold", e.threshold},
              {"epochs", e.epochs},
              {"finetune_epochs", e.finetune_epochs},
              {"seed", e.seed},
              {"shots", e.shots},
              {"ablation", to_string(e.ablation)}};
}

void apply_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  auto& e = c.episode;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "preset") c.preset = v.get<std::string>();
      else if (key == "data") c.data = v.get<std::string>();
      else if (key == "stage") e.stage = stage_from_string(v.get<std::string>());
      else if (key == "batch") e.batch = v.get<int>();
      else if (key == "lr") e.lr = v.get<double>();
      else if (key == "delta") e.delta = v.get<double>();
      else if (key == "gamma") e.gamma = v.get<double>();
      else if (key == "topk") e.topk = v.get<int>();
      else if (key == "tau") e.tau = v.get<double>();
      else if (key == "memory_train") e.memory_train = v.get<int>();
      else if (key == "memory_test") e.memory_test = v.get<int>();
      else if (key == "lambda") e.lambda = v.get<double>();
      else if (key == "threshold") e.threshold = v.get<double>();
      else if (key == "epochs") e.epochs = v.get<int>();
      else if (key == "finetune_epochs") e.finetune_epochs = v.get<int>();
      else if (key == "seed") e.seed = v.get<std::uint64_t>();
      else if (key == "shots") e.shots = v.get<int>();
      else if (key == "ablation") e.ablation = ablation_from_string(v.get<std::string>());
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const json::exception& ex) {
      throw ConfigError("config key '" + key + "': " + ex.what());
    }
  }
}

}  // namespace

std::string config_json(const RunConfig& cfg) { return to_json_obj(cfg).dump(2); }

RunConfig config_from_json(const std::string& text) {
  RunConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  apply_json(j, c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const RunConfig& cfg, const fs::path& path) {
  std::ofstream out(path);
  out << config_json(cfg) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

fs::path run_root() {
  const char* env = std::getenv("MPCN_RUN_DIR");
  return env && *env ? fs::path(env) : fs::path("runs");
}

namespace {

// Flags shared by train and eval; unset flags leave the config alone.
struct EpisodeFlags {
  std::optional<std::string> config, data, preset, ablate, run_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> shots, topk, memory_size, batch, epochs;
  std::optional<double> delta, gamma, tau, lambda, lr, threshold;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "JSON run config");
    app->add_option("--data", data, "dataset manifest.csv");
    app->add_option("--run-dir", run_dir, "run directory (created by train --stage base)");
    app->add_option("--seed", seed, "training / split seed");
    app->add_option("--shots", shots, "support samples per novel category")->check(CLI::IsMember({0, 1, 5, 10, 25}));
    app->add_option("--delta", delta, "memory insertion / positive-pair threshold");
    app->add_option("--gamma", gamma, "contrastive pair-weight slope");
    app->add_option("--topk", topk, "retrieved memory slots")->check(CLI::PositiveNumber);
    app->add_option("--tau", tau, "contrastive temperature");
    app->add_option("--memory-size", memory_size, "memory capacity of this stage")->check(CLI::PositiveNumber);
    app->add_option("--lambda", lambda, "contrastive loss weight");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
    app->add_option("--epochs", epochs, "epochs of this stage")->check(CLI::NonNegativeNumber);
    app->add_option("--threshold", threshold, "IoU threshold");
    app->add_option("--ablate", ablate, "ablation")
        ->check(CLI::IsMember({"no-prior", "average", "uniform-nce", "no-nce", "no-finetune"}));
    app->add_option("--preset", preset, "model preset")->check(CLI::IsMember({"paper", "desk"}));
  }

  RunConfig resolve(Stage stage) const {
    RunConfig c;
    if (config) {
      c = load_config(*config);
    } else if (run_dir && fs::exists(fs::path(*run_dir) / "config.json")) {
      c = load_config(fs::path(*run_dir) / "config.json");
    }
    auto& e = c.episode;
    e.stage = stage;
    if (data) c.data = *data;
    if (preset) c.preset = *preset;
    if (seed) e.seed = *seed;
    if (shots) e.shots = *shots;
    if (delta) e.delta = *delta;
    if (gamma) e.gamma = *gamma;
    if (topk) e.topk = *topk;
    if (tau) e.tau = *tau;
    if (memory_size) (stage == Stage::kEval ? e.memory_test : e.memory_train) = *memory_size;
    if (lambda) e.lambda = *lambda;
    if (lr) e.lr = *lr;
    if (batch) e.batch = *batch;
    if (epochs) (stage == Stage::kFinetune ? e.finetune_epochs : e.epochs) = *epochs;
    if (threshold) e.threshold = *threshold;
    if (ablate) e.ablation = ablation_from_string(*ablate);
    c.validate();
    if (c.data.empty()) throw ConfigError("no dataset: pass --data or set \"data\" in the config");
    return c;
  }
};

json curve_json(const std::vector<EpochMetrics>& c) {
  json a = json::array();
  for (const auto& m : c)
    a.push_back({{"epoch", m.epoch},
                 {"batches", m.batches},
                 {"rec", m.rec},
                 {"nce", m.nce},
                 {"total", m.total},
                 {"nce_coverage", m.nce_coverage},
                 {"insertions", m.insertions},
                 {"memory_size", m.memory_size},
                 {"max_memory_size", m.max_memory_size}});
  return a;
}

std::vector<EpochMetrics> curve_from_json(const json& a) {
  std::vector<EpochMetrics> out;
  for (const auto& j : a) {
    EpochMetrics m;
    m.epoch = j.at("epoch");
    m.batches = j.at("batches");
    m.rec = j.at("rec");
    m.nce = j.at("nce");
    m.total = j.at("total");
    m.nce_coverage = j.at("nce_coverage");
    m.insertions = j.at("insertions");
    m.memory_size = j.at("memory_size");
    m.max_memory_size = j.at("max_memory_size");
    out.push_back(m);
  }
  return out;
}

std::string checkpoint_name(int shots) { return "finetune-" + std::to_string(shots) + "shot.ckpt"; }

fs::path new_run_dir(std::uint64_t seed) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const fs::path base = run_root() / (std::string(stamp) + "-seed" + std::to_string(seed));
  fs::path dir = base;
  for (int i = 2; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
  return dir;
}

struct Loaded {
  Dataset data;
  FewShotSplit split;
};

Loaded load_split(const RunConfig& rc, int shots) {
  Loaded l;
  l.data = load_binvox_dataset(rc.data, ModelSpec::by_name(rc.preset).resolution);
  const auto novel = novel_categories(l.data);
  if (novel.empty()) throw ConfigError("dataset has no novel categories");
  l.split = split_fewshot(l.data, novel, shots, rc.episode.seed);
  return l;
}

void print_epoch(std::ostream& out, Stage s, const EpochMetrics& m) {
  out << to_string(s) << " epoch " << m.epoch << ": rec=" << m.rec << " nce=" << m.nce << " total=" << m.total
      << " insertions=" << m.insertions << " memory=" << m.memory_size << std::endl;
}

int cmd_gen_data(const fs::path& out_dir, std::uint64_t seed, int families, int per_family, int views,
                 bool random_view, int resolution, std::ostream& out) {
  GenerationOptions opt;
  auto all = default_families();
  if (families < 1 || families > static_cast<int>(all.size()))
    throw ConfigError("--families must lie in [1, " + std::to_string(all.size()) + "]");
  opt.families.assign(all.begin(), all.begin() + families);
  opt.per_family = per_family;
  opt.views_per_shape = views;
  opt.random_view = random_view;
  opt.resolution = resolution;
  opt.seed = seed;
  const auto manifest = write_dataset(generate_dataset(opt), out_dir);
  out << manifest.string() << std::endl;
  return 0;
}

int cmd_train(const EpisodeFlags& f, Stage stage, std::ostream& out) {
  RunConfig rc = f.resolve(stage);
  auto& e = rc.episode;
  if (stage == Stage::kBase) {
    const fs::path dir = f.run_dir ? fs::path(*f.run_dir) : new_run_dir(e.seed);
    auto l = load_split(rc, 0);
    fs::create_directories(dir);
    Model<float> model(ModelSpec::by_name(rc.preset));
    model.init(e.seed);
    save_config(rc, dir / "config.json");
    const auto curve = train_stage(model, l.split.base, e, Stage::kBase, e.epochs,
                                   [&](const EpochMetrics& m) { print_epoch(out, Stage::kBase, m); });
    json extra{{"config", json::parse(config_json(rc))}, {"curve", curve_json(curve)}};
    save_model(model, dir / "base.ckpt", extra.dump());
    out << "run_dir=" << dir.string() << std::endl;
    return 0;
  }
  if (!f.run_dir) throw ConfigError("train --stage finetune needs --run-dir");
  if (e.ablation == Ablation::kNoFinetune) throw ConfigError("finetune stage cannot run with --ablate no-finetune");
  if (e.shots < 1) throw ConfigError("finetune stage needs --shots >= 1");
  const fs::path dir(*f.run_dir);
  auto model = load_model<float>(dir / "base.ckpt");
  if (model.spec().preset != rc.preset) throw ConfigError("checkpoint preset differs from --preset");
  auto l = load_split(rc, e.shots);
  const auto curve = train_stage(model, l.split.support, e, Stage::kFinetune, e.finetune_epochs,
                                 [&](const EpochMetrics& m) { print_epoch(out, Stage::kFinetune, m); });
  json extra{{"config", json::parse(config_json(rc))}, {"curve", curve_json(curve)}};
  save_model(model, dir / checkpoint_name(e.shots), extra.dump());
  out << "checkpoint=" << (dir / checkpoint_name(e.shots)).string() << std::endl;
  return 0;
}

int cmd_eval(const EpisodeFlags& f, std::ostream& out) {
  if (!f.run_dir) throw ConfigError("eval needs --run-dir");
  RunConfig rc = f.resolve(Stage::kEval);
  const auto& e = rc.episode;
  const fs::path dir(*f.run_dir);
  const bool finetuned = e.shots > 0 && e.ablation != Ablation::kNoFinetune;
  const fs::path ft = dir / checkpoint_name(e.shots);
  if (finetuned && !fs::exists(ft))
    throw ConfigError("missing " + ft.string() + ": run train --stage finetune --shots " + std::to_string(e.shots) +
                      " first, or pass --ablate no-finetune");
  std::string base_extra, ft_extra;
  auto model = load_model<float>(dir / "base.ckpt", &base_extra);
  if (finetuned) model = load_model<float>(ft, &ft_extra);
  if (model.spec().preset != rc.preset) throw ConfigError("checkpoint preset differs from --preset");

  auto l = load_split(rc, e.shots);
  auto rep = evaluate_fewshot(model, l.split.support, l.split.query, e);
  rep.base_curve = curve_from_json(json::parse(base_extra).value("curve", json::array()));
  if (finetuned) {
    const auto ft_meta = json::parse(ft_extra);
    rep.finetune_curve = curve_from_json(ft_meta.value("curve", json::array()));
    // the finetune stage may have run with its own epoch count
    rep.config["finetune_epochs"] = std::to_string(ft_meta.at("config").at("finetune_epochs").get<int>());
  }
  rep.config["preset"] = rc.preset;
  rep.config["data"] = rc.data;

  const std::string stem = "report-" + rep.method + "-" + std::to_string(e.shots) + "shot";
  rep.write((dir / (stem + ".txt")).string(), (dir / (stem + ".csv")).string());
  out << "report=" << (dir / (stem + ".txt")).string() << std::endl;
  out << "mean_iou=" << rep.mean_iou << std::endl;
  for (const auto& [c, v] : rep.category_iou) out << "  " << c << " " << v << std::endl;
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memory-prior contrastive network: few-shot single-view voxel reconstruction"};
  app.name("mpcn");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  auto* gen = app.add_subcommand("gen-data", "generate the procedural shape dataset");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  int families = 6, per_family = 300, views = 1, resolution = 32;
  bool random_view = false;
  gen->add_option("--out", gen_out, "output directory (default $MPCN_RUN_DIR/data)");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--families", families, "number of shape families (first four base, rest novel)")
      ->check(CLI::Range(1, 6));
  gen->add_option("--per-family", per_family, "shapes per family")->check(CLI::PositiveNumber);
  gen->add_option("--views", views, "views per shape")->check(CLI::PositiveNumber);
  gen->add_flag("--random-view", random_view, "random view axis per sample");
  gen->add_option("--resolution", resolution, "voxel resolution")->check(CLI::IsMember({8, 32}));

  auto* train = app.add_subcommand("train", "train one stage");
  EpisodeFlags train_flags;
  std::string stage_name = "base";
  train->add_option("--stage", stage_name, "base or finetune")->check(CLI::IsMember({"base", "finetune"}));
  train_flags.add_to(train);

  auto* eval = app.add_subcommand("eval", "evaluate a run on the novel query set");
  EpisodeFlags eval_flags;
  eval_flags.add_to(eval);

  auto* plot = app.add_subcommand("plot-shots", "plot mean IoU against shots from reports");
  std::vector<std::string> reports;
  std::string plot_out;
  plot->add_option("reports", reports, "report .txt files")->required();
  plot->add_option("--out", plot_out, "SVG path (default $MPCN_RUN_DIR/shots.svg); a CSV sits beside it");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) {
      const fs::path dir = gen_out.empty() ? run_root() / "data" : fs::path(gen_out);
      return cmd_gen_data(dir, gen_seed, families, per_family, views, random_view, resolution, out);
    }
    if (*train) return cmd_train(train_flags, stage_from_string(stage_name), out);
    if (*eval) return cmd_eval(eval_flags, out);
    if (*plot) {
      const fs::path svg = plot_out.empty() ? run_root() / "shots.svg" : fs::path(plot_out);
      if (svg.has_parent_path()) fs::create_directories(svg.parent_path());
      const auto points = collect_shot_points(reports);
      fs::path csv = svg;
      csv.replace_extension(".csv");
      write_shot_plot(points, svg, csv);
      out << svg.string() << '\n' << csv.string() << std::endl;
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const LoadError& e) {
    err << "load error: " << e.what() << std::endl;
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}

}  // namespace mpcn::cli
