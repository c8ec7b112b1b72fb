#include "mpcn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mpcn/errors.hpp"

namespace mpcn {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::kBase: return "base";
    case Stage::kFinetune: return "finetune";
    case Stage::kEval: return "eval";
  }
  return "?";
}

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kNoPrior: return "no-prior";
    case Ablation::kAverage: return "average";
    case Ablation::kUniformNce: return "uniform-nce";
    case Ablation::kNoNce: return "no-nce";
    case Ablation::kNoFinetune: return "no-finetune";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (auto st : {Stage::kBase, Stage::kFinetune, Stage::kEval})
    if (s == to_string(st)) return st;
  throw ConfigError("unknown stage '" + s + "'");
}

Ablation ablation_from_string(const std::string& s) {
  for (auto a : {Ablation::kNone, Ablation::kNoPrior, Ablation::kAverage, Ablation::kUniformNce, Ablation::kNoNce,
                 Ablation::kNoFinetune})
    if (s == to_string(a)) return a;
  throw ConfigError("unknown ablation '" + s + "'");
}

void EpisodeConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  need(batch >= 1, "batch must be positive");
  need(std::isfinite(lr) && lr > 0, "lr must be positive");
  need(std::isfinite(delta) && delta >= 0, "delta must be non-negative");
  need(std::isfinite(gamma) && gamma > 0, "gamma must be positive");
  need(topk >= 1, "topk must be positive");
  need(std::isfinite(tau) && tau > 0, "tau must be positive");
  need(memory_train >= 1 && memory_test >= 1, "memory sizes must be positive");
  need(std::isfinite(lambda) && lambda >= 0, "lambda must be non-negative");
  need(threshold > 0 && threshold < 1, "threshold must lie in (0, 1)");
  need(epochs >= 0 && finetune_epochs >= 0, "epochs must be non-negative");
  need(shots >= 0, "shots must be non-negative");
}

PriorMode EpisodeConfig::prior_mode() const {
  if (ablation == Ablation::kNoPrior) return PriorMode::kNone;
  if (ablation == Ablation::kAverage) return PriorMode::kAverage;
  return PriorMode::kAttention;
}

ContrastOptions EpisodeConfig::contrast() const {
  ContrastOptions o;
  o.tau = tau;
  o.delta = delta;
  o.gamma = gamma;
  o.weighting = ablation == Ablation::kUniformNce ? NceWeighting::kUniform : NceWeighting::kShape;
  return o;
}

template <typename T>
Tensor<T> image_batch(const std::vector<const SamplePair*>& samples, int image_size) {
  const int b = static_cast<int>(samples.size());
  Tensor<T> out({b, 1, image_size, image_size});
  const std::size_t plane = static_cast<std::size_t>(image_size) * image_size;
  for (int i = 0; i < b; ++i) {
    const auto& img = samples[i]->image;
    T* dst = out.data() + i * plane;
    if (img.size == image_size) {
      std::copy(img.pixels.begin(), img.pixels.end(), dst);
      continue;
    }
    for (int r = 0; r < image_size; ++r)
      for (int c = 0; c < image_size; ++c)
        dst[r * image_size + c] = img.at(r * img.size / image_size, c * img.size / image_size);
  }
  return out;
}

template <typename T>
Tensor<T> voxel_batch(const std::vector<const VoxelGrid*>& grids) {
  const int b = static_cast<int>(grids.size());
  const int r = b ? grids[0]->resolution() : 0;
  Tensor<T> out({b, 1, r, r, r});
  const std::size_t vol = static_cast<std::size_t>(r) * r * r;
  for (int i = 0; i < b; ++i) {
    if (grids[i]->resolution() != r) throw ShapeError("voxel_batch: mixed resolutions");
    const auto& d = grids[i]->data();
    std::copy(d.begin(), d.end(), out.data() + i * vol);
  }
  return out;
}

template <typename T>
PriorBatch<T> gather_prior(const MemoryBank& bank, const std::vector<std::vector<Neighbor>>& nbrs) {
  const int b = static_cast<int>(nbrs.size());
  const int k = b ? static_cast<int>(nbrs[0].size()) : 0;
  const int dim = bank.key_dim();
  PriorBatch<T> pb;
  pb.keys = Tensor<T>({b, k, dim});
  pb.value_index.assign(static_cast<std::size_t>(b) * k, -1);
  std::unordered_map<int, int> unit_of;
  std::vector<const VoxelGrid*> units;
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < k; ++j) {
      const auto& n = nbrs[i][j];
      const auto key = bank.key_of(n);
      T* dst = pb.keys.data() + (static_cast<std::size_t>(i) * k + j) * dim;
      for (int d = 0; d < dim; ++d) dst[d] = static_cast<T>(key[d]);
      if (n.padded()) continue;
      auto [it, fresh] = unit_of.try_emplace(n.slot, static_cast<int>(units.size()));
      if (fresh) units.push_back(&bank.value_of(n));
      pb.value_index[static_cast<std::size_t>(i) * k + j] = it->second;
    }
  if (!units.empty()) pb.shape_voxels = voxel_batch<T>(units);
  return pb;
}

namespace {

std::vector<double> to_double(const Tensor<float>& t) { return std::vector<double>(t.values().begin(), t.values().end()); }

ProbVolume prob_slice(const Tensor<float>& prob, int i, int r) {
  const std::size_t vol = static_cast<std::size_t>(r) * r * r;
  const float* p = prob.data() + i * vol;
  return ProbVolume(r, std::vector<float>(p, p + vol));
}

}  // namespace

EpochMetrics train_epoch(Model<float>& model, Adam<float>& opt, MemoryBank& bank,
                         const std::vector<const SamplePair*>& data, const EpisodeConfig& cfg, int epoch,
                         Stage stage) {
  if (data.empty()) throw ConfigError("train_epoch: empty training set");
  const auto& spec = model.spec();
  const int r = spec.resolution;
  const int dim = spec.image.embed_dim;
  const PriorMode mode = cfg.prior_mode();
  const ContrastOptions copt = cfg.contrast();

  bank.flush();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(stage) * 1000003ull + static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);

  EpochMetrics m;
  m.epoch = epoch;
  double nce_cov = 0;
  int nce_batches = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
    std::vector<const SamplePair*> members;
    std::vector<const VoxelGrid*> gts;
    for (std::size_t i = start; i < end; ++i) {
      members.push_back(data[order[i]]);
      gts.push_back(data[order[i]]->voxel.get());
    }
    const int b = static_cast<int>(members.size());

    Tensor<float> feats = model.forward_features(image_batch<float>(members, spec.image.image_size));
    const std::vector<double> q = to_double(feats);
    PriorBatch<float> pb;
    if (mode != PriorMode::kNone) pb = gather_prior<float>(bank, bank.retrieve(q, b, cfg.topk));
    auto out = model.forward_from_features(std::move(feats), pb, mode);

    Tensor<float> dprob;
    const double rec = bce_batch(out.prob, gts, &dprob);
    double nce = 0;
    Tensor<float> dfeat;
    const bool nce_on = cfg.use_nce() && b >= 2;
    if (nce_on) {
      const auto res = contrastive_3d(out.features, pairwise_shape_distance(gts), copt, &dfeat);
      nce = res.loss;
      for (auto& g : dfeat.storage()) g = static_cast<float>(g * cfg.lambda);
      nce_cov += res.coverage();
      ++nce_batches;
    }
    const double total = total_loss(rec, nce, cfg.lambda);
    if (!std::isfinite(total)) {
      std::ostringstream msg;
      msg << "non-finite loss in " << to_string(stage) << " epoch " << epoch << " batch " << m.batches
          << ": rec=" << rec << " nce=" << nce << " lambda=" << cfg.lambda;
      throw TrainingError(msg.str());
    }

    model.zero_grad();
    model.backward(dprob, nce_on ? &dfeat : nullptr);
    opt.step();

    for (int i = 0; i < b; ++i) {
      const std::span<const double> key(q.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim));
      if (bank.store_if_hard(key, members[i]->voxel, prob_slice(out.prob, i, r), *gts[i], cfg.delta)) ++m.insertions;
    }
    m.max_memory_size = std::max(m.max_memory_size, static_cast<int>(bank.size()));
    m.rec += rec;
    m.nce += nce;
    m.total += total;
    ++m.batches;
  }
  m.rec /= m.batches;
  m.nce /= m.batches;
  m.total /= m.batches;
  m.nce_coverage = nce_batches ? nce_cov / nce_batches : 0;
  m.memory_size = static_cast<int>(bank.size());
  return m;
}

std::vector<EpochMetrics> train_stage(Model<float>& model, const std::vector<const SamplePair*>& data,
                                      const EpisodeConfig& cfg, Stage stage, int epochs,
                                      const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  AdamOptions ao;
  ao.lr = cfg.lr;
  Adam<float> opt(model.params(), ao);
  MemoryBank bank(static_cast<std::size_t>(cfg.capacity(stage)), model.spec().image.embed_dim, model.spec().resolution);
  std::vector<EpochMetrics> curve;
  for (int e = 0; e < epochs; ++e) {
    curve.push_back(train_epoch(model, opt, bank, data, cfg, e, stage));
    if (on_epoch) on_epoch(curve.back());
  }
  return curve;
}

RunReport evaluate_fewshot(Model<float>& model, const std::vector<const SamplePair*>& support,
                           const std::vector<const SamplePair*>& query, const EpisodeConfig& cfg) {
  cfg.validate();
  if (query.empty()) throw ConfigError("evaluate_fewshot: empty query set");
  const auto& spec = model.spec();
  const int r = spec.resolution;
  const int dim = spec.image.embed_dim;
  const PriorMode mode = cfg.prior_mode();
  const int batch = cfg.batch;

  MemoryBank bank(static_cast<std::size_t>(cfg.capacity(Stage::kEval)), dim, r);
  bank.flush();
  for (std::size_t start = 0; start < support.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(support.size(), start + static_cast<std::size_t>(batch));
    std::vector<const SamplePair*> members(support.begin() + static_cast<long>(start), support.begin() + static_cast<long>(end));
    const auto q = to_double(model.encode_images(image_batch<float>(members, spec.image.image_size)));
    for (std::size_t i = 0; i < members.size(); ++i)
      bank.insert(std::span<const double>(q.data() + i * dim, static_cast<std::size_t>(dim)), members[i]->voxel);
  }

  // bank values are fixed for the whole evaluation: encode them once
  Tensor<float> bank_feats({0, spec.shape.feature_dim});
  if (!bank.empty() && mode != PriorMode::kNone) {
    const int n = static_cast<int>(bank.size());
    bank_feats = Tensor<float>({n, spec.shape.feature_dim});
    for (int start = 0; start < n; start += batch) {
      const int end = std::min(n, start + batch);
      std::vector<const VoxelGrid*> grids;
      for (int i = start; i < end; ++i) grids.push_back(bank.slot(static_cast<std::size_t>(i)).value.get());
      const auto f = model.encode_shapes(voxel_batch<float>(grids));
      std::copy(f.values().begin(), f.values().end(), bank_feats.data() + static_cast<std::size_t>(start) * spec.shape.feature_dim);
    }
  }

  RunReport rep;
  rep.method = cfg.ablation == Ablation::kNone ? "mpcn" : to_string(cfg.ablation);
  rep.config = config_echo(cfg);
  rep.support_size = static_cast<int>(support.size());
  rep.memory_size = static_cast<int>(bank.size());
  for (std::size_t start = 0; start < query.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(query.size(), start + static_cast<std::size_t>(batch));
    std::vector<const SamplePair*> members(query.begin() + static_cast<long>(start), query.begin() + static_cast<long>(end));
    const int b = static_cast<int>(members.size());
    Tensor<float> feats = model.forward_features(image_batch<float>(members, spec.image.image_size));
    PriorBatch<float> pb;
    if (mode != PriorMode::kNone) {
      const auto nbrs = bank.retrieve(to_double(feats), b, cfg.topk);
      pb.keys = Tensor<float>({b, cfg.topk, dim});
      pb.value_index.assign(static_cast<std::size_t>(b) * cfg.topk, -1);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < cfg.topk; ++j) {
          const auto& nb = nbrs[i][j];
          const auto key = bank.key_of(nb);
          std::copy(key.begin(), key.end(), pb.keys.data() + (static_cast<std::size_t>(i) * cfg.topk + j) * dim);
          pb.value_index[static_cast<std::size_t>(i) * cfg.topk + j] = nb.slot;
        }
      pb.shape_feats = bank_feats;
    }
    const auto out = model.forward_from_features(std::move(feats), pb, mode);
    if (mode != PriorMode::kNone) rep.all_masked_queries += model.prior().last_all_masked();
    for (int i = 0; i < b; ++i)
      rep.samples.push_back({members[i]->category, members[i]->sample_id,
                             iou(prob_slice(out.prob, i, r), *members[i]->voxel, cfg.threshold)});
  }

  std::map<std::string, std::pair<double, int>> acc;
  double sum = 0;
  for (const auto& s : rep.samples) {
    acc[s.category].first += s.iou;
    acc[s.category].second += 1;
    sum += s.iou;
  }
  double cat_sum = 0;
  for (const auto& [cat, v] : acc) {
    rep.category_iou[cat] = v.first / v.second;
    cat_sum += rep.category_iou[cat];
  }
  rep.mean_iou = cat_sum / static_cast<double>(acc.size());
  rep.sample_mean_iou = sum / static_cast<double>(rep.samples.size());
  return rep;
}

void check_disjoint(const std::vector<const SamplePair*>& base, const std::vector<const SamplePair*>& novel) {
  std::set<std::string> base_cats;
  for (const auto* s : base) base_cats.insert(s->category);
  for (const auto* s : novel)
    if (base_cats.count(s->category))
      throw ConfigError("category '" + s->category + "' appears in both base and novel data");
}

RunReport run_two_stage(Model<float>& model, const FewShotSplit& split, const EpisodeConfig& cfg,
                        const std::function<void(Stage, const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  std::vector<const SamplePair*> novel = split.support;
  novel.insert(novel.end(), split.query.begin(), split.query.end());
  check_disjoint(split.base, novel);
  std::map<std::string, int> shots;
  for (const auto* s : split.query) shots[s->category];
  for (const auto* s : split.support) ++shots[s->category];
  for (const auto& [cat, n] : shots)
    if (n != cfg.shots)
      throw ConfigError("support set has " + std::to_string(n) + " samples of '" + cat + "', expected " +
                        std::to_string(cfg.shots));

  auto hook = [&](Stage st) {
    return [&, st](const EpochMetrics& m) {
      if (on_epoch) on_epoch(st, m);
    };
  };
  auto base_curve = train_stage(model, split.base, cfg, Stage::kBase, cfg.epochs, hook(Stage::kBase));
  std::vector<EpochMetrics> ft_curve;
  if (cfg.shots > 0 && cfg.ablation != Ablation::kNoFinetune)
    ft_curve = train_stage(model, split.support, cfg, Stage::kFinetune, cfg.finetune_epochs, hook(Stage::kFinetune));
  auto rep = evaluate_fewshot(model, split.support, split.query, cfg);
  rep.base_curve = std::move(base_curve);
  rep.finetune_curve = std::move(ft_curve);
  return rep;
}

std::map<std::string, std::string> config_echo(const EpisodeConfig& cfg) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {{"stage", to_string(cfg.stage)},
          {"batch", std::to_string(cfg.batch)},
          {"lr", num(cfg.lr)},
          {"delta", num(cfg.delta)},
          {"gamma", num(cfg.gamma)},
          {"topk", std::to_string(cfg.topk)},
          {"tau", num(cfg.tau)},
          {"memory_train", std::to_string(cfg.memory_train)},
          {"memory_test", std::to_string(cfg.memory_test)},
          {"lambda", num(cfg.lambda)},
          {"threshold", num(cfg.threshold)},
          {"epochs", std::to_string(cfg.epochs)},
          {"finetune_epochs", std::to_string(cfg.finetune_epochs)},
          {"seed", std::to_string(cfg.seed)},
          {"shots", std::to_string(cfg.shots)},
          {"ablation", to_string(cfg.ablation)}};
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void curve_lines(std::ostringstream& os, const std::string& name, const std::vector<EpochMetrics>& c) {
  os << name << ".epochs=" << c.size() << '\n';
  auto series = [&](const char* field, auto get) {
    os << name << '.' << field << '=';
    for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << get(c[i]);
    os << '\n';
  };
  series("rec", [](const EpochMetrics& m) { return fmt(m.rec); });
  series("nce", [](const EpochMetrics& m) { return fmt(m.nce); });
  series("total", [](const EpochMetrics& m) { return fmt(m.total); });
  series("nce_coverage", [](const EpochMetrics& m) { return fmt(m.nce_coverage); });
  series("insertions", [](const EpochMetrics& m) { return std::to_string(m.insertions); });
  series("memory_size", [](const EpochMetrics& m) { return std::to_string(m.memory_size); });
}

}  // namespace

std::string RunReport::to_text() const {
  std::ostringstream os;
  os << "method=" << method << '\n';
  for (const auto& [k, v] : config) os << "config." << k << '=' << v << '\n';
  os << "mean_iou=" << fmt(mean_iou) << '\n';
  os << "sample_mean_iou=" << fmt(sample_mean_iou) << '\n';
  os << "categories=" << category_iou.size() << '\n';
  for (const auto& [c, v] : category_iou) os << "category_iou." << c << '=' << fmt(v) << '\n';
  os << "queries=" << samples.size() << '\n';
  os << "support_size=" << support_size << '\n';
  os << "eval_memory_size=" << memory_size << '\n';
  os << "all_masked_queries=" << all_masked_queries << '\n';
  curve_lines(os, "base", base_curve);
  curve_lines(os, "finetune", finetune_curve);
  return os.str();
}

std::string RunReport::to_csv() const {
  std::ostringstream os;
  os << "category,sample_id,iou\n";
  for (const auto& s : samples) os << s.category << ',' << s.sample_id << ',' << fmt(s.iou) << '\n';
  return os.str();
}

void RunReport::write(const std::string& text_path, const std::string& csv_path) const {
  for (const auto& [path, body] : {std::pair{text_path, to_text()}, std::pair{csv_path, to_csv()}}) {
    std::ofstream out(path, std::ios::binary);
    out << body;
    if (!out) throw std::runtime_error("cannot write " + path);
  }
}

std::map<std::string, std::string> read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read report " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

template Tensor<float> image_batch<float>(const std::vector<const SamplePair*>&, int);
template Tensor<double> image_batch<double>(const std::vector<const SamplePair*>&, int);
template Tensor<float> voxel_batch<float>(const std::vector<const VoxelGrid*>&);
template Tensor<double> voxel_batch<double>(const std::vector<const VoxelGrid*>&);
template PriorBatch<float> gather_prior<float>(const MemoryBank&, const std::vector<std::vector<Neighbor>>&);
template PriorBatch<double> gather_prior<double>(const MemoryBank&, const std::vector<std::vector<Neighbor>>&);

}  // namespace mpcn
