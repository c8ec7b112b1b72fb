#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mpcn/datagen.hpp"
#include "mpcn/losses.hpp"
#include "mpcn/memory.hpp"
#include "mpcn/model.hpp"
#include "mpcn/optim.hpp"

namespace mpcn {

enum class Stage { kBase, kFinetune, kEval };

enum class Ablation {
  kNone,
  kNoPrior,     // prior feature forced to zero
  kAverage,     // uniform fusion instead of attention
  kUniformNce,  // contrastive positives all weigh 1
  kNoNce,       // contrastive term dropped
  kNoFinetune,  // stage 2 skipped
};

const char* to_string(Stage s);
const char* to_string(Ablation a);
Stage stage_from_string(const std::string& s);
Ablation ablation_from_string(const std::string& s);

struct EpisodeConfig {
  Stage stage = Stage::kBase;
  int batch = 16;
  double lr = 1e-4;
  double delta = 0.1;
  double gamma = 10.0;
  int topk = 5;
  double tau = 0.1;
  int memory_train = 4000;
  int memory_test = 200;
  double lambda = 0.001;
  double threshold = 0.3;
  int epochs = 100;
  int finetune_epochs = 20;
  std::uint64_t seed = 0;
  int shots = 5;
  Ablation ablation = Ablation::kNone;

  /// Throws ConfigError.
  void validate() const;
  int capacity(Stage s) const { return s == Stage::kEval ? memory_test : memory_train; }
  PriorMode prior_mode() const;
  ContrastOptions contrast() const;
  bool use_nce() const { return ablation != Ablation::kNoNce && lambda > 0; }
};

struct EpochMetrics {
  int epoch = 0;
  int batches = 0;
  double rec = 0;    // mean BCE
  double nce = 0;    // mean contrastive loss
  double total = 0;  // mean rec + lambda * nce
  double nce_coverage = 0;
  int insertions = 0;
  int memory_size = 0;  // occupancy at epoch end
  int max_memory_size = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Images [B, 1, S, S] for the encoder; depth maps are nearest-resampled
/// when S differs from their size.
template <typename T>
Tensor<T> image_batch(const std::vector<const SamplePair*>& samples, int image_size);

/// Voxels [B, 1, r, r, r] as 0/1 values.
template <typename T>
Tensor<T> voxel_batch(const std::vector<const VoxelGrid*>& grids);

/// Builds the prior input for a batch from retrieval results: keys from the
/// bank, deduplicated slot values as voxels.
template <typename T>
PriorBatch<T> gather_prior(const MemoryBank& bank, const std::vector<std::vector<Neighbor>>& nbrs);

/// One pass of the episodic loop: flush the bank, then per batch encode,
/// retrieve, fuse, decode, insert hard samples, take one optimizer step.
/// `epoch` only seeds the shuffle.
EpochMetrics train_epoch(Model<float>& model, Adam<float>& opt, MemoryBank& bank,
                         const std::vector<const SamplePair*>& data, const EpisodeConfig& cfg, int epoch,
                         Stage stage);

struct SampleResult {
  std::string category;
  std::string sample_id;
  double iou = 0;
};

struct RunReport {
  std::string method;
  std::map<std::string, std::string> config;  // echo, stable key order
  std::map<std::string, double> category_iou;
  double mean_iou = 0;         // mean over categories
  double sample_mean_iou = 0;  // mean over samples
  std::vector<SampleResult> samples;
  std::vector<EpochMetrics> base_curve, finetune_curve;
  int support_size = 0;
  int memory_size = 0;
  int all_masked_queries = 0;

  /// key=value text in a fixed field order.
  std::string to_text() const;
  /// category,sample_id,iou
  std::string to_csv() const;
  void write(const std::string& text_path, const std::string& csv_path) const;
};

/// key=value file as a map (plot and test helpers).
std::map<std::string, std::string> read_report(const std::string& path);

std::map<std::string, std::string> config_echo(const EpisodeConfig& cfg);

/// Trains `epochs` epochs of one stage with a fresh optimizer and bank.
std::vector<EpochMetrics> train_stage(Model<float>& model, const std::vector<const SamplePair*>& data,
                                      const EpisodeConfig& cfg, Stage stage, int epochs,
                                      const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Flushes a test-capacity bank, inserts every support pair, then scores
/// each query at cfg.threshold. Model parameters are not touched.
RunReport evaluate_fewshot(Model<float>& model, const std::vector<const SamplePair*>& support,
                           const std::vector<const SamplePair*>& query, const EpisodeConfig& cfg);

/// Base training, finetuning on the support set (skipped for 0 shots or the
/// no-finetune ablation), then evaluation. Base and novel categories must
/// be disjoint.
RunReport run_two_stage(Model<float>& model, const FewShotSplit& split, const EpisodeConfig& cfg,
                        const std::function<void(Stage, const EpochMetrics&)>& on_epoch = {});

void check_disjoint(const std::vector<const SamplePair*>& base, const std::vector<const SamplePair*>& novel);

}  // namespace mpcn
