#pragma once

#include <vector>

#include "mpcn/tensor.hpp"
#include "mpcn/voxel.hpp"

namespace mpcn {

inline constexpr double kBceClamp = 1e-7;

/// -(1/r^3) sum[gt log p + (1 - gt) log(1 - p)], p clamped to [eps, 1 - eps].
double bce_loss(const ProbVolume& pred, const VoxelGrid& gt);

/// Batched BCE over predictions [B, 1, r, r, r]: mean of per-sample losses.
/// grad receives dLoss/dpred (zero where the clamp is active).
template <typename T>
double bce_batch(const Tensor<T>& pred, const std::vector<const VoxelGrid*>& gts, Tensor<T>* grad);

/// max(0, 1 - d * gamma).
double pair_weight(double d, double gamma);

enum class NceWeighting {
  kShape,    // positives weighted by pair_weight
  kUniform,  // every positive weighs 1 (plain supervised InfoNCE)
};

struct ContrastOptions {
  double tau = 0.1;
  double delta = 0.1;
  double gamma = 10.0;
  NceWeighting weighting = NceWeighting::kShape;
};

struct ContrastResult {
  double loss = 0.0;
  int valid_queries = 0;  // queries with at least one positive of nonzero weight
  int queries = 0;
  double coverage() const { return queries ? static_cast<double>(valid_queries) / queries : 0.0; }
};

/// 3D-aware contrastive loss over unit-normalised embeddings f (N x dim,
/// row-major) and the symmetric N x N matrix of shape distances. Positives of
/// q are p != q with d(q, p) < delta; the denominator runs over all k != q.
/// Averaged over queries that have a positive; 0 if none does.
ContrastResult contrastive_3d_loss(const std::vector<double>& embeddings, int n, int dim,
                                   const std::vector<double>& shape_dist, const ContrastOptions& opt);

/// Same loss on raw features [N, dim], normalised internally. grad receives
/// dLoss/dfeatures.
template <typename T>
ContrastResult contrastive_3d(const Tensor<T>& features, const std::vector<double>& shape_dist,
                              const ContrastOptions& opt, Tensor<T>* grad);

/// rec + lambda * nce.
inline double total_loss(double rec, double nce, double lambda) { return rec + lambda * nce; }

/// Pairwise shape distances of a batch of ground-truth grids.
std::vector<double> pairwise_shape_distance(const std::vector<const VoxelGrid*>& shapes);

}  // namespace mpcn
