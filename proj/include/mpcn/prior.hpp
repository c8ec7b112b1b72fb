#pragma once

#include <random>
#include <vector>

#include "mpcn/layers.hpp"
#include "mpcn/netblocks.hpp"

namespace mpcn {

enum class PriorFusion {
  kAttention,  // scaled dot-product multi-head cross-attention
  kAverage,    // uniform weights over the unmasked slots
};

/// Memory-prior fusion:
///   Q = q Wq, K = k Wk, V = v Wv
///   e = Q + LN1(MHA(Q, K, V))
///   prior = e + LN2(FFN(e))
/// Slots are addressed through value_index: entry b*k + j names a row of the
/// shape-feature matrix, or -1 for a zero-padded slot, which is masked out of
/// the softmax. A query whose slots are all masked gets a zero MHA output.
template <typename T>
class PriorModule {
 public:
  PriorModule(const PriorConfig& config, int query_dim, int value_dim);

  /// query: [B, query_dim]; keys: [B, k, query_dim]; shape_feats: [U, value_dim].
  Tensor<T> forward(const Tensor<T>& query, const Tensor<T>& keys, const std::vector<int>& value_index,
                    const Tensor<T>& shape_feats, PriorFusion fusion = PriorFusion::kAttention);

  struct Gradients {
    Tensor<T> query;        // [B, query_dim]
    Tensor<T> shape_feats;  // [U, value_dim]
  };
  Gradients backward(const Tensor<T>& dprior);

  /// Attention weight of query b, head h on slot j from the last forward.
  T attention(int b, int h, int j) const {
    return weights_[(static_cast<std::size_t>(b) * config_.heads + h) * k_ + j];
  }
  int last_all_masked() const { return all_masked_; }

  std::vector<Param<T>*> params();
  void init(std::mt19937_64& rng);
  const PriorConfig& config() const { return config_; }

 private:
  PriorConfig config_;
  int query_dim_, value_dim_;
  Linear<T> wq_, wk_, wv_, wo_;
  LayerNorm<T> ln1_;
  Linear<T> ffn1_;
  ReLU<T> ffn_act_;
  Linear<T> ffn2_;
  LayerNorm<T> ln2_;

  // forward cache
  int batch_ = 0, k_ = 0, units_ = 0;
  PriorFusion fusion_ = PriorFusion::kAttention;
  std::vector<int> index_;
  std::vector<char> row_masked_;
  Tensor<T> qp_, kp_, vp_;
  std::vector<T> weights_;
  int all_masked_ = 0;
};

/// Decoder conditioning: rows of [image | prior].
template <typename T>
Tensor<T> concat_condition(const Tensor<T>& image_feat, const Tensor<T>& prior);

/// Splits a [B, a + b] gradient back into ([B, a], [B, b]).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_condition(const Tensor<T>& grad, int image_width);

}  // namespace mpcn
