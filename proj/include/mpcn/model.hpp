#pragma once

#include <cstdint>
#include <vector>

#include "mpcn/netblocks.hpp"
#include "mpcn/prior.hpp"

namespace mpcn {

enum class PriorMode {
  kAttention,
  kAverage,  // uniform fusion of the retrieved slots
  kNone,     // prior feature forced to zero
};

/// Retrieved memory for one batch. Either shape_voxels (encoded inside the
/// forward pass, gradients reach the shape encoder) or shape_feats
/// (precomputed, inference only) supplies the rows named by value_index.
template <typename T>
struct PriorBatch {
  Tensor<T> keys;                // [B, k, embed_dim]
  std::vector<int> value_index;  // B * k, -1 = padded slot
  Tensor<T> shape_voxels;        // [U, 1, r, r, r]
  Tensor<T> shape_feats;         // [U, feature_dim]
};

/// pr = D(concat(E(I), prior(E(I), retrieved keys, Encoder3D(values)))).
template <typename T>
class Model {
 public:
  explicit Model(const ModelSpec& spec);

  void init(std::uint64_t seed);

  struct Outputs {
    Tensor<T> features;  // [B, embed_dim]
    Tensor<T> prior;     // [B, prior width]
    Tensor<T> prob;      // [B, 1, r, r, r]
  };
  Outputs forward(const Tensor<T>& images, const PriorBatch<T>& memory, PriorMode mode);
  /// Two-phase form of forward: image features first (retrieval needs them),
  /// then prior fusion and decoding. backward covers both phases.
  Tensor<T> forward_features(const Tensor<T>& images);
  Outputs forward_from_features(Tensor<T> features, const PriorBatch<T>& memory, PriorMode mode);
  /// Backward of the last forward. feature_grad (optional, [B, embed_dim])
  /// is added to the image-feature gradient (contrastive term).
  void backward(const Tensor<T>& dprob, const Tensor<T>* feature_grad);

  Tensor<T> encode_images(const Tensor<T>& images) { return image_encoder_.forward(images); }
  Tensor<T> encode_shapes(const Tensor<T>& voxels) { return shape_encoder_.forward(voxels); }

  ImageEncoder<T>& image_encoder() { return image_encoder_; }
  ShapeEncoder<T>& shape_encoder() { return shape_encoder_; }
  PriorModule<T>& prior() { return prior_; }
  ShapeDecoder<T>& decoder() { return decoder_; }
  const ModelSpec& spec() const { return spec_; }

  std::vector<Param<T>*> params();
  void zero_grad();
  std::size_t parameter_count();
  /// FNV-1a over parameter bytes.
  std::uint64_t checksum();

 private:
  ModelSpec spec_;
  ImageEncoder<T> image_encoder_;
  ShapeEncoder<T> shape_encoder_;
  PriorModule<T> prior_;
  ShapeDecoder<T> decoder_;

  PriorMode mode_ = PriorMode::kAttention;
  bool shapes_encoded_ = false;
  int batch_ = 0;
};

}  // namespace mpcn
