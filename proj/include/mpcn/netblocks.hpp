#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "mpcn/layers.hpp"

namespace mpcn {

struct ConvStage {
  int channels = 0;
  int stride = 1;
};

/// 2-D image encoder: a strided 3x3 backbone, then three 3x3 pad-1 convs
/// (max-pool 3/s2/p1 after the second, 2/s2 after the third), then a linear
/// projection of the flattened map to embed_dim.
struct EncoderSpec {
  int image_size = 32;
  std::vector<ConvStage> backbone;
  std::array<int, 3> head_channels{512, 256, 128};
  int embed_dim = 2048;

  /// Spatial side after the backbone and after the head.
  int backbone_side() const;
  int head_side() const;
};

/// 3-D shape encoder: convs with kernels 5,3,3,3 (LeakyReLU after each), a
/// 2^3 max-pool after each of the first two, then a linear projection.
struct ShapeEncoderSpec {
  int resolution = 32;
  std::array<int, 4> channels{32, 64, 128, 128};
  int first_stride = 2;
  int feature_dim = 2048;

  int output_side() const;
};

/// Transposed-conv decoder: every stage is kernel 4, stride 2, pad 1, so the
/// volume side doubles from 1 to 2^stages. ReLU between stages, sigmoid last.
struct DecoderSpec {
  int input_dim = 4096;
  std::vector<int> channels{256, 128, 32, 8, 1};

  int output_resolution() const { return 1 << channels.size(); }
};

struct PriorConfig {
  int width = 2048;
  int heads = 2;
  int ffn_hidden = 4096;
};

struct ModelSpec {
  std::string preset;
  int resolution = 32;
  EncoderSpec image;
  ShapeEncoderSpec shape;
  PriorConfig prior;
  DecoderSpec decoder;

  /// Throws ConfigError on inconsistent widths or resolutions.
  void validate() const;

  /// Published widths: 512/256/128 encoder head, 2048 embeddings, 2 heads,
  /// decoder 256/128/32/8/1 at 32^3.
  static ModelSpec paper();
  /// Scaled-down widths for CPU training at 32^3.
  static ModelSpec desk();
  /// 8^3 surrogate used by gradient checks (embed width 8).
  static ModelSpec tiny();
  static ModelSpec by_name(const std::string& name);
};

std::size_t parameter_count(const EncoderSpec& s);
std::size_t parameter_count(const ShapeEncoderSpec& s);
std::size_t parameter_count(const DecoderSpec& s);
std::size_t parameter_count(const PriorConfig& p, int query_dim, int value_dim);
std::size_t parameter_count(const ModelSpec& s);

/// Images [B, 1, S, S] -> features [B, embed_dim].
template <typename T>
class ImageEncoder {
 public:
  explicit ImageEncoder(const EncoderSpec& spec);
  Tensor<T> forward(const Tensor<T>& images);
  /// Accumulates parameter gradients. Inputs are data: no input gradient.
  void backward(const Tensor<T>& dfeat) { net_.backward(dfeat); }
  std::vector<Param<T>*> params() { return net_.params(); }
  void init(std::mt19937_64& rng) { net_.init(rng); }
  const EncoderSpec& spec() const { return spec_; }

 private:
  EncoderSpec spec_;
  Sequential<T> net_;
};

/// Voxels [U, 1, r, r, r] (0/1 values) -> shape features [U, feature_dim].
template <typename T>
class ShapeEncoder {
 public:
  explicit ShapeEncoder(const ShapeEncoderSpec& spec);
  Tensor<T> forward(const Tensor<T>& voxels);
  /// Accumulates parameter gradients. Inputs are data: no input gradient.
  void backward(const Tensor<T>& dfeat) { net_.backward(dfeat); }
  std::vector<Param<T>*> params() { return net_.params(); }
  void init(std::mt19937_64& rng) { net_.init(rng); }
  const ShapeEncoderSpec& spec() const { return spec_; }

 private:
  ShapeEncoderSpec spec_;
  Sequential<T> net_;
};

/// Embeddings [B, input_dim] -> occupancy probabilities [B, 1, r, r, r].
template <typename T>
class ShapeDecoder {
 public:
  explicit ShapeDecoder(const DecoderSpec& spec);
  Tensor<T> forward(const Tensor<T>& embedding);
  Tensor<T> backward(const Tensor<T>& dprob) { return net_.backward(dprob); }
  std::vector<Param<T>*> params() { return net_.params(); }
  void init(std::mt19937_64& rng) { net_.init(rng); }
  const DecoderSpec& spec() const { return spec_; }

 private:
  DecoderSpec spec_;
  Sequential<T> net_;
};

}  // namespace mpcn
