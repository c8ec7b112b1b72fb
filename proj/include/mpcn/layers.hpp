#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mpcn/kernels.hpp"
#include "mpcn/tensor.hpp"

namespace mpcn {

/// A trainable tensor with its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { grad.fill(T(0)); }
};

/// Forward caches whatever backward needs; backward must follow the matching
/// forward and accumulates into parameter gradients.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  virtual void init(std::mt19937_64&) {}
};

/// Convolution over [B, C, H, W] (rank 2) or [B, C, D, H, W] (rank 3) inputs.
template <typename T>
class Conv : public Layer<T> {
 public:
  Conv(const std::string& name, int spatial_rank, int in_channels, int out_channels, int kernel, int stride, int pad);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void init(std::mt19937_64& rng) override;
  /// First layers on raw data: backward then returns an empty tensor, and a
  /// single-channel 0/1 volume input takes the sparse scatter path.
  void set_input_grad(bool on) { input_grad_ = on; }

 private:
  WindowGeometry geometry(const Tensor<T>& x) const;
  std::vector<int> out_shape(int batch, const WindowGeometry& g) const;

  int rank_, in_channels_, out_channels_, kernel_, stride_, pad_;
  Param<T> weight_, bias_;
  Tensor<T> input_;
  bool input_grad_ = true;
  std::vector<std::uint8_t> binary_input_;  // non-empty when the sparse path ran
};

/// Transposed 3-D convolution, weights laid out [Cin, Cout, k, k, k].
template <typename T>
class ConvTranspose3d : public Layer<T> {
 public:
  ConvTranspose3d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void init(std::mt19937_64& rng) override;

  int output_size(int input_size) const { return (input_size - 1) * stride_ - 2 * pad_ + kernel_; }

 private:
  WindowGeometry geometry(int input_size) const;

  int in_channels_, out_channels_, kernel_, stride_, pad_;
  Param<T> weight_, bias_;
  Tensor<T> input_;
};

template <typename T>
class MaxPool : public Layer<T> {
 public:
  MaxPool(int spatial_rank, int kernel, int stride, int pad)
      : rank_(spatial_rank), kernel_(kernel), stride_(stride), pad_(pad) {}
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  int rank_, kernel_, stride_, pad_;
  std::vector<int> in_shape_;
  WindowGeometry geometry_;
  std::vector<std::int32_t> argmax_;
};

/// y = x W^T + b over [B, ...] inputs flattened to [B, in].
template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(const std::string& name, int in_features, int out_features);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void init(std::mt19937_64& rng) override;

  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_, out_;
  Param<T> weight_, bias_;
  Tensor<T> input_;
  std::vector<int> input_shape_;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  Tensor<T> output_;
};

template <typename T>
class LeakyReLU : public Layer<T> {
 public:
  explicit LeakyReLU(T slope = T(0.2)) : slope_(slope) {}
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  T slope_;
  Tensor<T> input_;
};

template <typename T>
class Sigmoid : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  Tensor<T> output_;
};

/// Reshapes the non-batch dimensions.
template <typename T>
class Reshape : public Layer<T> {
 public:
  explicit Reshape(std::vector<int> trailing) : trailing_(std::move(trailing)) {}
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override { return dy.reshaped(in_shape_); }

 private:
  std::vector<int> trailing_;
  std::vector<int> in_shape_;
};

/// Per-row normalisation of [B, n] with learned gain and bias.
template <typename T>
class LayerNorm : public Layer<T> {
 public:
  LayerNorm(const std::string& name, int features, T eps = T(1e-5));
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::vector<Param<T>*> params() override { return {&gain_, &bias_}; }
  void init(std::mt19937_64& rng) override;

 private:
  int n_;
  T eps_;
  Param<T> gain_, bias_;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
};

template <typename T>
class Sequential : public Layer<T> {
 public:
  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  std::vector<Param<T>*> params() override;
  void init(std::mt19937_64& rng) override;
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// Fan-in scaled uniform fill, bound sqrt(6 / fan_in).
template <typename T>
void fan_in_uniform(Tensor<T>& t, int fan_in, std::mt19937_64& rng);

}  // namespace mpcn
