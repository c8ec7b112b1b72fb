#include "mpcn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace mpcn {
namespace {

// Upper bound on elements in one batched column matrix.
constexpr std::size_t kMaxColumnElements = std::size_t{1} << 22;

int chunk_samples(int batch, std::size_t per_sample) {
  const std::size_t c = std::max<std::size_t>(1, kMaxColumnElements / std::max<std::size_t>(1, per_sample));
  return static_cast<int>(std::min<std::size_t>(c, static_cast<std::size_t>(batch)));
}

}  // namespace

template <typename T>
void fan_in_uniform(Tensor<T>& t, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / std::max(1, fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------- Conv

template <typename T>
Conv<T>::Conv(const std::string& name, int spatial_rank, int in_channels, int out_channels, int kernel, int stride,
              int pad)
    : rank_(spatial_rank),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_(name + ".weight", {out_channels, in_channels * (spatial_rank == 3 ? kernel * kernel * kernel : kernel * kernel)}),
      bias_(name + ".bias", {out_channels}) {
  if (spatial_rank != 2 && spatial_rank != 3) throw ShapeError("Conv: spatial rank must be 2 or 3");
}

template <typename T>
void Conv<T>::init(std::mt19937_64& rng) {
  fan_in_uniform(weight_.value, weight_.value.dim(1), rng);
  bias_.value.fill(T(0));
}

template <typename T>
WindowGeometry Conv<T>::geometry(const Tensor<T>& x) const {
  if (x.rank() != rank_ + 2 || x.dim(1) != in_channels_)
    throw ShapeError("Conv: expected [B," + std::to_string(in_channels_) + ",...] of spatial rank " +
                     std::to_string(rank_) + ", got " + x.shape_string());
  WindowGeometry g;
  g.channels = in_channels_;
  if (rank_ == 2) {
    g.in = {1, x.dim(2), x.dim(3)};
    g.kernel = {1, kernel_, kernel_};
    g.stride = {1, stride_, stride_};
    g.pad = {0, pad_, pad_};
  } else {
    g.in = {x.dim(2), x.dim(3), x.dim(4)};
    g.kernel = {kernel_, kernel_, kernel_};
    g.stride = {stride_, stride_, stride_};
    g.pad = {pad_, pad_, pad_};
  }
  if (!g.valid()) throw ShapeError("Conv: kernel does not fit input " + x.shape_string());
  return g;
}

template <typename T>
std::vector<int> Conv<T>::out_shape(int batch, const WindowGeometry& g) const {
  const auto o = g.out();
  if (rank_ == 2) return {batch, out_channels_, o[1], o[2]};
  return {batch, out_channels_, o[0], o[1], o[2]};
}

template <typename T>
Tensor<T> Conv<T>::forward(const Tensor<T>& x) {
  const WindowGeometry g = geometry(x);
  const int batch = x.dim(0);
  const int rows = g.col_rows();
  const int pv = g.out_volume();
  Tensor<T> y(out_shape(batch, g));
  binary_input_.clear();
  if (!input_grad_ && rank_ == 3 && in_channels_ == 1 &&
      std::all_of(x.values().begin(), x.values().end(), [](T v) { return v == T(0) || v == T(1); })) {
    binary_input_.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) binary_input_[i] = x[i] != T(0);
    input_ = Tensor<T>(x.shape());
    const std::size_t iv = static_cast<std::size_t>(g.in_volume());
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < batch; ++b)
      kernels::binary_conv_forward(g, out_channels_, binary_input_.data() + b * iv, weight_.value.data(),
                                   bias_.value.data(), y.slice(b));
    return y;
  }
  input_ = x;
  const int chunk = chunk_samples(batch, static_cast<std::size_t>(rows) * pv);
  std::vector<T> cols(static_cast<std::size_t>(rows) * chunk * pv);
  std::vector<T> ybuf(static_cast<std::size_t>(out_channels_) * chunk * pv);
  for (int b0 = 0; b0 < batch; b0 += chunk) {
    const int nb = std::min(chunk, batch - b0);
    const int ld = nb * pv;
    for (int lb = 0; lb < nb; ++lb) kernels::im2col(g, x.slice(b0 + lb), cols.data() + lb * pv, ld);
    kernels::gemm(false, false, out_channels_, ld, rows, T(1), weight_.value.data(), rows, cols.data(), ld, T(0),
                  ybuf.data(), ld);
    for (int lb = 0; lb < nb; ++lb) {
      T* yb = y.slice(b0 + lb);
      for (int co = 0; co < out_channels_; ++co) {
        const T bias = bias_.value[co];
        const T* src = ybuf.data() + static_cast<std::size_t>(co) * ld + lb * pv;
        T* dst = yb + static_cast<std::size_t>(co) * pv;
        for (int p = 0; p < pv; ++p) dst[p] = src[p] + bias;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> Conv<T>::backward(const Tensor<T>& dy) {
  const WindowGeometry g = geometry(input_);
  const int batch = input_.dim(0);
  if (dy.shape() != out_shape(batch, g)) throw ShapeError("Conv::backward: gradient shape " + dy.shape_string());
  const int rows = g.col_rows();
  const int pv = g.out_volume();
  if (!binary_input_.empty()) {
    const std::size_t iv = static_cast<std::size_t>(g.in_volume());
    std::vector<T> partial(static_cast<std::size_t>(batch) * weight_.grad.size(), T(0));
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < batch; ++b)
      kernels::binary_conv_weight_grad(g, out_channels_, binary_input_.data() + b * iv, dy.slice(b),
                                       partial.data() + b * weight_.grad.size());
    for (int b = 0; b < batch; ++b) {
      const T* src = partial.data() + b * weight_.grad.size();
      for (std::size_t i = 0; i < weight_.grad.size(); ++i) weight_.grad[i] += src[i];
      for (int co = 0; co < out_channels_; ++co) {
        const T* r = dy.slice(b) + static_cast<std::size_t>(co) * pv;
        T s = T(0);
        for (int p = 0; p < pv; ++p) s += r[p];
        bias_.grad[co] += s;
      }
    }
    return Tensor<T>();
  }
  Tensor<T> dx = input_grad_ ? Tensor<T>(input_.shape()) : Tensor<T>();
  const int chunk = chunk_samples(batch, static_cast<std::size_t>(rows) * pv);
  std::vector<T> cols(static_cast<std::size_t>(rows) * chunk * pv);
  std::vector<T> dcols(input_grad_ ? cols.size() : 0);
  std::vector<T> dybuf(static_cast<std::size_t>(out_channels_) * chunk * pv);
  for (int b0 = 0; b0 < batch; b0 += chunk) {
    const int nb = std::min(chunk, batch - b0);
    const int ld = nb * pv;
    for (int lb = 0; lb < nb; ++lb) {
      kernels::im2col(g, input_.slice(b0 + lb), cols.data() + lb * pv, ld);
      const T* src = dy.slice(b0 + lb);
      for (int co = 0; co < out_channels_; ++co)
        std::copy(src + static_cast<std::size_t>(co) * pv, src + static_cast<std::size_t>(co + 1) * pv,
                  dybuf.data() + static_cast<std::size_t>(co) * ld + lb * pv);
    }
    kernels::gemm(false, true, out_channels_, rows, ld, T(1), dybuf.data(), ld, cols.data(), ld, T(1),
                  weight_.grad.data(), rows);
    for (int co = 0; co < out_channels_; ++co) {
      T s = T(0);
      const T* r = dybuf.data() + static_cast<std::size_t>(co) * ld;
      for (int p = 0; p < ld; ++p) s += r[p];
      bias_.grad[co] += s;
    }
    if (!input_grad_) continue;
    kernels::gemm(true, false, rows, ld, out_channels_, T(1), weight_.value.data(), rows, dybuf.data(), ld, T(0),
                  dcols.data(), ld);
    for (int lb = 0; lb < nb; ++lb) kernels::col2im(g, dcols.data() + lb * pv, ld, dx.slice(b0 + lb));
  }
  return dx;
}

// ---------------------------------------------------------------- ConvTranspose3d

template <typename T>
ConvTranspose3d<T>::ConvTranspose3d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
                                    int pad)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_(name + ".weight", {in_channels, out_channels * kernel * kernel * kernel}),
      bias_(name + ".bias", {out_channels}) {}

template <typename T>
void ConvTranspose3d<T>::init(std::mt19937_64& rng) {
  // Each output voxel receives in_channels * (kernel / stride)^3 taps.
  const int taps = std::max(1, kernel_ / stride_);
  fan_in_uniform(weight_.value, in_channels_ * taps * taps * taps, rng);
  bias_.value.fill(T(0));
}

template <typename T>
WindowGeometry ConvTranspose3d<T>::geometry(int input_size) const {
  WindowGeometry g = window3d(out_channels_, output_size(input_size), kernel_, stride_, pad_);
  if (!g.valid() || g.out()[0] != input_size) throw ShapeError("ConvTranspose3d: unsupported input size");
  return g;
}

template <typename T>
Tensor<T> ConvTranspose3d<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 5 || x.dim(1) != in_channels_ || x.dim(2) != x.dim(3) || x.dim(3) != x.dim(4))
    throw ShapeError("ConvTranspose3d: expected cubic [B," + std::to_string(in_channels_) + ",n,n,n], got " +
                     x.shape_string());
  input_ = x;
  const int batch = x.dim(0);
  const WindowGeometry g = geometry(x.dim(2));
  const int n_out = g.in[0];
  const int rows = g.col_rows();
  const int pin = g.out_volume();
  Tensor<T> y({batch, out_channels_, n_out, n_out, n_out});
  const int chunk = chunk_samples(batch, static_cast<std::size_t>(rows) * pin);
  std::vector<T> xbuf(static_cast<std::size_t>(in_channels_) * chunk * pin);
  std::vector<T> cols(static_cast<std::size_t>(rows) * chunk * pin);
  for (int b0 = 0; b0 < batch; b0 += chunk) {
    const int nb = std::min(chunk, batch - b0);
    const int ld = nb * pin;
    for (int lb = 0; lb < nb; ++lb) {
      const T* src = x.slice(b0 + lb);
      for (int ci = 0; ci < in_channels_; ++ci)
        std::copy(src + static_cast<std::size_t>(ci) * pin, src + static_cast<std::size_t>(ci + 1) * pin,
                  xbuf.data() + static_cast<std::size_t>(ci) * ld + lb * pin);
    }
    kernels::gemm(true, false, rows, ld, in_channels_, T(1), weight_.value.data(), rows, xbuf.data(), ld, T(0),
                  cols.data(), ld);
    for (int lb = 0; lb < nb; ++lb) {
      T* yb = y.slice(b0 + lb);
      const int vol = g.in_volume();
      for (int co = 0; co < out_channels_; ++co) std::fill(yb + co * vol, yb + (co + 1) * vol, bias_.value[co]);
      kernels::col2im(g, cols.data() + lb * pin, ld, yb);
    }
  }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose3d<T>::backward(const Tensor<T>& dy) {
  const int batch = input_.dim(0);
  const WindowGeometry g = geometry(input_.dim(2));
  const int rows = g.col_rows();
  const int pin = g.out_volume();
  const int vol = g.in_volume();
  if (dy.shape() != std::vector<int>{batch, out_channels_, g.in[0], g.in[1], g.in[2]})
    throw ShapeError("ConvTranspose3d::backward: gradient shape " + dy.shape_string());
  Tensor<T> dx(input_.shape());
  const int chunk = chunk_samples(batch, static_cast<std::size_t>(rows) * pin);
  std::vector<T> xbuf(static_cast<std::size_t>(in_channels_) * chunk * pin);
  std::vector<T> dxbuf(xbuf.size());
  std::vector<T> dcols(static_cast<std::size_t>(rows) * chunk * pin);
  for (int b0 = 0; b0 < batch; b0 += chunk) {
    const int nb = std::min(chunk, batch - b0);
    const int ld = nb * pin;
    for (int lb = 0; lb < nb; ++lb) {
      const T* src = input_.slice(b0 + lb);
      for (int ci = 0; ci < in_channels_; ++ci)
        std::copy(src + static_cast<std::size_t>(ci) * pin, src + static_cast<std::size_t>(ci + 1) * pin,
                  xbuf.data() + static_cast<std::size_t>(ci) * ld + lb * pin);
      const T* d = dy.slice(b0 + lb);
      kernels::im2col(g, d, dcols.data() + lb * pin, ld);
      for (int co = 0; co < out_channels_; ++co) {
        T s = T(0);
        for (int i = 0; i < vol; ++i) s += d[static_cast<std::size_t>(co) * vol + i];
        bias_.grad[co] += s;
      }
    }
    kernels::gemm(false, true, in_channels_, rows, ld, T(1), xbuf.data(), ld, dcols.data(), ld, T(1),
                  weight_.grad.data(), rows);
    kernels::gemm(false, false, in_channels_, ld, rows, T(1), weight_.value.data(), rows, dcols.data(), ld, T(0),
                  dxbuf.data(), ld);
    for (int lb = 0; lb < nb; ++lb) {
      T* dst = dx.slice(b0 + lb);
      for (int ci = 0; ci < in_channels_; ++ci)
        std::copy(dxbuf.data() + static_cast<std::size_t>(ci) * ld + lb * pin,
                  dxbuf.data() + static_cast<std::size_t>(ci) * ld + (lb + 1) * pin,
                  dst + static_cast<std::size_t>(ci) * pin);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- MaxPool

template <typename T>
Tensor<T> MaxPool<T>::forward(const Tensor<T>& x) {
  if (x.rank() != rank_ + 2) throw ShapeError("MaxPool: unexpected input " + x.shape_string());
  in_shape_ = x.shape();
  WindowGeometry g;
  g.channels = x.dim(0) * x.dim(1);
  if (rank_ == 2) {
    g.in = {1, x.dim(2), x.dim(3)};
    g.kernel = {1, kernel_, kernel_};
    g.stride = {1, stride_, stride_};
    g.pad = {0, pad_, pad_};
  } else {
    g.in = {x.dim(2), x.dim(3), x.dim(4)};
    g.kernel = {kernel_, kernel_, kernel_};
    g.stride = {stride_, stride_, stride_};
    g.pad = {pad_, pad_, pad_};
  }
  if (!g.valid()) throw ShapeError("MaxPool: window does not fit input " + x.shape_string());
  geometry_ = g;
  const auto o = g.out();
  std::vector<int> shape = {x.dim(0), x.dim(1)};
  if (rank_ == 3) shape.push_back(o[0]);
  shape.push_back(o[1]);
  shape.push_back(o[2]);
  Tensor<T> y(shape);
  argmax_.assign(y.size(), -1);
  kernels::maxpool_forward(g, x.data(), y.data(), argmax_.data());
  return y;
}

template <typename T>
Tensor<T> MaxPool<T>::backward(const Tensor<T>& dy) {
  if (dy.size() != argmax_.size()) throw ShapeError("MaxPool::backward: gradient shape " + dy.shape_string());
  Tensor<T> dx(in_shape_);
  kernels::maxpool_backward(geometry_, dy.data(), argmax_.data(), dx.data());
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {}

template <typename T>
void Linear<T>::init(std::mt19937_64& rng) {
  fan_in_uniform(weight_.value, in_, rng);
  bias_.value.fill(T(0));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  if (x.rank() < 1 || x.dim(0) == 0 || x.size() != static_cast<std::size_t>(x.dim(0)) * in_)
    throw ShapeError("Linear: expected [B," + std::to_string(in_) + "], got " + x.shape_string());
  input_shape_ = x.shape();
  input_ = x.reshaped({x.dim(0), in_});
  const int batch = x.dim(0);
  Tensor<T> y({batch, out_});
  for (int b = 0; b < batch; ++b) std::copy(bias_.value.data(), bias_.value.data() + out_, y.slice(b));
  kernels::gemm(false, true, batch, out_, in_, T(1), input_.data(), in_, weight_.value.data(), in_, T(1), y.data(),
                out_);
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  const int batch = input_.dim(0);
  if (dy.shape() != std::vector<int>{batch, out_}) throw ShapeError("Linear::backward: gradient shape " + dy.shape_string());
  kernels::gemm(true, false, out_, in_, batch, T(1), dy.data(), out_, input_.data(), in_, T(1), weight_.grad.data(),
                in_);
  for (int b = 0; b < batch; ++b)
    for (int o = 0; o < out_; ++o) bias_.grad[o] += dy.slice(b)[o];
  Tensor<T> dx({batch, in_});
  kernels::gemm(false, false, batch, in_, out_, T(1), dy.data(), out_, weight_.value.data(), in_, T(0), dx.data(),
                in_);
  dx.reshape(input_shape_);
  return dx;
}

// ---------------------------------------------------------------- activations

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
  output_ = x;
  for (auto& v : output_.values()) v = v < T(0) ? T(0) : v;  // NaN passes through
  return output_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& dy) {
  require_same_shape(dy, output_, "ReLU::backward");
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(output_[i] > T(0))) dx[i] = T(0);
  return dx;
}

template <typename T>
Tensor<T> LeakyReLU<T>::forward(const Tensor<T>& x) {
  input_ = x;
  Tensor<T> y = x;
  for (auto& v : y.values()) v = v > T(0) ? v : slope_ * v;
  return y;
}

template <typename T>
Tensor<T> LeakyReLU<T>::backward(const Tensor<T>& dy) {
  require_same_shape(dy, input_, "LeakyReLU::backward");
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(input_[i] > T(0))) dx[i] *= slope_;
  return dx;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x) {
  output_ = x;
  for (auto& v : output_.values()) v = T(1) / (T(1) + std::exp(-v));
  return output_;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& dy) {
  require_same_shape(dy, output_, "Sigmoid::backward");
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (T(1) - output_[i]);
  return dx;
}

template <typename T>
Tensor<T> Reshape<T>::forward(const Tensor<T>& x) {
  in_shape_ = x.shape();
  std::vector<int> shape = {x.dim(0)};
  shape.insert(shape.end(), trailing_.begin(), trailing_.end());
  return x.reshaped(shape);
}

// ---------------------------------------------------------------- LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, int features, T eps)
    : n_(features), eps_(eps), gain_(name + ".gain", {features}), bias_(name + ".bias", {features}) {
  gain_.value.fill(T(1));
}

template <typename T>
void LayerNorm<T>::init(std::mt19937_64&) {
  gain_.value.fill(T(1));
  bias_.value.fill(T(0));
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 2 || x.dim(1) != n_) throw ShapeError("LayerNorm: expected [B," + std::to_string(n_) + "], got " + x.shape_string());
  const int batch = x.dim(0);
  normalized_ = Tensor<T>(x.shape());
  inv_std_.assign(static_cast<std::size_t>(batch), T(0));
  Tensor<T> y(x.shape());
  for (int b = 0; b < batch; ++b) {
    const T* xr = x.slice(b);
    T mean = T(0);
    for (int i = 0; i < n_; ++i) mean += xr[i];
    mean /= n_;
    T var = T(0);
    for (int i = 0; i < n_; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= n_;
    const T inv = T(1) / std::sqrt(var + eps_);
    inv_std_[b] = inv;
    T* nr = normalized_.slice(b);
    T* yr = y.slice(b);
    for (int i = 0; i < n_; ++i) {
      nr[i] = (xr[i] - mean) * inv;
      yr[i] = gain_.value[i] * nr[i] + bias_.value[i];
    }
  }
  return y;
}

template <typename T>
Tensor<T> LayerNorm<T>::backward(const Tensor<T>& dy) {
  require_same_shape(dy, normalized_, "LayerNorm::backward");
  const int batch = dy.dim(0);
  Tensor<T> dx(dy.shape());
  std::vector<T> dn(static_cast<std::size_t>(n_));
  for (int b = 0; b < batch; ++b) {
    const T* g = dy.slice(b);
    const T* nr = normalized_.slice(b);
    T sum = T(0), dot = T(0);
    for (int i = 0; i < n_; ++i) {
      gain_.grad[i] += g[i] * nr[i];
      bias_.grad[i] += g[i];
      dn[i] = g[i] * gain_.value[i];
      sum += dn[i];
      dot += dn[i] * nr[i];
    }
    T* out = dx.slice(b);
    for (int i = 0; i < n_; ++i) out[i] = inv_std_[b] * (dn[i] - sum / n_ - nr[i] * dot / n_);
  }
  return dx;
}

// ---------------------------------------------------------------- Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x) {
  Tensor<T> h = x;
  for (auto& l : layers_) h = l->forward(h);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& dy) {
  Tensor<T> g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename T>
std::vector<Param<T>*> Sequential<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& l : layers_) {
    auto p = l->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
void Sequential<T>::init(std::mt19937_64& rng) {
  for (auto& l : layers_) l->init(rng);
}

#define MPCN_INSTANTIATE(T)                                            \
  template void fan_in_uniform<T>(Tensor<T>&, int, std::mt19937_64&); \
  template class Conv<T>;                                              \
  template class ConvTranspose3d<T>;                                   \
  template class MaxPool<T>;                                           \
  template class Linear<T>;                                            \
  template class ReLU<T>;                                              \
  template class LeakyReLU<T>;                                         \
  template class Sigmoid<T>;                                           \
  template class Reshape<T>;                                           \
  template class LayerNorm<T>;                                         \
  template class Sequential<T>;
MPCN_INSTANTIATE(float)
MPCN_INSTANTIATE(double)
#undef MPCN_INSTANTIATE

}  // namespace mpcn
