#include <limits>

#include "mpcn/kernels.hpp"

namespace mpcn::reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T sum = T(0);
      for (int p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        sum += av * bv;
      }
      T& out = c[i * ldc + j];
      out = alpha * sum + (beta == T(0) ? T(0) : beta * out);
    }
}

namespace {

// Visits every (output position, kernel offset, input position) triple that
// lands inside the unpadded input.
template <typename F>
void for_each_tap(const WindowGeometry& g, F&& f) {
  const auto o = g.out();
  for (int od = 0; od < o[0]; ++od)
    for (int oh = 0; oh < o[1]; ++oh)
      for (int ow = 0; ow < o[2]; ++ow)
        for (int kd = 0; kd < g.kernel[0]; ++kd)
          for (int kh = 0; kh < g.kernel[1]; ++kh)
            for (int kw = 0; kw < g.kernel[2]; ++kw) {
              const int id = od * g.stride[0] - g.pad[0] + kd;
              const int ih = oh * g.stride[1] - g.pad[1] + kh;
              const int iw = ow * g.stride[2] - g.pad[2] + kw;
              if (id < 0 || ih < 0 || iw < 0 || id >= g.in[0] || ih >= g.in[1] || iw >= g.in[2]) continue;
              f((od * o[1] + oh) * o[2] + ow, (kd * g.kernel[1] + kh) * g.kernel[2] + kw,
                (id * g.in[1] + ih) * g.in[2] + iw);
            }
}

}  // namespace

template <typename T>
void conv_forward(const WindowGeometry& g, int out_channels, const T* x, const T* w, const T* bias, T* y) {
  const int out_vol = g.out_volume();
  const int kvol = g.kernel_volume();
  for (int co = 0; co < out_channels; ++co)
    for (int i = 0; i < out_vol; ++i) y[co * out_vol + i] = bias ? bias[co] : T(0);
  for (int co = 0; co < out_channels; ++co)
    for (int ci = 0; ci < g.channels; ++ci)
      for_each_tap(g, [&](int o, int kk, int in) {
        y[co * out_vol + o] += w[(co * g.channels + ci) * kvol + kk] * x[ci * g.in_volume() + in];
      });
}

template <typename T>
void conv_backward(const WindowGeometry& g, int out_channels, const T* x, const T* w, const T* dy, T* dx, T* dw,
                   T* db) {
  const int out_vol = g.out_volume();
  const int kvol = g.kernel_volume();
  for (int co = 0; co < out_channels; ++co) {
    for (int i = 0; i < out_vol; ++i) db[co] += dy[co * out_vol + i];
    for (int ci = 0; ci < g.channels; ++ci)
      for_each_tap(g, [&](int o, int kk, int in) {
        const T grad = dy[co * out_vol + o];
        dw[(co * g.channels + ci) * kvol + kk] += grad * x[ci * g.in_volume() + in];
        dx[ci * g.in_volume() + in] += grad * w[(co * g.channels + ci) * kvol + kk];
      });
  }
}

template <typename T>
void conv_transpose_forward(const WindowGeometry& g, int in_channels, const T* x, const T* w, const T* bias, T* y) {
  const int out_channels = g.channels;
  const int small_vol = g.out_volume();
  const int big_vol = g.in_volume();
  const int kvol = g.kernel_volume();
  for (int co = 0; co < out_channels; ++co)
    for (int i = 0; i < big_vol; ++i) y[co * big_vol + i] = bias ? bias[co] : T(0);
  for (int ci = 0; ci < in_channels; ++ci)
    for (int co = 0; co < out_channels; ++co)
      for_each_tap(g, [&](int o, int kk, int in) {
        y[co * big_vol + in] += w[(ci * out_channels + co) * kvol + kk] * x[ci * small_vol + o];
      });
}

template <typename T>
void maxpool_forward(const WindowGeometry& g, const T* x, T* y) {
  const int out_vol = g.out_volume();
  for (int c = 0; c < g.channels; ++c) {
    for (int i = 0; i < out_vol; ++i) y[c * out_vol + i] = -std::numeric_limits<T>::infinity();
    for_each_tap(g, [&](int o, int, int in) {
      const T v = x[c * g.in_volume() + in];
      if (v > y[c * out_vol + o]) y[c * out_vol + o] = v;
    });
  }
}

#define MPCN_INSTANTIATE(T)                                                                                     \
  template void gemm<T>(bool, bool, int, int, int, T, const T*, int, const T*, int, T, T*, int);               \
  template void conv_forward<T>(const WindowGeometry&, int, const T*, const T*, const T*, T*);                  \
  template void conv_backward<T>(const WindowGeometry&, int, const T*, const T*, const T*, T*, T*, T*);         \
  template void conv_transpose_forward<T>(const WindowGeometry&, int, const T*, const T*, const T*, T*);        \
  template void maxpool_forward<T>(const WindowGeometry&, const T*, T*);
MPCN_INSTANTIATE(float)
MPCN_INSTANTIATE(double)
#undef MPCN_INSTANTIATE

}  // namespace mpcn::reference
