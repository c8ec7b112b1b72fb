#include "mpcn/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <vector>

#include <omp.h>

namespace mpcn {

WindowGeometry window2d(int channels, int h, int w, int kernel, int stride, int pad) {
  WindowGeometry g;
  g.channels = channels;
  g.in = {1, h, w};
  g.kernel = {1, kernel, kernel};
  g.stride = {1, stride, stride};
  g.pad = {0, pad, pad};
  return g;
}

WindowGeometry window3d(int channels, int size, int kernel, int stride, int pad) {
  WindowGeometry g;
  g.channels = channels;
  g.in = {size, size, size};
  g.kernel = {kernel, kernel, kernel};
  g.stride = {stride, stride, stride};
  g.pad = {pad, pad, pad};
  return g;
}

namespace kernels {
namespace {

#if defined(__AVX512F__)
constexpr int kVectorBytes = 64;
#else
constexpr int kVectorBytes = 32;
#endif

template <typename T>
struct Blocking {
  static constexpr int kLanes = kVectorBytes / static_cast<int>(sizeof(T));
  static constexpr int kMR = 6;
  static constexpr int kNR = 2 * kLanes;
  static constexpr int kKC = 256;
  static constexpr int kNC = 3072;
};

// Packs op(A)[i0:i0+mc, p0:p0+kc] into MR-row slivers, zero-filling the tail.
template <typename T>
void pack_a(bool trans, const T* a, int lda, int i0, int mc, int p0, int kc, T* out) {
  constexpr int MR = Blocking<T>::kMR;
  const int slivers = (mc + MR - 1) / MR;
#pragma omp parallel for schedule(static) if (slivers * kc > 8192)
  for (int s = 0; s < slivers; ++s) {
    T* dst = out + static_cast<std::size_t>(s) * MR * kc;
    const int rows = std::min(MR, mc - s * MR);
    for (int p = 0; p < kc; ++p) {
      for (int r = 0; r < MR; ++r) {
        T v = T(0);
        if (r < rows) {
          const int i = i0 + s * MR + r;
          const int pp = p0 + p;
          v = trans ? a[static_cast<std::size_t>(pp) * lda + i] : a[static_cast<std::size_t>(i) * lda + pp];
        }
        dst[p * MR + r] = v;
      }
    }
  }
}

// Packs op(B)[p0:p0+kc, j0:j0+nc] into NR-column slivers.
template <typename T>
void pack_b(bool trans, const T* b, int ldb, int p0, int kc, int j0, int nc, T* out) {
  constexpr int NR = Blocking<T>::kNR;
  const int slivers = (nc + NR - 1) / NR;
#pragma omp parallel for schedule(static) if (slivers * kc > 8192)
  for (int s = 0; s < slivers; ++s) {
    T* dst = out + static_cast<std::size_t>(s) * NR * kc;
    const int cols = std::min(NR, nc - s * NR);
    for (int p = 0; p < kc; ++p) {
      const int pp = p0 + p;
      T* row = dst + p * NR;
      if (!trans && cols == NR) {
        std::memcpy(row, b + static_cast<std::size_t>(pp) * ldb + j0 + s * NR, sizeof(T) * NR);
        continue;
      }
      for (int c = 0; c < NR; ++c) {
        const int j = j0 + s * NR + c;
        row[c] = c < cols ? (trans ? b[static_cast<std::size_t>(j) * ldb + pp] : b[static_cast<std::size_t>(pp) * ldb + j])
                          : T(0);
      }
    }
  }
}

template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(kVectorBytes)));
};

// acc = sum_p ap[p, 0:MR] (outer) bp[p, 0:NR]; then C[0:rows, 0:cols] += alpha * acc.
template <typename T>
inline void micro_kernel(int kc, const T* __restrict ap, const T* __restrict bp, T alpha, T* c, int ldc, int rows,
                         int cols) {
  using B = Blocking<T>;
  using V = typename Vec<T>::type;
  constexpr int MR = B::kMR;
  constexpr int L = B::kLanes;
  V acc[MR][2];
  for (int r = 0; r < MR; ++r) acc[r][0] = acc[r][1] = V{} ;
  for (int p = 0; p < kc; ++p) {
    V b0, b1;
    std::memcpy(&b0, bp + p * B::kNR, sizeof(V));
    std::memcpy(&b1, bp + p * B::kNR + L, sizeof(V));
    const T* a = ap + p * MR;
#pragma GCC unroll 6
    for (int r = 0; r < MR; ++r) {
      const T av = a[r];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  alignas(64) T tile[MR][B::kNR];
  for (int r = 0; r < MR; ++r) {
    std::memcpy(&tile[r][0], &acc[r][0], sizeof(V));
    std::memcpy(&tile[r][L], &acc[r][1], sizeof(V));
  }
  for (int r = 0; r < rows; ++r) {
    T* crow = c + static_cast<std::size_t>(r) * ldc;
    for (int j = 0; j < cols; ++j) crow[j] += alpha * tile[r][j];
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
  using B = Blocking<T>;
  if (m <= 0 || n <= 0) return;
  if (beta != T(1)) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n > 65536)
    for (int i = 0; i < m; ++i) {
      T* row = c + static_cast<std::size_t>(i) * ldc;
      if (beta == T(0))
        std::fill(row, row + n, T(0));
      else
        for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (k <= 0 || alpha == T(0)) return;

  const int nc_max = std::min(n, B::kNC);
  const int kc_max = std::min(k, B::kKC);
  const int m_slivers = (m + B::kMR - 1) / B::kMR;
  std::vector<T> apack(static_cast<std::size_t>(m_slivers) * B::kMR * kc_max);
  std::vector<T> bpack(static_cast<std::size_t>((nc_max + B::kNR - 1) / B::kNR) * B::kNR * kc_max);

  for (int j0 = 0; j0 < n; j0 += B::kNC) {
    const int nc = std::min(B::kNC, n - j0);
    const int n_slivers = (nc + B::kNR - 1) / B::kNR;
    for (int p0 = 0; p0 < k; p0 += B::kKC) {
      const int kc = std::min(B::kKC, k - p0);
      pack_b(trans_b, b, ldb, p0, kc, j0, nc, bpack.data());
      pack_a(trans_a, a, lda, 0, m, p0, kc, apack.data());
      const long tiles = static_cast<long>(m_slivers) * n_slivers;
#pragma omp parallel for schedule(static) if (tiles > 1 && static_cast<long>(m) * nc * kc > 32768)
      for (long t = 0; t < tiles; ++t) {
        const int js = static_cast<int>(t % n_slivers);
        const int is = static_cast<int>(t / n_slivers);
        const int rows = std::min(B::kMR, m - is * B::kMR);
        const int cols = std::min(B::kNR, nc - js * B::kNR);
        micro_kernel<T>(kc, apack.data() + static_cast<std::size_t>(is) * B::kMR * kc,
                        bpack.data() + static_cast<std::size_t>(js) * B::kNR * kc, alpha,
                        c + static_cast<std::size_t>(is) * B::kMR * ldc + j0 + js * B::kNR, ldc, rows, cols);
      }
    }
  }
}

template <typename T>
void im2col(const WindowGeometry& g, const T* x, T* cols, int ld) {
  const auto o = g.out();
  const int out_vol = g.out_volume();
  const int kvol = g.kernel_volume();
  const int rows = g.col_rows();
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * out_vol > 65536)
  for (int r = 0; r < rows; ++r) {
    const int c = r / kvol;
    const int kk = r % kvol;
    const int kd = kk / (g.kernel[1] * g.kernel[2]);
    const int kh = (kk / g.kernel[2]) % g.kernel[1];
    const int kw = kk % g.kernel[2];
    const T* xc = x + static_cast<std::size_t>(c) * g.in_volume();
    T* dst = cols + static_cast<std::size_t>(r) * ld;
    for (int od = 0; od < o[0]; ++od) {
      const int id = od * g.stride[0] - g.pad[0] + kd;
      for (int oh = 0; oh < o[1]; ++oh) {
        const int ih = oh * g.stride[1] - g.pad[1] + kh;
        T* drow = dst + (od * o[1] + oh) * o[2];
        if (id < 0 || id >= g.in[0] || ih < 0 || ih >= g.in[1]) {
          std::fill(drow, drow + o[2], T(0));
          continue;
        }
        const T* xrow = xc + (static_cast<std::size_t>(id) * g.in[1] + ih) * g.in[2];
        for (int ow = 0; ow < o[2]; ++ow) {
          const int iw = ow * g.stride[2] - g.pad[2] + kw;
          drow[ow] = (iw >= 0 && iw < g.in[2]) ? xrow[iw] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const WindowGeometry& g, const T* cols, int ld, T* x) {
  const auto o = g.out();
  const int out_vol = g.out_volume();
  const int kvol = g.kernel_volume();
  // Parallel over channels: each channel's input plane is written by one thread.
#pragma omp parallel for schedule(static) if (g.channels > 1 && static_cast<long>(g.col_rows()) * out_vol > 65536)
  for (int c = 0; c < g.channels; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * g.in_volume();
    for (int kk = 0; kk < kvol; ++kk) {
      const int kd = kk / (g.kernel[1] * g.kernel[2]);
      const int kh = (kk / g.kernel[2]) % g.kernel[1];
      const int kw = kk % g.kernel[2];
      const T* src = cols + (static_cast<std::size_t>(c) * kvol + kk) * ld;
      for (int od = 0; od < o[0]; ++od) {
        const int id = od * g.stride[0] - g.pad[0] + kd;
        if (id < 0 || id >= g.in[0]) continue;
        for (int oh = 0; oh < o[1]; ++oh) {
          const int ih = oh * g.stride[1] - g.pad[1] + kh;
          if (ih < 0 || ih >= g.in[1]) continue;
          const T* srow = src + (od * o[1] + oh) * o[2];
          T* xrow = xc + (static_cast<std::size_t>(id) * g.in[1] + ih) * g.in[2];
          for (int ow = 0; ow < o[2]; ++ow) {
            const int iw = ow * g.stride[2] - g.pad[2] + kw;
            if (iw >= 0 && iw < g.in[2]) xrow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool_forward(const WindowGeometry& g, const T* x, T* y, std::int32_t* argmax) {
  const auto o = g.out();
  const int out_vol = g.out_volume();
#pragma omp parallel for schedule(static) if (static_cast<long>(g.channels) * out_vol > 16384)
  for (int c = 0; c < g.channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.in_volume();
    for (int od = 0; od < o[0]; ++od)
      for (int oh = 0; oh < o[1]; ++oh)
        for (int ow = 0; ow < o[2]; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t best_i = -1;
          for (int kd = 0; kd < g.kernel[0]; ++kd) {
            const int id = od * g.stride[0] - g.pad[0] + kd;
            if (id < 0 || id >= g.in[0]) continue;
            for (int kh = 0; kh < g.kernel[1]; ++kh) {
              const int ih = oh * g.stride[1] - g.pad[1] + kh;
              if (ih < 0 || ih >= g.in[1]) continue;
              for (int kw = 0; kw < g.kernel[2]; ++kw) {
                const int iw = ow * g.stride[2] - g.pad[2] + kw;
                if (iw < 0 || iw >= g.in[2]) continue;
                const std::int32_t idx = (id * g.in[1] + ih) * g.in[2] + iw;
                if (best_i < 0 || xc[idx] > best) {
                  best = xc[idx];
                  best_i = idx;
                }
              }
            }
          }
          const std::size_t oi = static_cast<std::size_t>(c) * out_vol + (od * o[1] + oh) * o[2] + ow;
          y[oi] = best_i < 0 ? T(0) : best;
          argmax[oi] = best_i;
        }
  }
}

template <typename T>
void maxpool_backward(const WindowGeometry& g, const T* dy, const std::int32_t* argmax, T* dx) {
  const int out_vol = g.out_volume();
#pragma omp parallel for schedule(static) if (static_cast<long>(g.channels) * out_vol > 16384)
  for (int c = 0; c < g.channels; ++c) {
    T* dxc = dx + static_cast<std::size_t>(c) * g.in_volume();
    const std::size_t base = static_cast<std::size_t>(c) * out_vol;
    for (int i = 0; i < out_vol; ++i)
      if (argmax[base + i] >= 0) dxc[argmax[base + i]] += dy[base + i];
  }
}

#define MPCN_INSTANTIATE(T)                                                                                   \
  template void gemm<T>(bool, bool, int, int, int, T, const T*, int, const T*, int, T, T*, int);             \
  template void im2col<T>(const WindowGeometry&, const T*, T*, int);                                               \
  template void col2im<T>(const WindowGeometry&, const T*, int, T*);                                              \
  template void maxpool_forward<T>(const WindowGeometry&, const T*, T*, std::int32_t*);                       \
  template void maxpool_backward<T>(const WindowGeometry&, const T*, const std::int32_t*, T*);
MPCN_INSTANTIATE(float)
MPCN_INSTANTIATE(double)
#undef MPCN_INSTANTIATE

}  // namespace kernels
}  // namespace mpcn

namespace mpcn {
namespace kernels {

namespace {

// Per axis, the (output index, kernel tap) pairs that read each input index.
struct AxisTaps {
  std::vector<int> begin;  // size in + 1
  std::vector<std::pair<int, int>> pairs;
};

AxisTaps axis_taps(int in, int kernel, int stride, int pad, int out) {
  AxisTaps t;
  t.begin.push_back(0);
  for (int i = 0; i < in; ++i) {
    for (int k = 0; k < kernel; ++k) {
      const int v = i + pad - k;
      if (v < 0 || v % stride) continue;
      if (v / stride < out) t.pairs.emplace_back(v / stride, k);
    }
    t.begin.push_back(static_cast<int>(t.pairs.size()));
  }
  return t;
}

// Calls f(out_linear, tap) for every (output, kernel tap) pair reading an
// occupied input voxel.
template <typename F>
void for_each_occupied_tap(const WindowGeometry& g, const std::uint8_t* x, F&& f) {
  const auto o = g.out();
  AxisTaps ax[3];
  for (int d = 0; d < 3; ++d) ax[d] = axis_taps(g.in[d], g.kernel[d], g.stride[d], g.pad[d], o[d]);
  const int kh_n = g.kernel[1], kw_n = g.kernel[2];
  for (int id = 0; id < g.in[0]; ++id)
    for (int ih = 0; ih < g.in[1]; ++ih) {
      const std::uint8_t* row = x + (static_cast<std::size_t>(id) * g.in[1] + ih) * g.in[2];
      for (int iw = 0; iw < g.in[2]; ++iw) {
        if (!row[iw]) continue;
        for (int a = ax[0].begin[id]; a < ax[0].begin[id + 1]; ++a) {
          const auto [od, kd] = ax[0].pairs[a];
          for (int b = ax[1].begin[ih]; b < ax[1].begin[ih + 1]; ++b) {
            const auto [oh, kh] = ax[1].pairs[b];
            const int pbase = (od * o[1] + oh) * o[2];
            const int kbase = (kd * kh_n + kh) * kw_n;
            for (int c = ax[2].begin[iw]; c < ax[2].begin[iw + 1]; ++c) {
              const auto [ow, kw] = ax[2].pairs[c];
              f(pbase + ow, kbase + kw);
            }
          }
        }
      }
    }
}

}  // namespace

template <typename T>
void binary_conv_forward(const WindowGeometry& g, int out_channels, const std::uint8_t* x, const T* w, const T* bias,
                         T* y) {
  const int pv = g.out_volume();
  const int kvol = g.kernel_volume();
  const int co_n = out_channels;
  // channel-last accumulation: one short contiguous add per (voxel, tap)
  std::vector<T> wt(static_cast<std::size_t>(kvol) * co_n);
  for (int c = 0; c < co_n; ++c)
    for (int kk = 0; kk < kvol; ++kk) wt[static_cast<std::size_t>(kk) * co_n + c] = w[static_cast<std::size_t>(c) * kvol + kk];
  std::vector<T> acc(static_cast<std::size_t>(pv) * co_n, T(0));
  for_each_occupied_tap(g, x, [&](int p, int kk) {
    T* a = acc.data() + static_cast<std::size_t>(p) * co_n;
    const T* wk = wt.data() + static_cast<std::size_t>(kk) * co_n;
#pragma omp simd
    for (int c = 0; c < co_n; ++c) a[c] += wk[c];
  });
  for (int c = 0; c < co_n; ++c) {
    T* yc = y + static_cast<std::size_t>(c) * pv;
    for (int p = 0; p < pv; ++p) yc[p] = acc[static_cast<std::size_t>(p) * co_n + c] + bias[c];
  }
}

template <typename T>
void binary_conv_weight_grad(const WindowGeometry& g, int out_channels, const std::uint8_t* x, const T* dy, T* dw) {
  const int pv = g.out_volume();
  const int kvol = g.kernel_volume();
  const int co_n = out_channels;
  std::vector<T> dyt(static_cast<std::size_t>(pv) * co_n);
  for (int c = 0; c < co_n; ++c)
    for (int p = 0; p < pv; ++p) dyt[static_cast<std::size_t>(p) * co_n + c] = dy[static_cast<std::size_t>(c) * pv + p];
  std::vector<T> acc(static_cast<std::size_t>(kvol) * co_n, T(0));
  for_each_occupied_tap(g, x, [&](int p, int kk) {
    T* a = acc.data() + static_cast<std::size_t>(kk) * co_n;
    const T* d = dyt.data() + static_cast<std::size_t>(p) * co_n;
#pragma omp simd
    for (int c = 0; c < co_n; ++c) a[c] += d[c];
  });
  for (int c = 0; c < co_n; ++c)
    for (int kk = 0; kk < kvol; ++kk) dw[static_cast<std::size_t>(c) * kvol + kk] += acc[static_cast<std::size_t>(kk) * co_n + c];
}

template void binary_conv_forward<float>(const WindowGeometry&, int, const std::uint8_t*, const float*, const float*,
                                         float*);
template void binary_conv_forward<double>(const WindowGeometry&, int, const std::uint8_t*, const double*,
                                          const double*, double*);
template void binary_conv_weight_grad<float>(const WindowGeometry&, int, const std::uint8_t*, const float*, float*);
template void binary_conv_weight_grad<double>(const WindowGeometry&, int, const std::uint8_t*, const double*, double*);

}  // namespace kernels
}  // namespace mpcn
