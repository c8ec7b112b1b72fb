#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace mpcn {

/// Spatial geometry of a convolution or pooling window over a (D, H, W)
/// volume. Two-dimensional operators use depth 1, kernel depth 1.
struct WindowGeometry {
  int channels = 1;
  std::array<int, 3> in{1, 1, 1};
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};

  std::array<int, 3> out() const {
    std::array<int, 3> o{};
    for (int d = 0; d < 3; ++d) o[d] = (in[d] + 2 * pad[d] - kernel[d]) / stride[d] + 1;
    return o;
  }
  int in_volume() const { return in[0] * in[1] * in[2]; }
  int out_volume() const {
    auto o = out();
    return o[0] * o[1] * o[2];
  }
  int kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  /// Rows of the column matrix: channels * kernel volume.
  int col_rows() const { return channels * kernel_volume(); }
  bool valid() const {
    for (int d = 0; d < 3; ++d)
      if (in[d] < 1 || kernel[d] < 1 || stride[d] < 1 || pad[d] < 0 || in[d] + 2 * pad[d] < kernel[d]) return false;
    return channels >= 1;
  }
};

WindowGeometry window2d(int channels, int h, int w, int kernel, int stride, int pad);
WindowGeometry window3d(int channels, int size, int kernel, int stride, int pad);

// OpenMP-parallel kernels. Every output element is produced by exactly one
// thread with a fixed accumulation order, so results do not depend on the
// thread count.
namespace kernels {

/// Row-major C = alpha * op(A) * op(B) + beta * C, op(A) is m x k, op(B) is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc);

/// x: [channels, in volume] -> cols: [col_rows, out volume] with row stride
/// ld (>= out volume). Padding reads as zero.
template <typename T>
void im2col(const WindowGeometry& g, const T* x, T* cols, int ld);

/// Adjoint of im2col: scatter-adds cols into x (x must be pre-initialised).
template <typename T>
void col2im(const WindowGeometry& g, const T* cols, int ld, T* x);

/// Max over each window, per channel. argmax receives flat input indices (-1
/// if the window lies entirely in padding).
template <typename T>
void maxpool_forward(const WindowGeometry& g, const T* x, T* y, std::int32_t* argmax);

/// dx += routed dy; dx must be pre-initialised.
template <typename T>
void maxpool_backward(const WindowGeometry& g, const T* dy, const std::int32_t* argmax, T* dx);

/// Single-channel convolution of a 0/1 volume, scattered from the occupied
/// voxels only. w: [Cout, kernel], y: [Cout, out] (overwritten, bias added).
template <typename T>
void binary_conv_forward(const WindowGeometry& g, int out_channels, const std::uint8_t* x, const T* w, const T* bias,
                         T* y);

/// dw += weight gradient of binary_conv_forward for one sample.
template <typename T>
void binary_conv_weight_grad(const WindowGeometry& g, int out_channels, const std::uint8_t* x, const T* dy, T* dw);

}  // namespace kernels

// Serial reference implementations: direct loops, no blocking, no packing.
// Kept as oracles for the parallel kernels and as the benchmark baseline.
namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc);

/// Direct convolution. x: [Cin, in], w: [Cout, Cin, kernel], y: [Cout, out].
template <typename T>
void conv_forward(const WindowGeometry& g, int out_channels, const T* x, const T* w, const T* bias, T* y);

/// Gradients of conv_forward; dx, dw, db are accumulated into.
template <typename T>
void conv_backward(const WindowGeometry& g, int out_channels, const T* x, const T* w, const T* dy, T* dx, T* dw,
                   T* db);

/// Direct transposed convolution. g describes the *output* volume seen as the
/// input of the adjoint convolution: x: [Cin, g.out()], w: [Cin, Cout, kernel],
/// y: [Cout, g.in] with g.channels == Cout.
template <typename T>
void conv_transpose_forward(const WindowGeometry& g, int in_channels, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void maxpool_forward(const WindowGeometry& g, const T* x, T* y);

}  // namespace reference

}  // namespace mpcn
