#pragma once

#include <cstddef>
#include <span>

// Hot loops of the network. Two implementations of each kernel:
//   serial::   straightforward loops, kept as the reference for tests
//   parallel:: OpenMP, tiled; every output element accumulates in the same
//              order as the serial loop, so results are bitwise identical
// The unqualified ccrl::kernels:: entry points dispatch to parallel::.

namespace ccrl::kernels {

enum class Trans { no, yes };

struct ConvGeometry {
  std::size_t batch = 1, channels = 1, height = 1, width = 1;
  std::size_t kernel_h = 1, kernel_w = 1, stride = 1, pad = 0;

  std::size_t out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  /// Rows of the column matrix.
  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  /// Columns of the column matrix: every output location of every image.
  std::size_t locations() const { return batch * out_h() * out_w(); }
};

struct GroupNormShape {
  std::size_t batch = 1, channels = 1, spatial = 1, groups = 1;
  std::size_t group_size() const { return channels / groups * spatial; }
};

namespace serial {

// C[M×N] = op(A)·op(B); A is M×K (K×M when transposed), B is K×N (N×K when transposed).
template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
          std::span<const T> b, std::span<T> c);

// x is N×C×H×W; col is patch()×locations(), column index = (n·oh + y)·ow + x.
template <class T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col);

// Adjoint of im2col: x is overwritten with the sum of all column entries mapping to it.
template <class T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> x);

// y = gamma·xhat + beta per channel; also writes xhat and per-(n,group) reciprocal std.
template <class T>
void group_norm_forward(const GroupNormShape& s, std::span<const T> x, std::span<const T> gamma,
                        std::span<const T> beta, T eps, std::span<T> y, std::span<T> xhat, std::span<T> rstd);

template <class T>
void group_norm_backward(const GroupNormShape& s, std::span<const T> dy, std::span<const T> xhat,
                         std::span<const T> gamma, std::span<const T> rstd, std::span<T> dx,
                         std::span<T> dgamma, std::span<T> dbeta);

}  // namespace serial

namespace parallel {

// C[M×N] = op(A)·op(B); A is M×K (K×M when transposed), B is K×N (N×K when transposed).
template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
          std::span<const T> b, std::span<T> c);

// x is N×C×H×W; col is patch()×locations(), column index = (n·oh + y)·ow + x.
template <class T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col);

// Adjoint of im2col: x is overwritten with the sum of all column entries mapping to it.
template <class T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> x);

// y = gamma·xhat + beta per channel; also writes xhat and per-(n,group) reciprocal std.
template <class T>
void group_norm_forward(const GroupNormShape& s, std::span<const T> x, std::span<const T> gamma,
                        std::span<const T> beta, T eps, std::span<T> y, std::span<T> xhat, std::span<T> rstd);

template <class T>
void group_norm_backward(const GroupNormShape& s, std::span<const T> dy, std::span<const T> xhat,
                         std::span<const T> gamma, std::span<const T> rstd, std::span<T> dx,
                         std::span<T> dgamma, std::span<T> dbeta);

int max_threads();

}  // namespace parallel


using parallel::col2im;
using parallel::gemm;
using parallel::group_norm_backward;
using parallel::group_norm_forward;
using parallel::im2col;

/// Applies CCRL_NUM_THREADS (if set) to the OpenMP runtime.
void configure_threads_from_env();

}  // namespace ccrl::kernels
