#include <algorithm>
#include <cmath>
#include <vector>

#include "ccrl/kernels.hpp"

namespace ccrl::kernels::serial {

namespace {

// Row-major rows×cols copy of `src`, transposing when asked. src is laid out
// cols×rows when transposed.
template <class T>
std::vector<T> as_row_major(Trans t, std::size_t rows, std::size_t cols, std::span<const T> src) {
  if (t == Trans::no) return {src.begin(), src.begin() + static_cast<std::ptrdiff_t>(rows * cols)};
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = src[c * rows + r];
  return out;
}

}  // namespace

template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
          std::span<const T> b, std::span<T> c) {
  const auto A = as_row_major(ta, m, k, a);
  const auto B = as_row_major(tb, k, n, b);
  std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(m * n), T{0});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * B[p * n + j];
    }
}

template <class T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), cols = g.locations();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
              T v{0};
              if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                  ix < static_cast<std::ptrdiff_t>(g.width))
                v = x[((n * g.channels + c) * g.height + static_cast<std::size_t>(iy)) * g.width +
                      static_cast<std::size_t>(ix)];
              col[row * cols + (n * oh + oy) * ow + ox] = v;
            }
      }
}

template <class T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> x) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), cols = g.locations();
  std::fill(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(g.batch * g.channels * g.height * g.width), T{0});
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
              if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                  ix < static_cast<std::ptrdiff_t>(g.width))
                x[((n * g.channels + c) * g.height + static_cast<std::size_t>(iy)) * g.width +
                  static_cast<std::size_t>(ix)] += col[row * cols + (n * oh + oy) * ow + ox];
            }
      }
}

template <class T>
void group_norm_forward(const GroupNormShape& s, std::span<const T> x, std::span<const T> gamma,
                        std::span<const T> beta, T eps, std::span<T> y, std::span<T> xhat, std::span<T> rstd) {
  const std::size_t cpg = s.channels / s.groups, len = s.group_size();
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t grp = 0; grp < s.groups; ++grp) {
      const std::size_t base = (n * s.channels + grp * cpg) * s.spatial;
      double sum = 0.0;
      for (std::size_t i = 0; i < len; ++i) sum += static_cast<double>(x[base + i]);
      const double mean = sum / static_cast<double>(len);
      double sq = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double d = static_cast<double>(x[base + i]) - mean;
        sq += d * d;
      }
      const double r = 1.0 / std::sqrt(sq / static_cast<double>(len) + static_cast<double>(eps));
      rstd[n * s.groups + grp] = static_cast<T>(r);
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t ch = grp * cpg + i / s.spatial;
        const T xh = static_cast<T>((static_cast<double>(x[base + i]) - mean) * r);
        xhat[base + i] = xh;
        y[base + i] = xh * gamma[ch] + beta[ch];
      }
    }
}

template <class T>
void group_norm_backward(const GroupNormShape& s, std::span<const T> dy, std::span<const T> xhat,
                         std::span<const T> gamma, std::span<const T> rstd, std::span<T> dx, std::span<T> dgamma,
                         std::span<T> dbeta) {
  const std::size_t cpg = s.channels / s.groups, len = s.group_size();
  std::vector<double> pg(s.batch * s.channels), pb(s.batch * s.channels);
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t grp = 0; grp < s.groups; ++grp) {
      const std::size_t base = (n * s.channels + grp * cpg) * s.spatial;
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t ch = grp * cpg + i / s.spatial;
        const double g = static_cast<double>(dy[base + i]) * static_cast<double>(gamma[ch]);
        s1 += g;
        s2 += g * static_cast<double>(xhat[base + i]);
        pg[n * s.channels + ch] += static_cast<double>(dy[base + i]) * static_cast<double>(xhat[base + i]);
        pb[n * s.channels + ch] += static_cast<double>(dy[base + i]);
      }
      const double m1 = s1 / static_cast<double>(len), m2 = s2 / static_cast<double>(len);
      const double r = static_cast<double>(rstd[n * s.groups + grp]);
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t ch = grp * cpg + i / s.spatial;
        const double g = static_cast<double>(dy[base + i]) * static_cast<double>(gamma[ch]);
        dx[base + i] = static_cast<T>(r * (g - m1 - static_cast<double>(xhat[base + i]) * m2));
      }
    }
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    double g = 0.0, b = 0.0;
    for (std::size_t n = 0; n < s.batch; ++n) {
      g += pg[n * s.channels + ch];
      b += pb[n * s.channels + ch];
    }
    dgamma[ch] = static_cast<T>(g);
    dbeta[ch] = static_cast<T>(b);
  }
}

#define CCRL_INSTANTIATE(T)                                                                                  \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, std::span<const T>,             \
                        std::span<const T>, std::span<T>);                                                   \
  template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                            \
  template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                            \
  template void group_norm_forward<T>(const GroupNormShape&, std::span<const T>, std::span<const T>,         \
                                      std::span<const T>, T, std::span<T>, std::span<T>, std::span<T>);      \
  template void group_norm_backward<T>(const GroupNormShape&, std::span<const T>, std::span<const T>,        \
                                       std::span<const T>, std::span<const T>, std::span<T>, std::span<T>,   \
                                       std::span<T>);
CCRL_INSTANTIATE(float)
CCRL_INSTANTIATE(double)
#undef CCRL_INSTANTIATE

}  // namespace ccrl::kernels::serial
