#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ccrl/errors.hpp"
#include "ccrl/kernels.hpp"

namespace ccrl::kernels {

void configure_threads_from_env() {
  const char* env = std::getenv("CCRL_NUM_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("CCRL_NUM_THREADS must be a positive integer, got ") + env);
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
}

namespace parallel {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

template <class T>
std::vector<T> as_row_major(Trans t, std::size_t rows, std::size_t cols, std::span<const T> src) {
  if (t == Trans::no) return {src.begin(), src.begin() + static_cast<std::ptrdiff_t>(rows * cols)};
  std::vector<T> out(rows * cols);
  const auto r_n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < r_n; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[static_cast<std::size_t>(r) * cols + c] = src[c * rows + static_cast<std::size_t>(r)];
  return out;
}

constexpr std::size_t kRowTile = 4;
constexpr std::size_t kColTile = 64;

// Accumulates a kRowTile×kColTile block of C over the full k range in order.
template <class T, std::size_t NR>
inline void gemm_tile(std::size_t mr, std::size_t k, std::size_t n, const T* A, const T* B, T* C) {
  T acc[kRowTile][NR] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = B + p * n;
    for (std::size_t r = 0; r < mr; ++r) {
      const T a = A[r * k + p];
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += a * brow[j];
    }
  }
  for (std::size_t r = 0; r < mr; ++r)
    for (std::size_t j = 0; j < NR; ++j) C[r * n + j] = acc[r][j];
}

template <class T>
inline void gemm_tile_ragged(std::size_t mr, std::size_t nr, std::size_t k, std::size_t n, const T* A, const T* B,
                             T* C) {
  T acc[kRowTile][kColTile] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = B + p * n;
    for (std::size_t r = 0; r < mr; ++r) {
      const T a = A[r * k + p];
      for (std::size_t j = 0; j < nr; ++j) acc[r][j] += a * brow[j];
    }
  }
  for (std::size_t r = 0; r < mr; ++r)
    for (std::size_t j = 0; j < nr; ++j) C[r * n + j] = acc[r][j];
}

}  // namespace

template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
          std::span<const T> b, std::span<T> c) {
  const auto A = as_row_major(ta, m, k, a);
  const auto B = as_row_major(tb, k, n, b);
  const auto col_tiles = static_cast<std::ptrdiff_t>((n + kColTile - 1) / kColTile);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jt = 0; jt < col_tiles; ++jt) {
    const std::size_t j0 = static_cast<std::size_t>(jt) * kColTile;
    const std::size_t nr = std::min(kColTile, n - j0);
    for (std::size_t i0 = 0; i0 < m; i0 += kRowTile) {
      const std::size_t mr = std::min(kRowTile, m - i0);
      if (nr == kColTile)
        gemm_tile<T, kColTile>(mr, k, n, A.data() + i0 * k, B.data() + j0, c.data() + i0 * n + j0);
      else
        gemm_tile_ragged<T>(mr, nr, k, n, A.data() + i0 * k, B.data() + j0, c.data() + i0 * n + j0);
    }
  }
}

template <class T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), cols = g.locations();
  const auto rows = static_cast<std::ptrdiff_t>(g.patch());
  const auto H = static_cast<std::ptrdiff_t>(g.height), W = static_cast<std::ptrdiff_t>(g.width);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::size_t r = static_cast<std::size_t>(row);
    const std::size_t kj = r % g.kernel_w, ki = (r / g.kernel_w) % g.kernel_h, c = r / (g.kernel_w * g.kernel_h);
    T* dst = col.data() + r * cols;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* plane = x.data() + (n * g.channels + c) * g.height * g.width;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
        T* out = dst + (n * oh + oy) * ow;
        if (iy < 0 || iy >= H) {
          std::fill(out, out + ow, T{0});
          continue;
        }
        const T* line = plane + iy * W;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
          out[ox] = (ix >= 0 && ix < W) ? line[ix] : T{0};
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> x) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), cols = g.locations();
  const auto planes = static_cast<std::ptrdiff_t>(g.batch * g.channels);
  const auto H = static_cast<std::ptrdiff_t>(g.height), W = static_cast<std::ptrdiff_t>(g.width);
  const std::size_t hw = g.height * g.width;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const std::size_t n = static_cast<std::size_t>(pl) / g.channels, c = static_cast<std::size_t>(pl) % g.channels;
    T* plane = x.data() + static_cast<std::size_t>(pl) * hw;
    std::fill(plane, plane + hw, T{0});
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
        const T* src = col.data() + row * cols + n * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= H) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < W) plane[iy * W + ix] += src[oy * ow + ox];
          }
        }
      }
  }
}

template <class T>
void group_norm_forward(const GroupNormShape& s, std::span<const T> x, std::span<const T> gamma,
                        std::span<const T> beta, T eps, std::span<T> y, std::span<T> xhat, std::span<T> rstd) {
  const std::size_t cpg = s.channels / s.groups, len = s.group_size();
  const auto jobs = static_cast<std::ptrdiff_t>(s.batch * s.groups);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / s.groups, grp = static_cast<std::size_t>(job) % s.groups;
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
    rstd[static_cast<std::size_t>(job)] = static_cast<T>(r);
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
  const auto jobs = static_cast<std::ptrdiff_t>(s.batch * s.groups);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / s.groups, grp = static_cast<std::size_t>(job) % s.groups;
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
    const double r = static_cast<double>(rstd[static_cast<std::size_t>(job)]);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t ch = grp * cpg + i / s.spatial;
      const double g = static_cast<double>(dy[base + i]) * static_cast<double>(gamma[ch]);
      dx[base + i] = static_cast<T>(r * (g - m1 - static_cast<double>(xhat[base + i]) * m2));
    }
  }
  // Fixed-order reduction over the batch keeps this bitwise equal to serial::.
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

}  // namespace parallel
}  // namespace ccrl::kernels
