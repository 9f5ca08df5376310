#include "hcdg/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace hcdg::kernels {

namespace {

void check_sizes(const ConvShape& s, size_t x, size_t w, size_t out) {
  const size_t nx = static_cast<size_t>(s.batch) * s.in_channels * s.in_h * s.in_w;
  const size_t nw = static_cast<size_t>(s.out_channels) * s.patch();
  const size_t no = static_cast<size_t>(s.batch) * s.out_channels * s.out_h() * s.out_w();
  if (x != nx || w != nw || out != no) throw std::invalid_argument("conv2d: buffer size mismatch");
}

// col[k][p] for output rows [oy0, oy1) of one batch item; k = (ci, ky, kx), p = (oy - oy0, ox).
void im2col(const ConvShape& s, const double* x, double* col, int oy0, int oy1) {
  const int ow = s.out_w();
  const int np = (oy1 - oy0) * ow;
  for (int ci = 0; ci < s.in_channels; ++ci) {
    const double* plane = x + static_cast<size_t>(ci) * s.in_h * s.in_w;
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        double* dst = col + static_cast<size_t>((ci * s.kernel + ky) * s.kernel + kx) * np;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          double* row = dst + (oy - oy0) * ow;
          if (iy < 0 || iy >= s.in_h) {
            std::fill(row, row + ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<size_t>(iy) * s.in_w;
          if (s.stride == 1) {
            const int lo = std::max(0, s.pad - kx);
            const int hi = std::min(ow, s.in_w + s.pad - kx);
            for (int ox = 0; ox < lo; ++ox) row[ox] = 0.0;
            for (int ox = lo; ox < hi; ++ox) row[ox] = src[ox - s.pad + kx];
            for (int ox = std::max(hi, lo); ox < ow; ++ox) row[ox] = 0.0;
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s.stride - s.pad + kx;
              row[ox] = (ix >= 0 && ix < s.in_w) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvShape& s, const double* col, double* dx, int oy0, int oy1) {
  const int ow = s.out_w();
  const int np = (oy1 - oy0) * ow;
  for (int ci = 0; ci < s.in_channels; ++ci) {
    double* plane = dx + static_cast<size_t>(ci) * s.in_h * s.in_w;
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        const double* src = col + static_cast<size_t>((ci * s.kernel + ky) * s.kernel + kx) * np;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.in_h) continue;
          double* row = plane + static_cast<size_t>(iy) * s.in_w;
          const double* srow = src + (oy - oy0) * ow;
          if (s.stride == 1) {
            const int lo = std::max(0, s.pad - kx);
            const int hi = std::min(ow, s.in_w + s.pad - kx);
            for (int ox = lo; ox < hi; ++ox) row[ox - s.pad + kx] += srow[ox];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix >= 0 && ix < s.in_w) row[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

// Output rows per chunk so that one im2col block stays cache resident.
int chunk_rows(const ConvShape& s) {
  constexpr int kTargetPixels = 512;
  return std::clamp(kTargetPixels / std::max(1, s.out_w()), 1, s.out_h());
}

using v8d = double __attribute__((vector_size(64)));

inline v8d load8(const double* p) {
  v8d v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}

inline void store8(double* p, v8d v) { __builtin_memcpy(p, &v, sizeof(v)); }

inline double hsum(v8d v) {
  return ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
}

// MR x (8 * NV) register tile of C (+)= A * B over the full k range.
template <int MR, int NV, bool Acc>
inline void micro_tile(int k, const double* a, int lda_m, int lda_k, const double* b, int ldb, double* c, int ldc) {
  v8d acc[MR][NV];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) acc[r][v] = Acc ? load8(c + r * ldc + 8 * v) : v8d{};
  for (int kk = 0; kk < k; ++kk) {
    const double* brow = b + static_cast<size_t>(kk) * ldb;
    v8d bv[NV];
    for (int v = 0; v < NV; ++v) bv[v] = load8(brow + 8 * v);
    for (int r = 0; r < MR; ++r) {
      const double av = a[r * lda_m + kk * lda_k];
      for (int v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) store8(c + r * ldc + 8 * v, acc[r][v]);
}

// Scalar fallback for column tails narrower than 16.
inline void tail_tile(int rows, int cols, int k, const double* a, int lda_m, int lda_k, const double* b, int ldb,
                      double* c, int ldc) {
  for (int r = 0; r < rows; ++r) {
    for (int kk = 0; kk < k; ++kk) {
      const double av = a[r * lda_m + kk * lda_k];
      const double* brow = b + static_cast<size_t>(kk) * ldb;
      for (int j = 0; j < cols; ++j) c[r * ldc + j] += av * brow[j];
    }
  }
}

// C[m][n] (+)= sum_k A(m, k) * B[k][n]; A(m, k) = a[m * lda_m + k * lda_k].
template <bool Acc>
void gemm(int m, int n, int k, const double* a, int lda_m, int lda_k, const double* b, int ldb, double* c, int ldc) {
  auto cp = [&](int i, int j) { return c + static_cast<size_t>(i) * ldc + j; };
  int j = 0;
  if (m >= 8) {
    for (; j + 16 <= n; j += 16) {
      int i = 0;
      for (; i + 8 <= m; i += 8) micro_tile<8, 2, Acc>(k, a + i * lda_m, lda_m, lda_k, b + j, ldb, cp(i, j), ldc);
      for (; i + 4 <= m; i += 4) micro_tile<4, 2, Acc>(k, a + i * lda_m, lda_m, lda_k, b + j, ldb, cp(i, j), ldc);
      for (; i < m; ++i) micro_tile<1, 2, Acc>(k, a + i * lda_m, lda_m, lda_k, b + j, ldb, cp(i, j), ldc);
    }
  }
  for (; j + 32 <= n; j += 32) {
    int i = 0;
    for (; i + 4 <= m; i += 4) micro_tile<4, 4, Acc>(k, a + i * lda_m, lda_m, lda_k, b + j, ldb, cp(i, j), ldc);
    for (; i + 2 <= m; i += 2) micro_tile<2, 4, Acc>(k, a + i * lda_m, lda_m, lda_k, b + j, ldb, cp(i, j), ldc);
    for (; i < m; ++i) micro_tile<1, 4, Acc>(k, a + i * lda_m, lda_m, lda_k, b + j, ldb, cp(i, j), ldc);
  }
  for (; j + 16 <= n; j += 16) {
    int i = 0;
    for (; i + 4 <= m; i += 4) micro_tile<4, 2, Acc>(k, a + i * lda_m, lda_m, lda_k, b + j, ldb, cp(i, j), ldc);
    for (; i < m; ++i) micro_tile<1, 2, Acc>(k, a + i * lda_m, lda_m, lda_k, b + j, ldb, cp(i, j), ldc);
  }
  if (j < n) {
    if (!Acc)
      for (int i = 0; i < m; ++i) std::fill(cp(i, j), cp(i, n), 0.0);
    tail_tile(m, n - j, k, a, lda_m, lda_k, b + j, ldb, c + j, ldc);
  }
}

// 4 x 4 block of dot products over rows of length n.
template <int MA, int MB>
inline void dot_block(int n, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  v8d acc[MA][MB];
  for (int i = 0; i < MA; ++i)
    for (int j = 0; j < MB; ++j) acc[i][j] = v8d{};
  const int n8 = n - n % 8;
  for (int p = 0; p < n8; p += 8) {
    v8d bv[MB];
    for (int j = 0; j < MB; ++j) bv[j] = load8(b + static_cast<size_t>(j) * ldb + p);
    for (int i = 0; i < MA; ++i) {
      const v8d av = load8(a + static_cast<size_t>(i) * lda + p);
      for (int j = 0; j < MB; ++j) acc[i][j] += av * bv[j];
    }
  }
  for (int i = 0; i < MA; ++i) {
    for (int j = 0; j < MB; ++j) {
      double s = hsum(acc[i][j]);
      for (int p = n8; p < n; ++p) s += a[static_cast<size_t>(i) * lda + p] * b[static_cast<size_t>(j) * ldb + p];
      c[i * ldc + j] += s;
    }
  }
}

template <int MA>
inline void dot_row_block(int k, int n, const double* a, int lda, const double* b, int ldb, double* c) {
  int j = 0;
  for (; j + 4 <= k; j += 4) dot_block<MA, 4>(n, a, lda, b + static_cast<size_t>(j) * ldb, ldb, c + j, k);
  for (; j < k; ++j) dot_block<MA, 1>(n, a, lda, b + static_cast<size_t>(j) * ldb, ldb, c + j, k);
}

// C[i][j] += sum_p A[i][p] * B[j][p] (A: m x n, B: k x n, C: m x k).
void gemm_nt_acc(int m, int k, int n, const double* a, int lda, const double* b, int ldb, double* c) {
  int i = 0;
  for (; i + 4 <= m; i += 4) dot_row_block<4>(k, n, a + static_cast<size_t>(i) * lda, lda, b, ldb, c + static_cast<size_t>(i) * k);
  for (; i < m; ++i) dot_row_block<1>(k, n, a + static_cast<size_t>(i) * lda, lda, b, ldb, c + static_cast<size_t>(i) * k);
}

}  // namespace

namespace parallel {

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> out) {
  check_sizes(s, x.size(), w.size(), out.size());
  const int oh = s.out_h(), ow = s.out_w();
  const int np = oh * ow;
  const int kp = s.patch();
  const int rows = chunk_rows(s);
  const size_t in_stride = static_cast<size_t>(s.in_channels) * s.in_h * s.in_w;
  const size_t out_stride = static_cast<size_t>(s.out_channels) * np;

#pragma omp parallel
  {
    std::vector<double> col(static_cast<size_t>(kp) * rows * ow);
#pragma omp for schedule(static)
    for (int n = 0; n < s.batch; ++n) {
      double* o = out.data() + n * out_stride;
      for (int co = 0; co < s.out_channels; ++co) {
        std::fill(o + static_cast<size_t>(co) * np, o + static_cast<size_t>(co + 1) * np,
                  b.empty() ? 0.0 : b[co]);
      }
      for (int oy0 = 0; oy0 < oh; oy0 += rows) {
        const int oy1 = std::min(oh, oy0 + rows);
        const int pc = (oy1 - oy0) * ow;
        im2col(s, x.data() + n * in_stride, col.data(), oy0, oy1);
        gemm<true>(s.out_channels, pc, kp, w.data(), kp, 1, col.data(), pc, o + oy0 * ow, np);
      }
    }
  }
}

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dout, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  check_sizes(s, x.size(), w.size(), dout.size());
  const int oh = s.out_h(), ow = s.out_w();
  const int np = oh * ow;
  const int kp = s.patch();
  const int rows = chunk_rows(s);
  const size_t in_stride = static_cast<size_t>(s.in_channels) * s.in_h * s.in_w;
  const size_t out_stride = static_cast<size_t>(s.out_channels) * np;
  const size_t nw = static_cast<size_t>(s.out_channels) * kp;

  // Per-item weight-gradient partials, reduced afterwards in batch order.
  std::vector<double> dw_parts(dw.empty() ? 0 : nw * s.batch, 0.0);

#pragma omp parallel
  {
    std::vector<double> col(static_cast<size_t>(kp) * rows * ow);
#pragma omp for schedule(static)
    for (int n = 0; n < s.batch; ++n) {
      const double* d = dout.data() + n * out_stride;
      for (int oy0 = 0; oy0 < oh; oy0 += rows) {
        const int oy1 = std::min(oh, oy0 + rows);
        const int pc = (oy1 - oy0) * ow;
        if (!dw.empty()) {
          im2col(s, x.data() + n * in_stride, col.data(), oy0, oy1);
          gemm_nt_acc(s.out_channels, kp, pc, d + oy0 * ow, np, col.data(), pc, dw_parts.data() + n * nw);
        }
        if (!dx.empty()) {
          gemm<false>(kp, pc, s.out_channels, w.data(), 1, kp, d + oy0 * ow, np, col.data(), pc);
          col2im_add(s, col.data(), dx.data() + n * in_stride, oy0, oy1);
        }
      }
    }
  }
  if (!dw.empty()) {
    for (int n = 0; n < s.batch; ++n) {
      const double* part = dw_parts.data() + n * nw;
      for (size_t i = 0; i < nw; ++i) dw[i] += part[i];
    }
  }
  if (!db.empty()) {
    for (int n = 0; n < s.batch; ++n) {
      for (int co = 0; co < s.out_channels; ++co) {
        const double* d = dout.data() + n * out_stride + static_cast<size_t>(co) * np;
        double acc = 0.0;
        for (int p = 0; p < np; ++p) acc += d[p];
        db[co] += acc;
      }
    }
  }
}

}  // namespace parallel

namespace reference {

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> out) {
  check_sizes(s, x.size(), w.size(), out.size());
  const int oh = s.out_h(), ow = s.out_w();
  for (int n = 0; n < s.batch; ++n) {
    for (int co = 0; co < s.out_channels; ++co) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b.empty() ? 0.0 : b[co];
          for (int ci = 0; ci < s.in_channels; ++ci) {
            for (int ky = 0; ky < s.kernel; ++ky) {
              for (int kx = 0; kx < s.kernel; ++kx) {
                const int iy = oy * s.stride - s.pad + ky;
                const int ix = ox * s.stride - s.pad + kx;
                if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                acc += w[((static_cast<size_t>(co) * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx] *
                       x[((static_cast<size_t>(n) * s.in_channels + ci) * s.in_h + iy) * s.in_w + ix];
              }
            }
          }
          out[((static_cast<size_t>(n) * s.out_channels + co) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dout, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  check_sizes(s, x.size(), w.size(), dout.size());
  const int oh = s.out_h(), ow = s.out_w();
  for (int n = 0; n < s.batch; ++n) {
    for (int co = 0; co < s.out_channels; ++co) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const double g = dout[((static_cast<size_t>(n) * s.out_channels + co) * oh + oy) * ow + ox];
          if (!db.empty()) db[co] += g;
          for (int ci = 0; ci < s.in_channels; ++ci) {
            for (int ky = 0; ky < s.kernel; ++ky) {
              for (int kx = 0; kx < s.kernel; ++kx) {
                const int iy = oy * s.stride - s.pad + ky;
                const int ix = ox * s.stride - s.pad + kx;
                if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                const size_t wi = ((static_cast<size_t>(co) * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx;
                const size_t xi = ((static_cast<size_t>(n) * s.in_channels + ci) * s.in_h + iy) * s.in_w + ix;
                if (!dw.empty()) dw[wi] += g * x[xi];
                if (!dx.empty()) dx[xi] += g * w[wi];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace reference

}  // namespace hcdg::kernels
