#include "r2seg/kernels.hpp"

#include <algorithm>
#include <cstdint>

namespace r2seg::kernels {

namespace {

constexpr std::size_t kColBlock = 256;

using Index = std::int64_t;  // OpenMP loop counters must be signed here

}  // namespace

ConvGeometry ConvGeometry::make(std::size_t channels, std::size_t in_h,
                                std::size_t in_w, std::size_t kernel,
                                std::size_t pad, std::size_t stride) {
  if (stride == 0) throw ShapeError("conv: stride must be >= 1");
  if (in_h + 2 * pad < kernel || in_w + 2 * pad < kernel) {
    throw ShapeError("conv: kernel larger than padded input");
  }
  ConvGeometry g;
  g.channels = channels;
  g.in_h = in_h;
  g.in_w = in_w;
  g.kernel = kernel;
  g.pad = pad;
  g.stride = stride;
  g.out_h = (in_h + 2 * pad - kernel) / stride + 1;
  g.out_w = (in_w + 2 * pad - kernel) / stride + 1;
  return g;
}

void im2col(std::span<const double> image, const ConvGeometry& g,
            std::span<double> cols) {
  const std::size_t k = g.kernel;
  const std::size_t ncols = g.col_cols();
  const Index rows = static_cast<Index>(g.col_rows());
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    const std::size_t c = std::size_t(r) / (k * k);
    const std::size_t ky = (std::size_t(r) / k) % k;
    const std::size_t kx = std::size_t(r) % k;
    const double* src = image.data() + c * g.in_h * g.in_w;
    double* dst = cols.data() + std::size_t(r) * ncols;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      const auto iy = Index(oy * g.stride + ky) - Index(g.pad);
      double* row = dst + oy * g.out_w;
      if (iy < 0 || iy >= Index(g.in_h)) {
        std::fill(row, row + g.out_w, 0.0);
        continue;
      }
      const double* srow = src + std::size_t(iy) * g.in_w;
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const auto ix = Index(ox * g.stride + kx) - Index(g.pad);
        row[ox] = (ix < 0 || ix >= Index(g.in_w)) ? 0.0 : srow[ix];
      }
    }
  }
}

void col2im(std::span<const double> cols, const ConvGeometry& g,
            std::span<double> image) {
  const std::size_t k = g.kernel;
  const std::size_t ncols = g.col_cols();
  const Index channels = static_cast<Index>(g.channels);
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < channels; ++c) {
    double* dst = image.data() + std::size_t(c) * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::size_t r = (std::size_t(c) * k + ky) * k + kx;
        const double* src = cols.data() + r * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = Index(oy * g.stride + ky) - Index(g.pad);
          if (iy < 0 || iy >= Index(g.in_h)) continue;
          double* drow = dst + std::size_t(iy) * g.in_w;
          const double* srow = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = Index(ox * g.stride + kx) - Index(g.pad);
            if (ix >= 0 && ix < Index(g.in_w)) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const Index blocks = Index((n + kColBlock - 1) / kColBlock);
  const Index rows = Index(m);
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < rows; ++i) {
    for (Index jb = 0; jb < blocks; ++jb) {
      const std::size_t j0 = std::size_t(jb) * kColBlock;
      const std::size_t len = std::min(kColBlock, n - j0);
      double* crow = c.data() + std::size_t(i) * n + j0;
      if (!accumulate) std::fill(crow, crow + len, 0.0);
      const double* arow = a.data() + std::size_t(i) * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b.data() + p * n + j0;
        for (std::size_t j = 0; j < len; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const Index blocks = Index((n + kColBlock - 1) / kColBlock);
  const Index rows = Index(m);
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < rows; ++i) {
    for (Index jb = 0; jb < blocks; ++jb) {
      const std::size_t j0 = std::size_t(jb) * kColBlock;
      const std::size_t len = std::min(kColBlock, n - j0);
      double* crow = c.data() + std::size_t(i) * n + j0;
      if (!accumulate) std::fill(crow, crow + len, 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p * m + std::size_t(i)];
        const double* brow = b.data() + p * n + j0;
        for (std::size_t j = 0; j < len; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const Index rows = Index(m);
  const Index cols = Index(n);
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      const double* arow = a.data() + std::size_t(i) * k;
      const double* brow = b.data() + std::size_t(j) * k;
      // Four fixed partial sums: vectorisable and order-stable.
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      for (; p < k; ++p) s0 += arow[p] * brow[p];
      const double dot = (s0 + s1) + (s2 + s3);
      double& out = c[std::size_t(i) * n + std::size_t(j)];
      out = accumulate ? out + dot : dot;
    }
  }
}

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

Tensor4 conv2d_direct(const Tensor4& x, const Tensor4& w,
                      std::span<const double> bias, std::size_t pad,
                      std::size_t stride) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws.c != xs.c) throw ShapeError("conv2d_direct: channel mismatch");
  const auto g = ConvGeometry::make(xs.c, xs.h, xs.w, ws.h, pad, stride);
  Tensor4 y(Shape4{xs.n, ws.n, g.out_h, g.out_w});
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double s = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < xs.c; ++ci) {
            for (std::size_t ky = 0; ky < ws.h; ++ky) {
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const auto iy = Index(oy * stride + ky) - Index(pad);
                const auto ix = Index(ox * stride + kx) - Index(pad);
                if (iy < 0 || ix < 0 || iy >= Index(xs.h) ||
                    ix >= Index(xs.w)) {
                  continue;
                }
                s += w.at(co, ci, ky, kx) *
                     x.at(n, ci, std::size_t(iy), std::size_t(ix));
              }
            }
          }
          y.at(n, co, oy, ox) = s;
        }
      }
    }
  }
  return y;
}

}  // namespace serial

}  // namespace r2seg::kernels
