#pragma once

// Dense compute kernels behind the convolution ops.
//
// The top-level functions are OpenMP-parallel. Every output element is owned
// by exactly one thread and accumulated in a fixed order, so results are
// bitwise identical for any thread count. `kernels::serial` keeps direct
// loop versions used as references by the tests and the benchmark.

#include <cstddef>
#include <span>

#include "r2seg/tensor.hpp"

namespace r2seg::kernels {

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t in_h = 0, in_w = 0;
  std::size_t kernel = 3;
  std::size_t pad = 1;
  std::size_t stride = 1;
  std::size_t out_h = 0, out_w = 0;

  static ConvGeometry make(std::size_t channels, std::size_t in_h,
                           std::size_t in_w, std::size_t kernel,
                           std::size_t pad, std::size_t stride);
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
};

// cols is (channels*k*k) x (out_h*out_w), row-major.
void im2col(std::span<const double> image, const ConvGeometry& g,
            std::span<double> cols);
// Scatter-adds cols back into image (image is accumulated, not cleared).
void col2im(std::span<const double> cols, const ConvGeometry& g,
            std::span<double> image);

// C[m,n] (+)= sum_p A[m,p] B[p,n]      A: m x k, B: k x n
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
// C[m,n] (+)= sum_p A[p,m] B[p,n]      A: k x m, B: k x n
void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);
// C[m,n] (+)= sum_p A[m,p] B[n,p]      A: m x k, B: n x k
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate);

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             std::span<const double> a, std::span<const double> b,
             std::span<double> c);

/// Direct nested-loop cross-correlation with zero padding.
/// x: (n, c_in, h, w); w: (c_out, c_in, k, k); b: c_out entries.
Tensor4 conv2d_direct(const Tensor4& x, const Tensor4& w,
                      std::span<const double> bias, std::size_t pad,
                      std::size_t stride);

}  // namespace serial

}  // namespace r2seg::kernels
