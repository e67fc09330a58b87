#pragma once

// Differentiable network primitives. Each op comes in two forms: a value
// form on Tensor4 and a tape form that records a backward rule.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "r2seg/tape.hpp"
#include "r2seg/tensor.hpp"

namespace r2seg {

enum class Padding { same, valid };
enum class Mode { train, eval };

struct ConvOptions {
  Padding padding = Padding::same;
  std::size_t stride = 1;
};

// x: (n, c_in, h, w); w: (c_out, c_in, k, k); b: (1, c_out, 1, 1).
Tensor4 conv2d(const Tensor4& x, const Tensor4& w, const Tensor4& b,
               ConvOptions opt = {});
VarId conv2d(Tape& tape, VarId x, VarId w, VarId b, ConvOptions opt = {});

// Gradient of sum(conv2d(x, w) * grad_out) with respect to x.
Tensor4 conv2d_input_grad(const Tensor4& grad_out, const Tensor4& w,
                          const Shape4& x_shape, ConvOptions opt);

// Stride-2 3x3 transposed convolution, defined as the adjoint of the
// stride-2 same-padded conv, so output h, w are exactly 2x the input.
// x: (n, c_in, h, w); w: (c_in, c_out, 3, 3); b: (1, c_out, 1, 1).
Tensor4 conv_transpose2d(const Tensor4& x, const Tensor4& w, const Tensor4& b);
VarId conv_transpose2d(Tape& tape, VarId x, VarId w, VarId b);

struct PoolResult {
  Tensor4 value;
  // Flat index into the input of the winning element for each output.
  std::vector<std::size_t> argmax;
};
// 2x2 window, stride 2. Ties go to the lowest flat index.
PoolResult maxpool2d(const Tensor4& x);
VarId maxpool2d(Tape& tape, VarId x);

Tensor4 relu(const Tensor4& x);
VarId relu(Tape& tape, VarId x);

// Output clamped to the open interval (0, 1) in double precision.
Tensor4 sigmoid(const Tensor4& x);
VarId sigmoid(Tape& tape, VarId x);

Tensor4 concat_channels(std::span<const Tensor4> xs);
VarId concat_channels(Tape& tape, std::span<const VarId> xs);
// Inverse of concat_channels for the given channel counts.
std::vector<Tensor4> split_channels(const Tensor4& x,
                                    std::span<const std::size_t> channels);

Tensor4 add(const Tensor4& x, const Tensor4& y);
VarId add(Tape& tape, VarId x, VarId y);

VarId mul(Tape& tape, VarId x, VarId y);

// Zeroes whole (sample, channel) planes with probability `rate` in train
// mode and scales survivors by 1/(1-rate). Identity in eval mode.
Tensor4 spatial_dropout(const Tensor4& x, double rate, Mode mode,
                        std::uint64_t seed);
VarId spatial_dropout(Tape& tape, VarId x, double rate, Mode mode,
                      std::uint64_t seed);

// Mean binary cross-entropy on logits:
//   max(z,0) - z*t + log(1 + exp(-|z|))
double bce_loss(const Tensor4& logits, const Tensor4& target);
VarId bce_loss(Tape& tape, VarId logits, VarId target);

// Scalar reductions.
VarId sum(Tape& tape, VarId x);
VarId weighted_sum(Tape& tape, VarId x, const Tensor4& weights);

}  // namespace r2seg
