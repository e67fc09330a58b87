#pragma once

// Recurrent, residual and densely connected convolutional blocks.
//
// An RCL unit unrolls a recurrence over t steps:
//   y(0)   = conv(x, w_f) + b
//   y(tau) = conv(x, w_f) + conv(relu(y(tau-1)), w_r) + b,  tau = 1..t
// and emits relu(y(t)). The residual wrapper adds a shortcut,
//   out = project(x) + F(x),
// where project is the identity when channel counts match and a learned
// 1x1 conv otherwise. The dense chain feeds unit u the channel concatenation
// of the block input and every earlier unit output, then compresses the
// final concatenation back to c_out with a 1x1 conv.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "r2seg/nnops.hpp"
#include "r2seg/params.hpp"

namespace r2seg {

enum class BlockKind { plain, residual, recurrent, dense_r2 };

std::string_view to_string(BlockKind kind);

struct BlockSpec {
  BlockKind kind = BlockKind::dense_r2;
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  int t = 2;
  double dropout_rate = 0.2;
  // Channels produced by each dense unit; 0 selects ceil(c_out / 2).
  std::size_t dense_growth = 0;
  // Conv layers (plain/residual) or RCL units (recurrent/dense_r2).
  std::size_t units = 2;

  std::size_t growth() const;
};

/// Value-form RCL parameters.
struct RclParams {
  Tensor4 w_f;  // (c_out, c_in, 3, 3)
  Tensor4 w_r;  // (c_out, c_out, 3, 3)
  Tensor4 b;    // (1, c_out, 1, 1)
  int t = 2;
};

struct RclVars {
  VarId w_f, w_r, b;
  int t = 2;
};

struct ConvVars {
  VarId w, b;
};

VarId rcl_forward(Tape& tape, VarId x, const RclVars& p);
Tensor4 rcl_forward(const Tensor4& x, const RclParams& p);

VarId dense_rcl_forward(Tape& tape, VarId x, const std::vector<RclVars>& units,
                        const ConvVars& compress);

/// Declares the parameters of a block under `prefix` with He-normal weights
/// and zero biases. Seeds derive from `seed` and the store position.
void declare_block(const BlockSpec& spec, const std::string& prefix,
                   ParamStore& store, std::uint64_t seed);

/// project(x) + F(x) for residual and dense_r2 blocks (no dropout).
VarId r2_forward(Tape& tape, VarId x, const BlockSpec& spec,
                 const std::string& prefix, const BoundParams& params);

/// Full block including the trailing spatial dropout.
VarId block_forward(Tape& tape, VarId x, const BlockSpec& spec,
                    const std::string& prefix, const BoundParams& params,
                    Mode mode, std::uint64_t dropout_seed);

/// Exact learnable-scalar count of a block.
std::size_t count_params(const BlockSpec& spec);

// Parameter name helpers shared with tests.
std::string rcl_name(const std::string& prefix, std::size_t unit,
                     std::string_view field);
RclVars bind_rcl(const BoundParams& params, const std::string& prefix,
                 std::size_t unit, int t);

}  // namespace r2seg
