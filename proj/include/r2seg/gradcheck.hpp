#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "r2seg/tape.hpp"

namespace r2seg {

struct NamedTensor {
  std::string name;
  Tensor4 value;
};

// Builds a scalar loss on `tape` from leaves bound to the parameters, in the
// order they were passed to grad_check.
using LossFn = std::function<VarId(Tape& tape, std::span<const VarId> params)>;

struct ParamError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // entries probed
  std::size_t unresolved = 0;  // probed entries the difference cannot judge
};

struct GradReport {
  std::vector<ParamError> params;
  double threshold = 1e-4;

  double max_error() const;
  std::size_t unresolved() const;
  bool passed() const { return max_error() < threshold; }
  const ParamError& worst() const;
};

struct GradCheckOptions {
  double threshold = 1e-4;
  // Probe at most this many entries per tensor (0 = all), chosen with `seed`.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  // When > 0, an entry whose forward and backward one-sided slopes differ by
  // more than this fraction of the larger one is counted in `unresolved`
  // and not compared. The gap bounds the central difference's own error; it
  // is large when a relu or maxpool kink lies within the step, or when
  // roundoff in the loss swamps a tiny gradient.
  double resolve_tolerance = 0.0;
};

/// |a - f| / max(|a|, |f|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares tape gradients against central differences with the given step
/// (must lie in [1e-6, 1e-4]). Throws NumericError when two evaluations at
/// the same point disagree.
GradReport grad_check(const LossFn& loss, std::span<const NamedTensor> params,
                      double step = 1e-5, const GradCheckOptions& opts = {});

}  // namespace r2seg
