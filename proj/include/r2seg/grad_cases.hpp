#pragma once

// Canonical desk-scale gradient checks shared by the CLI and the tests.

#include <cstdint>
#include <string>
#include <vector>

#include "r2seg/gradcheck.hpp"

namespace r2seg {

struct GradCase {
  std::string name;
  LossFn loss;
  std::vector<NamedTensor> params;
  double step = 1e-6;
  GradCheckOptions options;
};

/// Names accepted by make_grad_cases: conv, convt, maxpool, bce, rcl, r2,
/// dense-r2, model, or all.
const std::vector<std::string>& grad_case_names();

std::vector<GradCase> make_grad_cases(const std::string& which,
                                      std::uint64_t seed);

GradReport run_grad_case(const GradCase& c);

}  // namespace r2seg
