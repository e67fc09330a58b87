#include "r2seg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace r2seg {

namespace {

double evaluate(const LossFn& loss, std::span<const NamedTensor> params) {
  Tape tape;
  std::vector<VarId> ids;
  ids.reserve(params.size());
  for (const auto& p : params) ids.push_back(tape.leaf(p.value, false));
  const VarId out = loss(tape, ids);
  const Tensor4& v = tape.value(out);
  if (v.size() != 1) throw ShapeError("grad_check: loss must be scalar");
  return v[0];
}

std::vector<std::size_t> probe_indices(std::size_t size, std::size_t limit,
                                       std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= size) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double GradReport::max_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

std::size_t GradReport::unresolved() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.unresolved;
  return n;
}

const ParamError& GradReport::worst() const {
  if (params.empty()) throw std::logic_error("GradReport: no parameters");
  return *std::max_element(params.begin(), params.end(),
                           [](const ParamError& a, const ParamError& b) {
                             return a.max_rel_error < b.max_rel_error;
                           });
}

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradReport grad_check(const LossFn& loss, std::span<const NamedTensor> params,
                      double step, const GradCheckOptions& opts) {
  if (!(step >= 1e-6 && step <= 1e-4)) {
    throw std::invalid_argument("grad_check: step must lie in [1e-6, 1e-4]");
  }

  std::vector<NamedTensor> work(params.begin(), params.end());
  const double base = evaluate(loss, work);
  if (evaluate(loss, work) != base) {
    throw NumericError(
        "grad_check: forward is non-deterministic (disable dropout)");
  }

  Tape tape;
  std::vector<VarId> ids;
  for (const auto& p : work) ids.push_back(tape.leaf(p.value, true));
  const VarId out = loss(tape, ids);
  const Gradients grads = backward(tape, out);

  GradReport report;
  report.threshold = opts.threshold;
  std::mt19937_64 rng(opts.seed);
  for (std::size_t pi = 0; pi < work.size(); ++pi) {
    const Tensor4 analytic = grads.of(ids[pi]);
    Tensor4& value = work[pi].value;
    ParamError err{work[pi].name, 0.0, 0, 0};
    for (std::size_t i : probe_indices(value.size(), opts.max_entries, rng)) {
      const double saved = value[i];
      value[i] = saved + step;
      const double plus = evaluate(loss, work);
      value[i] = saved - step;
      const double minus = evaluate(loss, work);
      value[i] = saved;
      ++err.checked;
      if (opts.resolve_tolerance > 0.0) {
        const double fwd = (plus - base) / step;
        const double bwd = (base - minus) / step;
        const double scale = std::max({std::abs(fwd), std::abs(bwd), 1e-8});
        if (std::abs(fwd - bwd) > opts.resolve_tolerance * scale) {
          ++err.unresolved;
          continue;
        }
      }
      const double numeric = (plus - minus) / (2.0 * step);
      err.max_rel_error =
          std::max(err.max_rel_error, relative_error(analytic[i], numeric));
    }
    report.params.push_back(std::move(err));
  }
  return report;
}

}  // namespace r2seg
