#pragma once

// Checks shared by the unit tests and the acceptance runner. Each returns a
// measured quantity so callers can print it next to the verdict.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "r2seg/blocks.hpp"
#include "r2seg/metrics.hpp"
#include "r2seg/models.hpp"
#include "r2seg/nnops.hpp"

namespace criteria {

using namespace r2seg;

// Largest |conv2d - naive| over every input shape up to 2x4x9x9, both
// paddings, strides 1 and 2, one and three output channels.
inline double conv_oracle_sweep(std::uint64_t seed = 1) {
  double worst = 0.0;
  std::uint64_t stream = 0;
  for (std::size_t n = 1; n <= 2; ++n)
    for (std::size_t c = 1; c <= 4; ++c)
      for (std::size_t h = 1; h <= 9; ++h)
        for (std::size_t w = 1; w <= 9; ++w)
          for (std::size_t co : {1, 3})
            for (Padding pad : {Padding::same, Padding::valid})
              for (std::size_t stride : {1, 2}) {
                if (pad == Padding::valid && (h < 3 || w < 3)) continue;
                const Tensor4 x =
                    uniform(Shape4{n, c, h, w}, -1, 1, mix_seed(seed, ++stream));
                const Tensor4 k = uniform(Shape4{co, c, 3, 3}, -1, 1,
                                          mix_seed(seed, ++stream));
                const Tensor4 b = uniform(Shape4{1, co, 1, 1}, -1, 1,
                                          mix_seed(seed, ++stream));
                const Tensor4 got = conv2d(x, k, b, ConvOptions{pad, stride});
                const Tensor4 want = oracle::conv(
                    x, k, b, pad == Padding::same ? 1 : 0, long(stride));
                if (got.shape() != want.shape()) return INFINITY;
                worst = std::max(worst, oracle::max_abs_diff(got, want));
              }
  return worst;
}

// Largest |rcl(w_r = 0) - relu(conv(x, w_f) + b)| over t = 0..3.
inline double rcl_collapse_error(std::uint64_t seed = 2) {
  double worst = 0.0;
  for (int t = 0; t <= 3; ++t) {
    const Tensor4 x = uniform(Shape4{2, 3, 7, 6}, -1, 1, mix_seed(seed, 1));
    RclParams p{he_init(Shape4{4, 3, 3, 3}, 27, mix_seed(seed, 2)),
                zeros(Shape4{4, 4, 3, 3}),
                uniform(Shape4{1, 4, 1, 1}, -1, 1, mix_seed(seed, 3)), t};
    const Tensor4 want = relu(conv2d(x, p.w_f, p.b));
    worst = std::max(worst, oracle::max_abs_diff(rcl_forward(x, p), want));
  }
  return worst;
}

// A residual or dense-R2 block whose branch output stage is zeroed, with
// c_in == c_out, must return its input. Returns the largest deviation.
inline double zero_branch_identity_error(std::uint64_t seed = 3) {
  double worst = 0.0;
  for (BlockKind kind : {BlockKind::residual, BlockKind::dense_r2}) {
    BlockSpec spec;
    spec.kind = kind;
    spec.c_in = spec.c_out = 4;
    ParamStore store;
    declare_block(spec, "b", store, seed);
    // Randomise everything, then zero the stage that emits the branch.
    for (auto& e : store.entries()) {
      e.value = uniform(e.value.shape(), -1, 1, mix_seed(seed, store.index_of(e.name)));
    }
    const std::string last = kind == BlockKind::residual ? "b.conv2" : "b.compress";
    store.get(last + ".w") = zeros(store.get(last + ".w").shape());
    store.get(last + ".b") = zeros(store.get(last + ".b").shape());

    const Tensor4 xv = uniform(Shape4{2, 4, 8, 8}, -1, 1, mix_seed(seed, 99));
    Tape tape;
    const BoundParams bound(tape, store, false);
    const VarId y = block_forward(tape, tape.constant(xv), spec, "b", bound,
                                  Mode::eval, 0);
    worst = std::max(worst, oracle::max_abs_diff(tape.value(y), xv));
  }
  return worst;
}

struct CausalityResult {
  bool later_unit_invisible = false;  // unit 1 never sees unit 2
  bool x_slice_isolation = false;     // x-only unit 2 ignores unit 1
  bool compress_width = false;        // c_in + 2 * growth into compression
  bool gradient_probe = false;        // no gradient from out_1 into unit 2
  bool all() const {
    return later_unit_invisible && x_slice_isolation && compress_width &&
           gradient_probe;
  }
};

// Zero-slice probes on a two-unit dense chain.
inline CausalityResult dense_causality(std::uint64_t seed = 4) {
  const std::size_t c_in = 3, g = 2, c_out = 5;
  const Tensor4 xv = uniform(Shape4{1, c_in, 6, 6}, -1, 1, mix_seed(seed, 0));
  auto rcl = [&](std::size_t ci, std::uint64_t s) {
    return RclParams{uniform(Shape4{g, ci, 3, 3}, -0.5, 0.5, mix_seed(s, 1)),
                     uniform(Shape4{g, g, 3, 3}, -0.5, 0.5, mix_seed(s, 2)),
                     uniform(Shape4{1, g, 1, 1}, -0.5, 0.5, mix_seed(s, 3)), 2};
  };
  // Compression reading only the channels in [lo, hi) of the concatenation.
  auto selector = [&](std::size_t lo, std::size_t hi) {
    Tensor4 w(Shape4{c_out, c_in + 2 * g, 1, 1});
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t c = lo; c < hi; ++c) w.at(o, c, 0, 0) = 0.3 + 0.1 * double(o + c);
    return w;
  };
  auto run = [&](const RclParams& u1, const RclParams& u2, const Tensor4& cw,
                 bool want_grads, double* u2_grad_norm) {
    Tape tape;
    const VarId x = tape.constant(xv);
    auto bind = [&](const RclParams& p) {
      return RclVars{tape.leaf(p.w_f, want_grads), tape.leaf(p.w_r, want_grads),
                     tape.leaf(p.b, want_grads), p.t};
    };
    const RclVars v1 = bind(u1), v2 = bind(u2);
    const ConvVars comp{tape.constant(cw), tape.constant(zeros(Shape4{1, c_out, 1, 1}))};
    const VarId y = dense_rcl_forward(tape, x, {v1, v2}, comp);
    if (want_grads) {
      const Gradients gr = backward(tape, sum(tape, y));
      double norm = 0.0;
      for (VarId id : {v2.w_f, v2.w_r, v2.b}) {
        if (!gr.reached(id)) continue;
        const Tensor4 d = gr.of(id);
        norm += oracle::dot(d, d);
      }
      *u2_grad_norm = norm;
    }
    return tape.value(y);
  };

  CausalityResult r;
  const RclParams a1 = rcl(c_in, mix_seed(seed, 10));
  const RclParams a2 = rcl(c_in + g, mix_seed(seed, 20));
  const RclParams b2 = rcl(c_in + g, mix_seed(seed, 30));

  // Compression sees x and out_1 only: changing unit 2 changes nothing.
  const Tensor4 early = selector(0, c_in + g);
  r.later_unit_invisible = run(a1, a2, early, false, nullptr) ==
                           run(a1, b2, early, false, nullptr);

  // Unit 2 reads only the x slice and compression sees only out_2: the
  // output is independent of unit 1.
  RclParams x_only = a2;
  for (std::size_t o = 0; o < g; ++o)
    for (std::size_t c = c_in; c < c_in + g; ++c)
      for (std::size_t i = 0; i < 9; ++i) x_only.w_f.at(o, c, i / 3, i % 3) = 0.0;
  const Tensor4 late = selector(c_in + g, c_in + 2 * g);
  r.x_slice_isolation =
      run(a1, x_only, late, false, nullptr) ==
      run(rcl(c_in, mix_seed(seed, 40)), x_only, late, false, nullptr);

  // The compression conv must accept exactly c_in + 2g channels.
  bool wide_ok = true, narrow_rejected = false;
  try {
    run(a1, a2, selector(0, 1), false, nullptr);
  } catch (...) {
    wide_ok = false;
  }
  try {
    Tensor4 narrow(Shape4{c_out, c_in + g, 1, 1}, 0.1);
    run(a1, a2, narrow, false, nullptr);
  } catch (const ShapeError&) {
    narrow_rejected = true;
  }
  r.compress_width = wide_ok && narrow_rejected;

  double norm = -1.0;
  run(a1, a2, early, true, &norm);
  r.gradient_probe = norm == 0.0;
  return r;
}

// metrics_from_counts against hand-coded rationals on fuzzed counts.
// Returns the number of mismatching values.
inline std::size_t metrics_fuzz_mismatches(std::size_t cases,
                                           std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> big(0, 5000);
  std::uniform_int_distribution<int> zero_mask(0, 15);
  auto q = [](std::uint64_t num, std::uint64_t den) {
    return double(num) / double(den);
  };
  std::size_t bad = 0;
  for (std::size_t i = 0; i < cases; ++i) {
    // Some counts are forced to zero to reach the empty-denominator rules.
    const int zm = zero_mask(rng);
    ConfusionCounts c{(zm & 1) ? 0 : big(rng), (zm & 2) ? 0 : big(rng),
                      (zm & 4) ? 0 : big(rng), (zm & 8) ? 0 : big(rng)};
    if (i < 16) c = ConfusionCounts{std::uint64_t(i & 1), std::uint64_t(i >> 1 & 1),
                                    std::uint64_t(i >> 2 & 1), std::uint64_t(i >> 3 & 1)};
    const MetricValues m = metrics_from_counts(c);
    const auto [tp, tn, fp, fn] = std::array{c.tp, c.tn, c.fp, c.fn};
    const double dsc = tp + fp + fn == 0 ? 1.0 : q(2 * tp, 2 * tp + fp + fn);
    const double js = tp + fp + fn == 0 ? 1.0 : q(tp, tp + fp + fn);
    const double prec = tp + fp == 0 ? (fn == 0 ? 1.0 : 0.0) : q(tp, tp + fp);
    const double rec = tp + fn == 0 ? (fp == 0 ? 1.0 : 0.0) : q(tp, tp + fn);
    const double spec = tn + fp == 0 ? (fn == 0 ? 1.0 : 0.0) : q(tn, tn + fp);
    const double acc = tp + tn + fp + fn == 0 ? 1.0 : q(tp + tn, tp + tn + fp + fn);
    const std::array<double, 7> want{dsc, js, prec, rec, rec, spec, acc};
    for (std::size_t k = 0; k < want.size(); ++k) bad += m[k] != want[k];
    // Jaccard and Dice are tied by js = dsc / (2 - dsc).
    bad += std::abs(m[1] - m[0] / (2.0 - m[0])) > 1e-15;
  }
  return bad;
}

// Random labels with both classes present.
inline std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n) {
  std::bernoulli_distribution coin(0.5);
  std::vector<int> labels(n);
  do {
    for (int& l : labels) l = coin(rng);
  } while (std::count(labels.begin(), labels.end(), 1) == 0 ||
           std::count(labels.begin(), labels.end(), 0) == 0);
  return labels;
}

inline double auc_of(const std::vector<double>& scores,
                     const std::vector<int>& labels) {
  Tensor4 p(Shape4{1, 1, 1, scores.size()}), g(p.shape());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = scores[i];
    g[i] = labels[i];
  }
  return auc(p, g).value;
}

// auc against the Mann-Whitney oracle on 20-pixel cases with 8-bit scores
// (k / 256). Returns the largest absolute difference.
inline double auc_fuzz_max_error(std::size_t cases, std::uint64_t seed = 6) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 256);
  double worst = 0.0;
  for (std::size_t i = 0; i < cases; ++i) {
    const auto labels = random_labels(rng, 20);
    std::vector<double> scores(20);
    for (double& s : scores) s = level(rng) / 256.0;
    worst = std::max(worst, std::abs(auc_of(scores, labels) -
                                     oracle::mann_whitney_auc(scores, labels)));
  }
  return worst;
}

struct ShapeFuzz {
  std::size_t cases = 0, failures = 0;
  std::string first_failure;
};

// Output shape equals input shape for every variant, depth 2..4 and size
// 32/64/128, with a random batch size and seed per case.
inline ShapeFuzz structural_fuzz(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  ShapeFuzz r;
  for (Variant v : {Variant::unet, Variant::resunet, Variant::dense_r2unet})
    for (std::size_t depth = 2; depth <= 4; ++depth)
      for (std::size_t size : {32, 64, 128}) {
        ModelConfig cfg;
        cfg.variant = v;
        cfg.depth = depth;
        cfg.base_width = 2;
        cfg.input_h = cfg.input_w = size;
        cfg.seed = rng();
        const std::size_t n = 1 + rng() % 2;
        const Tensor4 x = uniform(Shape4{n, 1, size, size}, 0, 1, rng());
        const Tensor4 y = predict(build(cfg), x);
        ++r.cases;
        if (y.shape() != x.shape()) {
          ++r.failures;
          if (r.first_failure.empty()) {
            r.first_failure = std::string(to_string(v)) + " depth " +
                              std::to_string(depth) + " size " +
                              std::to_string(size) + " -> " +
                              to_string(y.shape());
          }
        }
      }
  return r;
}

}  // namespace criteria
